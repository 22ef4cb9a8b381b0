"""Finite-N bosonic Schrödinger dynamics with rescaled (p+1)-body potentials.

The Hamiltonian is

    H_N = sum_i (-Delta_i) + sum_p N^-p sum_{i_1<..<i_{p+1}} V_N^(p)(x_{i_1}-x_{i_2}, .., x_{i_1}-x_{i_{p+1}})

with ``V_N^(p)(y) = N^(p d beta) V^(p)(N^beta y)``.  All coordinate differences
use the periodic minimum image.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import integrate

from .kernels import DensityKernel, partial_trace, trace_distance  # noqa: F401  (re-exported)
from .lattice import Grid, fourier_multiply, free_propagate, laplacian_apply
from .nls import WaveField

log = logging.getLogger(__name__)

DEFAULT_MEMORY_CAP = 2**24
DENSE_CAP = 4096


def pair_form(y: np.ndarray, d: int) -> np.ndarray:
    """``sum_{a<b} |x_a - x_b|^2`` in terms of ``y_i = x_1 - x_{i+1}`` (last axis of length ``p*d``).

    This quadratic form is invariant under every permutation of the ``p+1``
    particles, which keeps the Hamiltonian bosonic.
    """
    y = np.asarray(y, dtype=float)
    p = y.shape[-1] // d
    ys = [y[..., i * d : (i + 1) * d] for i in range(p)]
    out = sum(np.sum(v**2, axis=-1) for v in ys)
    for i in range(p):
        for j in range(i + 1, p):
            out = out + np.sum((ys[i] - ys[j]) ** 2, axis=-1)
    return out


@dataclass(frozen=True)
class PotentialSpec:
    """Non-negative, permutation-symmetric (p+1)-body profile ``V^(p)`` on ``R^(p d)``.

    With ``r^2 = pair_form(y) / width^2``:
    ``gaussian`` is ``height * exp(-r^2 / 2)``;
    ``bump`` is ``height * exp(-1 / (1 - r^2))`` on ``r < 1`` and 0 outside.
    For ``p = 1`` the form is just ``|y|^2``.
    """

    p: int
    d: int = 1
    shape: str = "gaussian"
    width: float = 1.0
    height: float = 1.0

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("interaction order p must be >= 1")
        if self.d not in (1, 2):
            raise ValueError("d must be 1 or 2")
        if self.shape not in ("gaussian", "bump"):
            raise ValueError(f"unknown potential shape {self.shape!r}")
        if not (self.width > 0 and self.height > 0 and math.isfinite(self.width * self.height)):
            raise ValueError("width and height must be positive and finite")

    def _radial(self, r2: np.ndarray) -> np.ndarray:
        if self.shape == "gaussian":
            return np.exp(-0.5 * r2)
        out = np.zeros_like(r2)
        inside = r2 < 1
        out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
        return out

    def of_form(self, q: np.ndarray) -> np.ndarray:
        """Profile as a function of the pair form ``q = sum_{a<b} |x_a - x_b|^2``."""
        return self.height * self._radial(np.asarray(q / self.width**2, dtype=float))

    def __call__(self, y: np.ndarray) -> np.ndarray:
        """Evaluate on difference coordinates, last axis of length ``p*d``."""
        return self.of_form(pair_form(y, self.d))

    @cached_property
    def b0(self) -> float:
        """``int V^(p)`` over ``R^(p d)`` by one radial quadrature.

        The form has determinant ``(p+1)^((p-1) d)``, so the integral is
        ``height * width^D (p+1)^(-(p-1) d/2) |S^(D-1)| int_0^inf f(r) r^(D-1) dr``.
        """
        D = self.p * self.d
        sphere = 2 * math.pi ** (D / 2) / math.gamma(D / 2)
        upper = np.inf if self.shape == "gaussian" else 1.0
        radial, _ = integrate.quad(lambda r: float(self._radial(np.array(r * r))) * r ** (D - 1), 0.0, upper)
        det = (self.p + 1) ** ((self.p - 1) * self.d)
        return self.height * self.width**D * sphere * radial / math.sqrt(det)


@dataclass(frozen=True)
class ScalingParams:
    N: int
    beta: float

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("particle number must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")

    @property
    def factor(self) -> float:
        """``N^beta``, the inverse length scale of the rescaled potential."""
        return float(self.N) ** self.beta

    def check(self, d: int, p0: int, grid: Grid | None = None, width: float = 1.0) -> None:
        """Admissible range ``0 < beta < 1/(2 d p0 + 2)`` and the resolution guard."""
        upper = 1.0 / (2 * d * p0 + 2)
        if not 0 < self.beta < upper:
            raise ValueError(f"beta={self.beta} outside (0, {upper}) for d={d}, p0={p0}")
        if grid is not None and self.factor * grid.dx > width:
            raise ValueError(
                f"scaled potential under-resolved: N^beta*dx={self.factor * grid.dx:.3g} > width={width}"
            )


def resolution_ok(specs: Sequence[PotentialSpec], scaling: ScalingParams, grid: Grid) -> bool:
    ok = all(scaling.factor * grid.dx <= s.width for s in specs)
    if not ok:
        log.warning("N=%d beta=%g: scaled potential narrower than one grid cell", scaling.N, scaling.beta)
    return ok


def _coord(grid: Grid, particle: int, axis: int, nparticles: int) -> np.ndarray:
    shape = [1] * (nparticles * grid.d)
    shape[particle * grid.d + axis] = grid.n
    return grid.x.reshape(shape)


def _tuple_field(spec: PotentialSpec, scaling: ScalingParams, grid: Grid, tup: Sequence[int], nparticles: int):
    """Broadcastable (not materialized) ``V_N`` for a 0-based particle tuple.

    Every pair difference is wrapped separately, so periodicity keeps the
    permutation symmetry of the profile.
    """
    lam = scaling.factor
    q = 0.0
    for a, b in itertools.combinations(tup, 2):
        for c in range(grid.d):
            dlt = _coord(grid, a, c, nparticles) - _coord(grid, b, c, nparticles)
            q = q + grid.minimum_image(dlt) ** 2
    return lam ** (spec.p * grid.d) * spec.of_form(lam**2 * q)


def scaled_potential_field(
    spec: PotentialSpec,
    scaling: ScalingParams,
    grid: Grid,
    particle_tuple: Sequence[int],
    nparticles: int | None = None,
) -> np.ndarray:
    """``V_N^(p)`` for a 1-based, strictly increasing tuple, as a field on ``Grid^nparticles``."""
    nparticles = scaling.N if nparticles is None else nparticles
    tup = tuple(int(i) for i in particle_tuple)
    if len(tup) != spec.p + 1:
        raise ValueError(f"order-{spec.p} potential couples {spec.p + 1} particles, got {tup}")
    if any(b <= a for a, b in zip(tup, tup[1:])) or tup[0] < 1 or tup[-1] > nparticles:
        raise ValueError(f"tuple {tup} must be strictly increasing within 1..{nparticles}")
    if spec.d != grid.d:
        raise ValueError("potential and grid dimensions differ")
    f = _tuple_field(spec, scaling, grid, [i - 1 for i in tup], nparticles)
    return np.ascontiguousarray(np.broadcast_to(f, (grid.n,) * (nparticles * grid.d)))


def total_potential(grid: Grid, N: int, specs: Sequence[PotentialSpec], scaling: ScalingParams) -> np.ndarray:
    """Diagonal interaction ``sum_p N^-p sum_tuples V_N^(p)`` on ``Grid^N``."""
    out = np.zeros((grid.n,) * (N * grid.d))
    for spec in specs:
        if spec.p + 1 > N:
            continue
        pref = float(N) ** (-spec.p)
        for tup in itertools.combinations(range(N), spec.p + 1):
            out += pref * _tuple_field(spec, scaling, grid, tup, N)
    return out


@dataclass
class ManyBodyState:
    grid: Grid
    N: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.grid.groups(self.values) != self.N:
            raise ValueError(f"state tensor does not have {self.N} particle groups")

    @classmethod
    def product(cls, phi: WaveField, N: int) -> "ManyBodyState":
        out = np.ones((), dtype=complex)
        for _ in range(N):
            out = np.multiply.outer(out, phi.values)
        return cls(phi.grid, N, out)

    def norm(self) -> float:
        return self.grid.norm(self.values)

    def symmetry_defect(self) -> float:
        """Largest relative l2 change under a transposition of particle groups."""
        base = np.linalg.norm(self.values)
        if base == 0:
            return 0.0
        worst = 0.0
        for a, b in itertools.combinations(range(self.N), 2):
            moved = swap_particles(self.values, self.grid.d, a, b)
            worst = max(worst, float(np.linalg.norm(moved - self.values) / base))
        return worst


def swap_particles(values: np.ndarray, d: int, a: int, b: int) -> np.ndarray:
    axes = list(range(values.ndim))
    for c in range(d):
        axes[a * d + c], axes[b * d + c] = axes[b * d + c], axes[a * d + c]
    return np.transpose(values, axes)


def symmetrize(values: np.ndarray, N: int, d: int) -> np.ndarray:
    acc = np.zeros_like(values, dtype=complex)
    perms = list(itertools.permutations(range(N)))
    for perm in perms:
        axes = [perm[i] * d + c for i in range(N) for c in range(d)]
        acc += np.transpose(values, axes)
    return acc / len(perms)


def random_symmetric_state(grid: Grid, N: int, rng: np.random.Generator, bandlimit: int | None = None) -> ManyBodyState:
    """Normalized random bosonic state; optionally keeps only ``|mode| <= bandlimit``."""
    shape = (grid.n,) * (N * grid.d)
    v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    if bandlimit is not None:
        keep = (np.abs(np.fft.fftfreq(grid.n, 1.0 / grid.n)) <= bandlimit).astype(float)
        mask1 = keep if grid.d == 1 else np.multiply.outer(keep, keep)
        v = fourier_multiply(v, grid, [mask1] * N)
    v = symmetrize(v, N, grid.d)
    return ManyBodyState(grid, N, v / grid.norm(v))


class ManyBodyHamiltonian:
    """Matrix-free ``H_N`` with a cached diagonal interaction."""

    def __init__(self, grid: Grid, N: int, specs: Sequence[PotentialSpec], scaling: ScalingParams):
        if scaling.N != N:
            raise ValueError(f"scaling is for N={scaling.N}, state has N={N}")
        self.grid, self.N, self.specs, self.scaling = grid, N, tuple(specs), scaling
        self.potential = total_potential(grid, N, self.specs, scaling)

    @property
    def dim(self) -> int:
        return self.grid.n ** (self.grid.d * self.N)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return -laplacian_apply(values, self.grid) + self.potential * values

    def step(self, values: np.ndarray, dt: float) -> np.ndarray:
        half = free_propagate(values, 0.5 * dt, self.grid)
        half = half * np.exp(-1j * dt * self.potential)
        return free_propagate(half, 0.5 * dt, self.grid)

    def dense(self) -> np.ndarray:
        """Dense matrix in the grid basis, assembled independently of ``apply``."""
        D = self.dim
        if D > DENSE_CAP:
            raise ValueError(f"dense Hamiltonian of dimension {D} exceeds cap {DENSE_CAP}")
        g = self.grid
        F = np.fft.fft(np.eye(g.n), axis=0) / np.sqrt(g.n)
        lap1 = (F.conj().T @ np.diag(g.wavenumbers**2) @ F).real
        one = lap1 if g.d == 1 else np.kron(lap1, np.eye(g.n)) + np.kron(np.eye(g.n), lap1)
        m = g.n**g.d
        H = np.zeros((D, D))
        for i in range(self.N):
            H += np.kron(np.kron(np.eye(m**i), one), np.eye(m ** (self.N - i - 1)))
        H += np.diag(_loop_potential(g, self.N, self.specs, self.scaling))
        return H


def _loop_potential(grid: Grid, N: int, specs, scaling) -> np.ndarray:
    """Interaction on every configuration by explicit enumeration (oracle path)."""
    lam = scaling.factor
    m = grid.n**grid.d
    pts = np.array(list(itertools.product(grid.x, repeat=grid.d)))
    out = np.zeros(m**N)
    for flat, conf in enumerate(itertools.product(range(m), repeat=N)):
        tot = 0.0
        for spec in specs:
            if spec.p + 1 > N:
                continue
            for tup in itertools.combinations(range(N), spec.p + 1):
                q = 0.0
                for i, a in enumerate(tup):
                    for b in tup[i + 1 :]:
                        q += float(np.sum(grid.minimum_image(pts[conf[a]] - pts[conf[b]]) ** 2))
                tot += float(N) ** (-spec.p) * lam ** (spec.p * grid.d) * float(spec.of_form(lam * lam * q))
        out[flat] = tot
    return out


def apply_hamiltonian(psi: ManyBodyState, specs, scaling) -> np.ndarray:
    return ManyBodyHamiltonian(psi.grid, psi.N, specs, scaling).apply(psi.values)


@dataclass
class ManyBodyTrajectory:
    grid: Grid
    N: int
    dt: float
    stride: int
    times: np.ndarray
    states: list[np.ndarray] = field(repr=False)

    @property
    def sample_dt(self) -> float:
        return self.dt * self.stride

    def __len__(self) -> int:
        return len(self.states)

    def state(self, i: int) -> ManyBodyState:
        return ManyBodyState(self.grid, self.N, self.states[i])


class MemoryCapError(ValueError):
    pass


def check_memory(grid: Grid, N: int, cap: int = DEFAULT_MEMORY_CAP) -> None:
    size = grid.n ** (N * grid.d)
    if size > cap:
        raise MemoryCapError(f"state for (N={N}, n={grid.n}, d={grid.d}) has {size} entries > cap {cap}")


def evolve_manybody(
    psi0: ManyBodyState,
    specs: Sequence[PotentialSpec],
    scaling: ScalingParams,
    T: float,
    dt: float,
    sample_every: int = 1,
    memory_cap: int = DEFAULT_MEMORY_CAP,
    hamiltonian: ManyBodyHamiltonian | None = None,
) -> ManyBodyTrajectory:
    """Strang split-step ``exp(-i H_N t) psi0``; samples every ``sample_every`` steps."""
    check_memory(psi0.grid, psi0.N, memory_cap)
    if not dt > 0:
        raise ValueError("time step must be positive")
    nsteps = round(T / dt)
    if abs(nsteps * dt - T) > 1e-9 * max(1.0, T) or nsteps % sample_every:
        raise ValueError(f"T={T} must be a whole number of sample intervals of {sample_every} x dt={dt}")
    H = hamiltonian or ManyBodyHamiltonian(psi0.grid, psi0.N, specs, scaling)
    cur = psi0.values.copy()
    states = [cur.copy()]
    for i in range(1, nsteps + 1):
        cur = H.step(cur, dt)
        if i % sample_every == 0:
            states.append(cur.copy())
    times = dt * sample_every * np.arange(len(states))
    return ManyBodyTrajectory(psi0.grid, psi0.N, dt, sample_every, times, states)


def full_density(psi: ManyBodyState) -> DensityKernel:
    return DensityKernel(psi.grid, psi.N, np.multiply.outer(psi.values, psi.values.conj()))


def marginal(psi: ManyBodyState | DensityKernel, k: int) -> DensityKernel:
    """k-particle marginal: partial trace over the last ``N - k`` particles."""
    if isinstance(psi, DensityKernel):
        return partial_trace(psi, k)
    N, g = psi.N, psi.grid
    if not 1 <= k <= N:
        raise ValueError(f"k={k} out of range 1..{N}")
    A = g.n ** (g.d * k)
    M = psi.values.reshape(A, -1)
    gam = (M @ M.conj().T) * g.cell ** (N - k)
    return DensityKernel(g, k, gam.reshape((g.n,) * (2 * k * g.d)))


def energy_moment(psi: ManyBodyState, specs, scaling, k: int) -> float:
    """``<psi, (H_N + N)^k psi>`` for k in {1, 2}."""
    if k not in (1, 2):
        raise ValueError("energy moments are available for k = 1, 2 only")
    H = ManyBodyHamiltonian(psi.grid, psi.N, specs, scaling)
    hp = H.apply(psi.values) + psi.N * psi.values
    if k == 1:
        val = psi.grid.inner(psi.values, hp)
    else:
        val = psi.grid.inner(hp, hp)
    return float(val.real)


def sobolev_product_expectation(psi: ManyBodyState, k: int) -> float:
    """``<psi, (1 - Delta_1) ... (1 - Delta_k) psi>``."""
    if not 1 <= k <= min(2, psi.N):
        raise ValueError("k must be 1 or 2 (and at most N)")
    g = psi.grid
    w = 1.0 + g.k2
    syms = [w if i < k else None for i in range(psi.N)]
    return float(g.inner(psi.values, fourier_multiply(psi.values, g, syms)).real)


def chi_cutoff(s: np.ndarray) -> np.ndarray:
    """Smooth cutoff: 1 on ``s <= 1``, 0 on ``s >= 2``.

    On ``1 < s < 2`` it is ``f(2-s) / (f(2-s) + f(s-1))`` with ``f(u) = exp(-1/u)``
    for ``u > 0`` and 0 otherwise, which is C-infinity with values in [0, 1].
    """
    s = np.asarray(s, dtype=float)

    def f(u):
        out = np.zeros_like(u)
        pos = u > 0
        out[pos] = np.exp(-1.0 / u[pos])
        return out

    a, b = f(2.0 - s), f(s - 1.0)
    return a / (a + b)


def chi_regularize(psi: ManyBodyState, specs, scaling, kappa: float) -> ManyBodyState:
    """``chi(kappa H_N / N) psi`` renormalized, by dense diagonalization."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    H = ManyBodyHamiltonian(psi.grid, psi.N, specs, scaling)
    ev, U = np.linalg.eigh(H.dense())
    coef = U.conj().T @ psi.values.reshape(-1)
    out = (U @ (chi_cutoff(kappa * ev / psi.N) * coef)).reshape(psi.values.shape)
    nrm = psi.grid.norm(out)
    if nrm == 0:
        raise ValueError("cutoff annihilated the state; decrease kappa")
    return ManyBodyState(psi.grid, psi.N, out / nrm)
