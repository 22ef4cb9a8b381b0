"""Contraction operators, GP and BBGKY residuals, Sobolev norms of density kernels.

Delta functions in the contraction operators are never discretized as ``1/dx``
spikes: each delta pairs with one integral, so ``B^+_j`` is evaluation of the
kernel with the contracted coordinates set to ``x_j`` (``x'_j`` for ``B^-``).
"""
from __future__ import annotations

import itertools
import math
import string
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .kernels import DensityKernel, ProductKernel, as_dense, factorized_density, product_tensor
from .lattice import Grid, fourier_multiply, laplacian_apply
from .manybody import ManyBodyTrajectory, PotentialSpec, ScalingParams, _tuple_field, marginal
from .nls import NonlinearityCoefficients, Trajectory, WaveField

SIGNS = ("plus", "minus", "full")
KERNEL_CAP = 2**24

Kernel = DensityKernel | ProductKernel


def _levels(gamma: Kernel) -> int:
    return gamma.k


def _flat(gamma: DensityKernel) -> tuple[np.ndarray, int]:
    M = gamma.grid.n**gamma.grid.d
    return gamma.values.reshape((M,) * (2 * gamma.k)), M


def _unflat(grid: Grid, k: int, arr: np.ndarray) -> DensityKernel:
    return DensityKernel(grid, k, np.ascontiguousarray(arr).reshape((grid.n,) * (2 * k * grid.d)))


def _check_contract(K: int, j: int, p: int) -> int:
    if p < 1 or p >= K:
        raise ValueError(f"cannot contract p={p} pairs out of a {K}-particle kernel")
    k = K - p
    if not 1 <= j <= k:
        raise ValueError(f"j={j} out of range 1..{k}")
    return k


def _collapse(gamma: DensityKernel, j: int, p: int, primed: bool) -> np.ndarray:
    K = gamma.k
    k = K - p
    v, _ = _flat(gamma)
    letters = string.ascii_letters
    unprimed = [letters[i] for i in range(K)]
    prim = [letters[K + i] for i in range(K)]
    target = prim[j - 1] if primed else unprimed[j - 1]
    for m in range(k, K):
        unprimed[m] = target
        prim[m] = target
    spec = "".join(unprimed + prim) + "->" + "".join(unprimed[:k] + prim[:k])
    return np.einsum(spec, v)


def contract(gamma: Kernel, j: int, p: int, sign: str = "full") -> DensityKernel:
    """``B_{j;k+1..k+p}`` acting on a ``(k+p)``-particle kernel (1-based ``j``).

    ``sign`` selects ``B^+`` ("plus"), ``B^-`` ("minus") or ``B^+ - B^-`` ("full").
    """
    if sign not in SIGNS:
        raise ValueError(f"sign must be one of {SIGNS}")
    k = _check_contract(_levels(gamma), j, p)
    g = gamma.grid
    if isinstance(gamma, ProductKernel):
        w = np.abs(gamma.phi.values) ** (2 * p)
        base = product_tensor(gamma.phi.values, k)
        plus = base * _on_group(g, w, j - 1, 2 * k)
        minus = base * _on_group(g, w, k + j - 1, 2 * k)
        return DensityKernel(g, k, {"plus": plus, "minus": minus, "full": plus - minus}[sign])
    if sign == "plus":
        res = _collapse(gamma, j, p, False)
    elif sign == "minus":
        res = _collapse(gamma, j, p, True)
    else:
        res = _collapse(gamma, j, p, False) - _collapse(gamma, j, p, True)
    return _unflat(g, k, res)


def _on_group(grid: Grid, arr: np.ndarray, group: int, ngroups: int) -> np.ndarray:
    shape = [1] * (ngroups * grid.d)
    for c in range(grid.d):
        shape[group * grid.d + c] = grid.n
    return arr.reshape(shape)


def contract_sum(gamma: Kernel, p: int) -> DensityKernel:
    """``sum_j B_{j;k+1..k+p} gamma``."""
    k = _levels(gamma) - p
    out = contract(gamma, 1, p)
    for j in range(2, k + 1):
        out = out + contract(gamma, j, p)
    return out


def free_kinetic(gamma: DensityKernel) -> DensityKernel:
    """``sum_j (-Delta_{x_j} + Delta_{x'_j}) gamma``."""
    k = gamma.k
    v = -laplacian_apply(gamma.values, gamma.grid, range(k)) + laplacian_apply(
        gamma.values, gamma.grid, range(k, 2 * k)
    )
    return DensityKernel(gamma.grid, k, v)


# ---------------------------------------------------------------- GP hierarchy


def gp_rhs(
    gamma_k: DensityKernel,
    higher: Mapping[int, Kernel],
    coeffs: NonlinearityCoefficients,
    b_sign: float = 1.0,
) -> DensityKernel:
    """Right side of the GP hierarchy at level k; ``higher[p]`` is the ``k+p`` level."""
    out = free_kinetic(gamma_k)
    for p, bp in enumerate(coeffs.b, start=1):
        if bp == 0:
            continue
        if p not in higher:
            raise ValueError(f"missing level k+{p}")
        out = out + contract_sum(higher[p], p).scaled(b_sign * bp)
    return out


def gp_residual(
    traj: Trajectory,
    k: int,
    t_index: int,
    coeffs: NonlinearityCoefficients | None = None,
    dt: float | None = None,
    b_sign: float = 1.0,
    lazy: bool = True,
) -> float:
    """``|| i d/dt gamma^(k) - RHS ||_L2`` for factorized kernels built from an NLS trajectory.

    The time derivative is the centered difference over samples ``t_index +- 1``.
    """
    if not 1 <= t_index <= len(traj) - 2:
        raise ValueError("need samples on both sides of t_index")
    coeffs = traj.coeffs if coeffs is None else coeffs
    dt = traj.sample_dt if dt is None else dt
    fields = [traj.field(t_index + s) for s in (-1, 0, 1)]
    gm, g0, gp = (factorized_density(f, k) for f in fields)
    higher = {
        p: factorized_density(fields[1], k + p, lazy=lazy) for p, bp in enumerate(coeffs.b, start=1) if bp
    }
    lhs = (gp - gm).scaled(1j / (2 * dt))
    return (lhs - gp_rhs(g0, higher, coeffs, b_sign)).norm()


# ------------------------------------------------------------- BBGKY hierarchy


def bbgky_prefactor(N: int, k: int, m: int, p: int) -> float:
    """Weight of the terms with ``m`` of the ``p+1`` interacting particles outside ``1..k``.

    Each unordered choice of the outside particles gives the same partial trace
    by bosonic symmetry, hence ``C(N-k, m) / N^p``.  For ``m = 1`` this is the
    familiar ``(N-k)/N^p``.
    """
    return math.comb(N - k, m) / float(N) ** p


def _potential_on(spec: PotentialSpec, scaling: ScalingParams, grid: Grid, tup: Sequence[int], nparticles: int):
    f = _tuple_field(spec, scaling, grid, list(tup), nparticles)
    return np.broadcast_to(f, (grid.n,) * (nparticles * grid.d)).reshape(-1)


def bbgky_rhs(
    marginals: Mapping[int, DensityKernel],
    specs: Sequence[PotentialSpec],
    scaling: ScalingParams,
    k: int,
) -> DensityKernel:
    """Right side of the BBGKY hierarchy for ``gamma^(k)``; ``marginals[l]`` is level ``l``."""
    N = scaling.N
    if k not in marginals:
        raise ValueError(f"missing marginal level {k}")
    gk = marginals[k]
    g = gk.grid
    X = g.n ** (g.d * k)
    out = free_kinetic(gk).values.reshape(X, X)
    for spec in specs:
        p = spec.p
        # tuples entirely outside 1..k trace to zero
        for m in range(0, p + 1):
            inside = p + 1 - m
            if inside > k or k + m > N:
                continue
            pref = bbgky_prefactor(N, k, m, p)
            outside = list(range(k, k + m))
            if m == 0:
                gm = gk.values.reshape(X, X)
            else:
                if k + m not in marginals:
                    raise ValueError(f"missing marginal level {k + m}")
                Y = g.n ** (g.d * m)
                diag = np.einsum("xyzy->xyz", marginals[k + m].values.reshape(X, Y, X, Y))
            for A in itertools.combinations(range(k), inside):
                V = _potential_on(spec, scaling, g, list(A) + outside, k + m)
                if m == 0:
                    out = out + pref * (V[:, None] - V[None, :]) * gm
                else:
                    V = V.reshape(X, Y)
                    tr = np.einsum("xy,xyz->xz", V, diag) - np.einsum("zy,xyz->xz", V, diag)
                    out = out + pref * g.cell**m * tr
    return DensityKernel(g, k, out.reshape(gk.values.shape))


def bbgky_residual(
    traj: ManyBodyTrajectory,
    specs: Sequence[PotentialSpec],
    scaling: ScalingParams,
    k: int,
    t_index: int,
    dt: float | None = None,
) -> float:
    """Centered-difference check of the BBGKY hierarchy along a many-body trajectory."""
    if not 1 <= t_index <= len(traj) - 2:
        raise ValueError("need samples on both sides of t_index")
    N = traj.N
    if not 1 <= k <= N:
        raise ValueError(f"k={k} out of range")
    dt = traj.sample_dt if dt is None else dt
    p0 = max((s.p for s in specs), default=0)
    center = traj.state(t_index)
    levels = {lvl: marginal(center, lvl) for lvl in range(k, min(k + p0, N) + 1)}
    lhs = (marginal(traj.state(t_index + 1), k) - marginal(traj.state(t_index - 1), k)).scaled(1j / (2 * dt))
    return (lhs - bbgky_rhs(levels, specs, scaling, k)).norm()


# ----------------------------------------------------------------- Sobolev norms


def _bracket(grid: Grid, alpha: float) -> np.ndarray:
    return (1.0 + grid.k2) ** (0.5 * alpha)


def sobolev_norm(gamma: Kernel, alpha: float) -> float:
    """``|| S^(k,alpha) gamma ||_L2`` with weights ``<xi_j>^alpha <xi'_j>^alpha``."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    g = gamma.grid
    w = _bracket(g, alpha)
    if isinstance(gamma, ProductKernel):
        one = g.norm(fourier_multiply(gamma.phi.values, g, [w]))
        return one ** (2 * gamma.k)
    return g.norm(fourier_multiply(gamma.values, g, [w] * (2 * gamma.k)))


@dataclass(frozen=True)
class BoundRecord:
    alpha: float
    lhs: float
    rhs: float
    ratio: float | None

    @property
    def defined(self) -> bool:
        return self.ratio is not None


def bound_report(gamma: Kernel, j: int, p: int, alpha: float) -> BoundRecord:
    """``(|| S^(k,a) B_j gamma ||, || S^(k+p,a) gamma ||)`` and their ratio.

    A vanishing right side is reported with ``ratio=None`` rather than NaN.
    """
    if isinstance(gamma, DensityKernel) and gamma.values.size > KERNEL_CAP:
        raise ValueError(f"kernel with {gamma.values.size} entries exceeds cap {KERNEL_CAP}")
    lhs = sobolev_norm(contract(gamma, j, p), alpha)
    rhs = sobolev_norm(gamma, alpha)
    return BoundRecord(alpha, lhs, rhs, lhs / rhs if rhs > 0 else None)


# ---------------------------------------------------------------- mollifiers


def gaussian_profile(y: np.ndarray) -> np.ndarray:
    """Standard normal density on ``R^d``; ``y`` has the coordinate on the last axis."""
    d = y.shape[-1]
    return (2 * np.pi) ** (-d / 2) * np.exp(-0.5 * np.sum(y**2, axis=-1))


def mollifier_matrix(grid: Grid, eps: float, h: Callable[[np.ndarray], np.ndarray] = gaussian_profile) -> np.ndarray:
    """``H[a, b] = h_eps(x_a - x_b)`` on flattened one-particle points.

    ``h`` must integrate to 1; a profile off by more than 1% is rejected.
    """
    if eps < 2 * grid.dx:
        raise ValueError(f"eps={eps} below resolution 2*dx={2 * grid.dx}")
    pts = np.stack([m.reshape(-1) for m in grid.mesh()], axis=-1)
    diff = grid.minimum_image(pts[:, None, :] - pts[None, :, :])
    H = eps ** (-grid.d) * h(diff / eps)
    if np.any(H < 0):
        raise ValueError("mollifier profile must be non-negative")
    mass = H[0].sum() * grid.cell
    if abs(mass - 1) > 1e-2:
        raise ValueError(f"mollifier profile is not normalized (grid mass {mass})")
    # quadrature error at small eps is removed so B^eps of a constant is exact
    return H / mass


def mollified_contract(
    gamma: Kernel,
    j: int,
    p: int,
    eps: float,
    h: Callable[[np.ndarray], np.ndarray] = gaussian_profile,
    sign: str = "plus",
) -> DensityKernel:
    """Contraction with each delta pair replaced by ``h_eps(x_j - y) h_eps(x_j - y')``."""
    if sign not in SIGNS:
        raise ValueError(f"sign must be one of {SIGNS}")
    K = _levels(gamma)
    k = _check_contract(K, j, p)
    g = gamma.grid
    H = mollifier_matrix(g, eps, h)
    if sign == "full":
        return mollified_contract(gamma, j, p, eps, h, "plus") - mollified_contract(gamma, j, p, eps, h, "minus")
    target = j - 1 if sign == "plus" else k + j - 1
    if isinstance(gamma, ProductKernel):
        sm = (H @ gamma.phi.values.reshape(-1)) * g.cell
        w = (np.abs(sm) ** (2 * p)).reshape(g.shape)
        base = product_tensor(gamma.phi.values, k)
        return DensityKernel(g, k, base * _on_group(g, w, target, 2 * k))
    v, _ = _flat(as_dense(gamma))
    L = string.ascii_letters
    for _ in range(p):
        K_now = v.ndim // 2
        sub = [L[i] for i in range(2 * K_now)]
        t = sub[target if target < k else target - k + K_now]
        y, yp = sub[K_now - 1], sub[2 * K_now - 1]
        out = [s for s in sub if s not in (y, yp)]
        v = np.einsum(f"{''.join(sub)},{t}{y},{t}{yp}->{''.join(out)}", v, H, H) * g.cell**2
    return _unflat(g, k, v)


@dataclass(frozen=True)
class RateFit:
    eps: tuple[float, ...]
    errors: tuple[float, ...]
    slope: float
    kappa: float

    @property
    def passed(self) -> bool:
        return self.slope >= self.kappa


def mollifier_rate(
    gamma: Kernel,
    eps_list: Sequence[float],
    kappa: float = 0.5,
    j: int = 1,
    p: int | None = None,
    J: np.ndarray | None = None,
    h: Callable[[np.ndarray], np.ndarray] = gaussian_profile,
) -> RateFit:
    """Fit ``log err = slope * log eps + c`` for the mollified contraction error.

    The error is ``|Tr J (B^eps - B) gamma|`` when an observable ``J`` (matrix on
    ``l^2(Grid^k)``) is given, otherwise the L2 norm of the kernel difference.
    """
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps list must be strictly decreasing")
    p = _levels(gamma) - 1 if p is None else p
    exact = contract(gamma, j, p, "plus")
    errs = []
    for e in eps_list:
        diff = mollified_contract(gamma, j, p, e, h, "plus") - exact
        if J is None:
            errs.append(diff.norm())
        else:
            errs.append(abs(np.trace(J @ diff.matrix())))
    slope = float(np.polyfit(np.log(eps_list), np.log(errs), 1)[0])
    return RateFit(tuple(eps_list), tuple(float(e) for e in errs), slope, kappa)
