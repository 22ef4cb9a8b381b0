"""Strang split-step solver for ``i phi_t = -Delta phi + sum_p b_p |phi|^(2p) phi``."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensorio
from .lattice import Grid, free_propagate, laplacian_apply, make_grid


@dataclass(frozen=True)
class NonlinearityCoefficients:
    """``b[p-1]`` multiplies ``|phi|^(2p) phi``."""

    b: tuple[float, ...]

    def __post_init__(self):
        b = tuple(float(v) for v in self.b)
        if not b:
            raise ValueError("need at least one coefficient (use (0.0,) for the free equation)")
        if not all(math.isfinite(v) and v >= 0 for v in b):
            raise ValueError(f"coefficients must be finite and non-negative, got {b}")
        object.__setattr__(self, "b", b)

    @property
    def p0(self) -> int:
        return len(self.b)

    @classmethod
    def of(cls, *b: float) -> "NonlinearityCoefficients":
        return cls(tuple(b))

    def potential(self, rho: np.ndarray) -> np.ndarray:
        """``sum_p b_p rho^p`` for ``rho = |phi|^2``."""
        out = np.zeros_like(rho)
        for p, bp in enumerate(self.b, start=1):
            if bp:
                out = out + bp * rho**p
        return out


@dataclass
class WaveField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.grid.groups(self.values) != 1:
            raise ValueError("a wave field has exactly one particle group")

    def norm(self) -> float:
        return self.grid.norm(self.values)

    def normalized(self) -> "WaveField":
        nrm = self.norm()
        if nrm == 0:
            raise ValueError("cannot normalize the zero field")
        return WaveField(self.grid, self.values / nrm)


@dataclass
class Trajectory:
    """Samples ``states[i]`` at ``times[i]``; consecutive samples are ``sample_dt`` apart."""

    grid: Grid
    coeffs: NonlinearityCoefficients
    dt: float
    stride: int
    times: np.ndarray
    states: list[np.ndarray] = field(repr=False)

    @property
    def sample_dt(self) -> float:
        return self.dt * self.stride

    def __len__(self) -> int:
        return len(self.states)

    def field(self, i: int) -> WaveField:
        return WaveField(self.grid, self.states[i])


def _check_finite(values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise ValueError("field contains non-finite values")


def strang_step(values: np.ndarray, grid: Grid, coeffs: NonlinearityCoefficients, dt: float) -> np.ndarray:
    """One symmetric step; ``dt`` may be negative (exact time reversal of a forward step)."""
    half = free_propagate(values, 0.5 * dt, grid)
    rho = np.abs(half) ** 2
    half = half * np.exp(-1j * dt * coeffs.potential(rho))
    return free_propagate(half, 0.5 * dt, grid)


def _n_steps(span: float, dt: float, what: str) -> int:
    n = round(span / dt)
    if abs(n * dt - span) > 1e-9 * max(1.0, abs(span)):
        raise ValueError(f"dt={dt} does not divide {what}={span}")
    return int(n)


def nls_evolve(
    phi0: WaveField,
    coeffs: NonlinearityCoefficients,
    T: float,
    dt: float,
    sample_every: float | None = None,
) -> Trajectory:
    """Evolve to time ``T`` and return samples every ``sample_every`` (default: every step)."""
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    if T < 0:
        raise ValueError(f"final time must be non-negative, got {T}")
    _check_finite(phi0.values)
    stride = 1 if sample_every is None else _n_steps(sample_every, dt, "sample interval")
    if stride < 1:
        raise ValueError("sample interval must be at least one step")
    nsteps = _n_steps(T, dt, "T")
    if nsteps % stride:
        raise ValueError("sample interval must divide T")
    grid = phi0.grid
    cur = phi0.values.copy()
    states = [cur.copy()]
    for i in range(1, nsteps + 1):
        cur = strang_step(cur, grid, coeffs, dt)
        if i % stride == 0:
            states.append(cur.copy())
    times = dt * stride * np.arange(len(states))
    return Trajectory(grid, coeffs, dt, stride, times, states)


def evolve_to_times(
    phi0: WaveField, coeffs: NonlinearityCoefficients, times: Sequence[float], dt: float
) -> list[np.ndarray]:
    """Fields at arbitrary non-negative times using steps of at most ``dt``.

    Each requested time is reached from the previous one with equal sub-steps,
    so the result does not depend on how the times align with ``dt``.
    """
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    order = np.argsort(times, kind="stable")
    out: list[np.ndarray | None] = [None] * len(times)
    cur, now = phi0.values.copy(), 0.0
    for idx in order:
        t = float(times[idx])
        if t < 0:
            raise ValueError("times must be non-negative")
        span = t - now
        if span > 0:
            m = max(1, math.ceil(span / dt - 1e-12))
            h = span / m
            for _ in range(m):
                cur = strang_step(cur, phi0.grid, coeffs, h)
            now = t
        out[idx] = cur.copy()
    return out  # type: ignore[return-value]


def mass(phi: WaveField) -> float:
    return float(np.sum(np.abs(phi.values) ** 2) * phi.grid.cell)


def energy(phi: WaveField, coeffs: NonlinearityCoefficients) -> float:
    """``int |grad phi|^2 + sum_p b_p/(p+1) |phi|^(2p+2)``."""
    g = phi.grid
    kinetic = -np.vdot(phi.values, laplacian_apply(phi.values, g)).real * g.cell
    rho = np.abs(phi.values) ** 2
    pot = sum(bp / (p + 1) * np.sum(rho ** (p + 1)) for p, bp in enumerate(coeffs.b, start=1))
    return float(kinetic + pot * g.cell)


def plane_wave(grid: Grid, mode: Sequence[int] | int = 1, amplitude: float | None = None) -> WaveField:
    """``A exp(i xi.x)`` for the integer Fourier mode ``mode``; unit mass by default."""
    modes = (mode,) * grid.d if isinstance(mode, int) else tuple(mode)
    xi = [2 * np.pi * m / grid.L for m in modes]
    phase = sum(k * x for k, x in zip(xi, grid.mesh()))
    A = grid.L ** (-grid.d / 2) if amplitude is None else amplitude
    return WaveField(grid, A * np.exp(1j * phase))


def gaussian_packet(grid: Grid, width: float = 1.0, center: float = 0.0, momentum: float = 0.0) -> WaveField:
    """Normalized Gaussian ``exp(-|x-c|^2/(2 w^2) + i k x_1)``."""
    mesh = grid.mesh()
    r2 = sum((x - center) ** 2 for x in mesh)
    vals = np.exp(-r2 / (2 * width**2) + 1j * momentum * mesh[0])
    return WaveField(grid, vals).normalized()


def save_trajectory(traj: Trajectory, outdir: str | Path, stem: str = "phi") -> Path:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    files = []
    for i, s in enumerate(traj.states):
        name = f"{stem}_{i:05d}.gph"
        tensorio.write_tensor(outdir / name, s)
        files.append(name)
    manifest = {
        "grid": {"d": traj.grid.d, "n": traj.grid.n, "L": traj.grid.L},
        "coeffs": list(traj.coeffs.b),
        "dt": traj.dt,
        "sample_stride": traj.stride,
        "times": [float(t) for t in traj.times],
        "files": files,
    }
    path = outdir / f"{stem}_manifest.json"
    tensorio.write_json(path, manifest)
    return path


def load_trajectory(manifest_path: str | Path) -> Trajectory:
    manifest_path = Path(manifest_path)
    m = tensorio.read_json(manifest_path)
    grid = make_grid(**m["grid"])
    states = [tensorio.read_tensor(manifest_path.parent / f) for f in m["files"]]
    return Trajectory(
        grid,
        NonlinearityCoefficients(tuple(m["coeffs"])),
        float(m["dt"]),
        int(m["sample_stride"]),
        np.asarray(m["times"], dtype=float),
        states,
    )
