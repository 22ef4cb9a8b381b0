"""Periodic grids, spectral derivatives and free Schrödinger propagators.

Every tensor in the package is a complex array whose axes come in *particle
groups* of ``d`` consecutive axes, each of length ``n``.  A one-particle field
has one group, an N-body wave function has N groups, and a k-particle density
kernel has 2k groups ordered ``x_1..x_k, x'_1..x'_k``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.fft as sfft


def _is_fft_size(n: int) -> bool:
    # powers of two, plus 3 * 2**m so that the n = 12 many-body grids are allowed
    m = n
    while m % 2 == 0:
        m //= 2
    return m in (1, 3)


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid ``[-L/2, L/2)^d`` with ``n`` points per axis."""

    d: int
    n: int
    L: float

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"spatial dimension must be 1 or 2, got {self.d}")
        if int(self.n) != self.n or self.n < 4 or self.n % 2 or not _is_fft_size(self.n):
            raise ValueError(
                f"points per axis must be an even FFT size >= 4 (2^m or 3*2^m), got {self.n}"
            )
        if not np.isfinite(self.L) or self.L <= 0:
            raise ValueError(f"box length must be positive, got {self.L}")

    @property
    def dx(self) -> float:
        return self.L / self.n

    @property
    def cell(self) -> float:
        """Measure of one grid cell, ``dx**d``."""
        return self.dx**self.d

    @cached_property
    def x(self) -> np.ndarray:
        return -0.5 * self.L + self.dx * np.arange(self.n)

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi * sfft.fftfreq(self.n, d=self.dx)

    @cached_property
    def k2(self) -> np.ndarray:
        """``|xi|^2`` on one particle's d Fourier axes (shape ``(n,)*d``)."""
        kk = self.wavenumbers**2
        if self.d == 1:
            return kk
        return kk[:, None] + kk[None, :]

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.x] * self.d), indexing="ij"))

    def groups(self, f: np.ndarray) -> int:
        """Number of particle groups carried by ``f``; raises on shape mismatch."""
        if f.ndim % self.d or any(s != self.n for s in f.shape):
            raise ValueError(f"array of shape {f.shape} does not live on {self}")
        return f.ndim // self.d

    def inner(self, f: np.ndarray, g: np.ndarray) -> complex:
        """``<f, g>`` with the grid measure on every axis."""
        return complex(np.vdot(f, g)) * self.dx ** f.ndim

    def norm(self, f: np.ndarray) -> float:
        return float(np.sqrt(np.vdot(f, f).real * self.dx ** f.ndim))

    def minimum_image(self, delta: np.ndarray) -> np.ndarray:
        """Wrap coordinate differences into ``[-L/2, L/2)``."""
        return (delta + 0.5 * self.L) % self.L - 0.5 * self.L


def make_grid(d: int, n: int, L: float) -> Grid:
    return Grid(int(d), int(n), float(L))


def _group_axes(grid: Grid, g: int) -> tuple[int, ...]:
    return tuple(range(g * grid.d, (g + 1) * grid.d))


def _expand(grid: Grid, arr: np.ndarray, g: int, ngroups: int) -> np.ndarray:
    """Broadcastable view of a one-group array placed at group ``g``."""
    shape = [1] * (ngroups * grid.d)
    for a in _group_axes(grid, g):
        shape[a] = grid.n
    return arr.reshape(shape)


def fft(f: np.ndarray) -> np.ndarray:
    return sfft.fftn(f, norm="ortho")


def ifft(f: np.ndarray) -> np.ndarray:
    return sfft.ifftn(f, norm="ortho")


def fourier_multiply(f: np.ndarray, grid: Grid, symbols: Sequence[np.ndarray | None]) -> np.ndarray:
    """Multiply the spectrum of ``f`` by a product of per-group symbols.

    ``symbols[g]`` is an array of shape ``(n,)*d`` on group ``g``'s Fourier
    axes (DFT ordering) or ``None`` for the identity.
    """
    m = grid.groups(f)
    if len(symbols) != m:
        raise ValueError(f"expected {m} symbols, got {len(symbols)}")
    fh = fft(np.asarray(f, dtype=complex))
    for g, s in enumerate(symbols):
        if s is not None:
            fh *= _expand(grid, s, g, m)
    return ifft(fh)


def laplacian_apply(f: np.ndarray, grid: Grid, groups: Sequence[int] | None = None) -> np.ndarray:
    """Spectral ``sum_g Delta_g f`` over the selected particle groups (all by default)."""
    m = grid.groups(f)
    sel = range(m) if groups is None else groups
    fh = fft(np.asarray(f, dtype=complex))
    acc = np.zeros(fh.shape, dtype=float)
    for g in sel:
        if not 0 <= g < m:
            raise ValueError(f"group {g} out of range for {m} groups")
        acc = acc + _expand(grid, -grid.k2, g, m)
    return ifft(fh * acc)


def free_propagate(f: np.ndarray, t: float, grid: Grid, signs: Sequence[int] | None = None) -> np.ndarray:
    """Apply ``exp(-i t sum_g s_g |xi_g|^2)`` in Fourier space.

    With ``s_g = +1`` on unprimed and ``-1`` on primed groups this is the free
    evolution ``exp(i t (Delta_x - Delta_x'))`` of a density kernel; all ``+1``
    is ``exp(i t Delta)`` on wave functions.
    """
    m = grid.groups(f)
    signs = [1] * m if signs is None else list(signs)
    if len(signs) != m or any(s not in (1, -1) for s in signs):
        raise ValueError(f"need one sign (+1/-1) per particle group ({m}), got {signs}")
    if t == 0:
        return np.array(f, dtype=complex)
    phase = np.exp(-1j * t * grid.k2)
    return fourier_multiply(f, grid, [phase if s > 0 else phase.conj() for s in signs])


def kernel_signs(k: int) -> list[int]:
    """Sign pattern of ``U^(k)``: +1 on ``x_1..x_k``, -1 on ``x'_1..x'_k``."""
    return [1] * k + [-1] * k
