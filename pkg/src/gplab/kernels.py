"""Density kernels ``gamma^(k)(x_1..x_k; x'_1..x'_k)`` and their basic calculus.

Dense kernels hold the full rank-2kd tensor.  ``ProductKernel`` is the lazy
form of ``|phi><phi|^{(x)k}``, used where the dense tensor would not fit.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .lattice import Grid
from .nls import WaveField


@dataclass
class DensityKernel:
    grid: Grid
    k: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.grid.groups(self.values) != 2 * self.k:
            raise ValueError(f"kernel with k={self.k} needs {2 * self.k} particle groups")

    @property
    def dim(self) -> int:
        """Number of grid points of ``Grid^k``."""
        return self.grid.n ** (self.grid.d * self.k)

    def matrix(self) -> np.ndarray:
        """Operator matrix on ``l^2(Grid^k)``, measure weight included."""
        D = self.dim
        return self.values.reshape(D, D) * self.grid.cell**self.k

    def trace(self) -> complex:
        return complex(np.trace(self.values.reshape(self.dim, self.dim))) * self.grid.cell**self.k

    def hermitian_defect(self) -> float:
        M = self.values.reshape(self.dim, self.dim)
        return float(np.max(np.abs(M - M.conj().T), initial=0.0))

    def norm(self) -> float:
        """Hilbert-Schmidt (L^2 kernel) norm."""
        return self.grid.norm(self.values)

    def symmetry_defect(self) -> float:
        """Largest change under a simultaneous swap of particle pairs."""
        base = max(float(np.max(np.abs(self.values), initial=0.0)), 1e-300)
        worst = 0.0
        for perm in itertools.permutations(range(self.k)):
            moved = permute_pairs(self, perm)
            worst = max(worst, float(np.max(np.abs(moved.values - self.values))))
        return worst / base

    def __sub__(self, other: "DensityKernel") -> "DensityKernel":
        return DensityKernel(self.grid, self.k, self.values - other.values)

    def __add__(self, other: "DensityKernel") -> "DensityKernel":
        return DensityKernel(self.grid, self.k, self.values + other.values)

    def scaled(self, c: complex) -> "DensityKernel":
        return DensityKernel(self.grid, self.k, c * self.values)


@dataclass
class ProductKernel:
    """Lazy ``prod_j phi(x_j) conj(phi(x'_j))``; symmetric by construction."""

    phi: WaveField
    k: int

    @property
    def grid(self) -> Grid:
        return self.phi.grid

    def dense(self) -> DensityKernel:
        return DensityKernel(self.grid, self.k, product_tensor(self.phi.values, self.k))

    def symmetry_defect(self) -> float:
        return 0.0


def product_tensor(phi: np.ndarray, k: int) -> np.ndarray:
    """Dense ``prod_j phi(x_j) conj(phi(x'_j))`` with axes x_1..x_k, x'_1..x'_k."""
    out = np.ones((), dtype=complex)
    for f in [phi] * k + [phi.conj()] * k:
        out = np.multiply.outer(out, f)
    return out


def factorized_density(phi: WaveField, k: int, lazy: bool = False, tol: float = 1e-8):
    """``|phi><phi|^{(x)k}``.  Rejects fields whose norm is not 1 within ``tol``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    nrm = phi.norm()
    if abs(nrm - 1) > tol:
        raise ValueError(f"factorized densities need a normalized field, got norm {nrm}")
    pk = ProductKernel(phi, k)
    return pk if lazy else pk.dense()


def as_dense(g) -> DensityKernel:
    return g.dense() if isinstance(g, ProductKernel) else g


def permute_pairs(gamma: DensityKernel, perm) -> DensityKernel:
    """Relabel particle pairs: new pair ``i`` is old pair ``perm[i]``."""
    d, k = gamma.grid.d, gamma.k
    axes = []
    for side in (0, 1):
        for i in perm:
            start = (side * k + i) * d
            axes.extend(range(start, start + d))
    return DensityKernel(gamma.grid, k, np.transpose(gamma.values, axes))


def partial_trace(gamma: DensityKernel, k: int) -> DensityKernel:
    """Trace out the last ``gamma.k - k`` particle pairs."""
    K = gamma.k
    if not 0 < k <= K:
        raise ValueError(f"cannot reduce a {K}-particle kernel to k={k}")
    if k == K:
        return DensityKernel(gamma.grid, K, gamma.values.copy())
    g = gamma.grid
    A = g.n ** (g.d * k)
    B = g.n ** (g.d * (K - k))
    v = gamma.values.reshape(A, B, A, B)
    red = np.einsum("abcb->ac", v) * g.cell ** (K - k)
    return DensityKernel(g, k, red.reshape((g.n,) * (2 * k * g.d)))


def trace_distance(a: DensityKernel, b: DensityKernel, herm_tol: float = 1e-8) -> float:
    """``Tr|a - b|`` from the eigenvalues of the Hermitian difference operator."""
    if a.grid != b.grid or a.k != b.k:
        raise ValueError("kernels live on different spaces")
    M = a.matrix() - b.matrix()
    scale = max(1.0, float(np.max(np.abs(M), initial=0.0)))
    if np.max(np.abs(M - M.conj().T), initial=0.0) > herm_tol * scale:
        raise ValueError("trace distance needs Hermitian kernels")
    ev = np.linalg.eigvalsh(0.5 * (M + M.conj().T))
    return float(np.sum(np.abs(ev)))
