"""Duhamel collapsing maps, acceptable moves and echelon classes.

A collapsing map is stored per column: ``rows[c-1]`` is the row of the
highlighted contraction ``B_{r; k+Q_{c-1}+1..k+Q_c}`` in column ``c``.
Time labels ``1..n`` stand for ``t_{k+Q_1} .. t_{k+Q_n}``; a tagged
configuration carries a permutation ``sigma`` of them, and ``I(mu, sigma)`` is
integrated over ``t >= s_{sigma(1)} >= ... >= s_{sigma(n)}``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .hierarchy import contract
from .kernels import DensityKernel, ProductKernel
from .lattice import Grid, free_propagate, kernel_signs

ENUM_CAP = 10**6


@dataclass(frozen=True)
class PSequence:
    k: int
    p: tuple[int, ...]

    def __post_init__(self):
        p = tuple(int(v) for v in self.p)
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if not p or any(v < 1 for v in p):
            raise ValueError(f"p entries must be positive, got {p}")
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return len(self.p)

    @property
    def p0(self) -> int:
        return max(self.p)

    @cached_property
    def Q(self) -> tuple[int, ...]:
        """``(Q_0, .., Q_n)`` with ``Q_0 = 0``."""
        return (0, *itertools.accumulate(self.p))

    def height(self, col: int) -> int:
        """Number of admissible rows in 1-based column ``col``."""
        return self.k + self.Q[col - 1]

    def map_count(self) -> int:
        return math.prod(self.height(c) for c in range(1, self.n + 1))


@dataclass(frozen=True)
class CollapsingMap:
    pseq: PSequence
    rows: tuple[int, ...]

    def __post_init__(self):
        rows = tuple(int(r) for r in self.rows)
        if len(rows) != self.pseq.n:
            raise ValueError(f"need {self.pseq.n} rows, got {len(rows)}")
        for c, r in enumerate(rows, start=1):
            if not 1 <= r <= self.pseq.height(c):
                raise ValueError(f"column {c}: row {r} outside 1..{self.pseq.height(c)}")
        object.__setattr__(self, "rows", rows)


@dataclass(frozen=True)
class TaggedConfiguration:
    map: CollapsingMap
    sigma: tuple[int, ...]

    def __post_init__(self):
        sigma = tuple(int(s) for s in self.sigma)
        if sorted(sigma) != list(range(1, self.map.pseq.n + 1)):
            raise ValueError(f"sigma {sigma} is not a permutation of 1..{self.map.pseq.n}")
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def identity(cls, mu: CollapsingMap) -> "TaggedConfiguration":
        return cls(mu, tuple(range(1, mu.pseq.n + 1)))

    @property
    def rows(self) -> tuple[int, ...]:
        return self.map.rows

    @property
    def header(self) -> tuple[int, ...]:
        """Column ``c`` of the header shows time label ``sigma^-1(c)``."""
        inv = [0] * len(self.sigma)
        for i, s in enumerate(self.sigma, start=1):
            inv[s - 1] = i
        return tuple(inv)


def enumerate_maps(pseq: PSequence, cap: int = ENUM_CAP) -> list[CollapsingMap]:
    count = pseq.map_count()
    if count > cap:
        raise ValueError(f"{count} maps exceed the enumeration cap {cap}")
    ranges = [range(1, pseq.height(c) + 1) for c in range(1, pseq.n + 1)]
    return [CollapsingMap(pseq, rows) for rows in itertools.product(*ranges)]


# ----------------------------------------------------------------------- moves


def movable(config: TaggedConfiguration | CollapsingMap, j: int) -> bool:
    rows = config.rows
    if not 1 <= j < len(rows):
        raise ValueError(f"j={j} out of range 1..{len(rows) - 1}")
    return rows[j] < rows[j - 1]


def _exchange(config: TaggedConfiguration, j: int) -> TaggedConfiguration:
    mu = config.map
    ps = mu.pseq
    rows = list(mu.rows)
    rows[j - 1], rows[j] = rows[j], rows[j - 1]
    r0 = min(ps.p[j - 1], ps.p[j])
    lo, hi = ps.k + ps.Q[j - 1], ps.k + ps.Q[j]
    swap = {}
    for r in range(1, r0 + 1):
        swap[lo + r], swap[hi + r] = hi + r, lo + r
    for c in range(j + 1, ps.n):
        rows[c] = swap.get(rows[c], rows[c])
    tau = {j: j + 1, j + 1: j}
    sigma = tuple(tau.get(s, s) for s in config.sigma)
    return TaggedConfiguration(CollapsingMap(ps, tuple(rows)), sigma)


def apply_move(config: TaggedConfiguration, j: int, check: bool = False) -> TaggedConfiguration:
    """Acceptable move at column ``j``.

    With ``check`` the mirrored exchange is applied to the result and must give
    back ``config``.
    """
    if not movable(config, j):
        raise ValueError(f"no acceptable move at j={j} for rows {config.rows}")
    out = _exchange(config, j)
    if check and _exchange(out, j) != config:
        raise AssertionError(f"mirrored move at j={j} does not restore {config}")
    return out


def mirror_move(config: TaggedConfiguration, j: int) -> TaggedConfiguration:
    """Inverse of :func:`apply_move`; needs ``rows[j] > rows[j-1]`` (1-based columns)."""
    rows = config.rows
    if not rows[j] > rows[j - 1]:
        raise ValueError(f"no mirrored move at j={j} for rows {rows}")
    return _exchange(config, j)


def is_special_echelon(mu: CollapsingMap | TaggedConfiguration) -> bool:
    rows = mu.rows
    return all(a <= b for a, b in zip(rows, rows[1:]))


@dataclass(frozen=True)
class Reduction:
    start: CollapsingMap
    result: TaggedConfiguration
    moves: tuple[int, ...]

    @property
    def n_moves(self) -> int:
        return len(self.moves)


def reduce_to_echelon(mu: CollapsingMap | TaggedConfiguration, order: str = "left") -> Reduction:
    """Apply moves at the smallest (``order="left"``) or largest movable ``j`` until echelon."""
    if order not in ("left", "right"):
        raise ValueError("order must be 'left' or 'right'")
    cfg = mu if isinstance(mu, TaggedConfiguration) else TaggedConfiguration.identity(mu)
    n = cfg.map.pseq.n
    scan = range(1, n) if order == "left" else range(n - 1, 0, -1)
    moves = []
    limit = n * n * cfg.map.pseq.height(n) + 1
    while True:
        j = next((j for j in scan if movable(cfg, j)), None)
        if j is None:
            break
        cfg = _exchange(cfg, j)
        moves.append(j)
        if len(moves) > limit:
            raise RuntimeError(f"reduction of {mu} does not terminate")
    start = mu.map if isinstance(mu, TaggedConfiguration) else mu
    return Reduction(start, cfg, tuple(moves))


# ------------------------------------------------------------------- classes


@dataclass
class EchelonClass:
    representative: CollapsingMap
    members: list[TaggedConfiguration] = field(default_factory=list)

    def sigmas_distinct(self) -> bool:
        sig = [m.sigma for m in self.members]
        return len(set(sig)) == len(sig)


def classify_all(pseq: PSequence, cap: int = ENUM_CAP) -> list[EchelonClass]:
    """Group maps by echelon representative; members carry the map and its reduction ``sigma``."""
    classes: dict[tuple[int, ...], EchelonClass] = {}
    for mu in enumerate_maps(pseq, cap):
        red = reduce_to_echelon(mu)
        rep = red.result.map
        cls = classes.setdefault(rep.rows, EchelonClass(rep))
        cls.members.append(TaggedConfiguration(mu, red.result.sigma))
    return [classes[key] for key in sorted(classes)]


@dataclass(frozen=True)
class CountReport:
    pseq: PSequence
    n_maps: int
    n_classes: int
    bound: int
    max_class: int
    partition_ok: bool
    sigmas_distinct: bool
    max_moves: int

    @property
    def bound_ok(self) -> bool:
        return self.n_classes <= self.bound

    @property
    def moves_ok(self) -> bool:
        n = self.pseq.n
        return self.max_moves <= n * (n - 1) // 2

    @property
    def ok(self) -> bool:
        return self.partition_ok and self.sigmas_distinct and self.bound_ok and self.moves_ok


def class_bound(pseq: PSequence) -> int:
    return 2 ** (pseq.k + (pseq.p0 + 1) * (pseq.n - 1))


def count_bound_check(pseq: PSequence, cap: int = ENUM_CAP) -> CountReport:
    maps = enumerate_maps(pseq, cap)
    classes = classify_all(pseq, cap)
    covered = [m.map for c in classes for m in c.members]
    partition = len(covered) == len(maps) == pseq.map_count() and set(covered) == set(maps)
    max_moves = max(reduce_to_echelon(m).n_moves for m in maps)
    return CountReport(
        pseq,
        len(maps),
        len(classes),
        class_bound(pseq),
        max(len(c.members) for c in classes),
        partition,
        all(c.sigmas_distinct() for c in classes),
        max_moves,
    )


def class_domain_volume(cls: EchelonClass, t: float) -> float:
    """Volume of the union of the members' order simplices in ``[0, t]^n``."""
    if not cls.sigmas_distinct():
        raise ValueError("class members share a time ordering; simplices overlap")
    n = cls.representative.pseq.n
    return len(cls.members) * t**n / math.factorial(n)


def confluence_check(pseq: PSequence, cap: int = ENUM_CAP) -> list[CollapsingMap]:
    """Maps whose representative depends on the scan direction (empty when confluent)."""
    return [
        mu
        for mu in enumerate_maps(pseq, cap)
        if reduce_to_echelon(mu, "left").result.map != reduce_to_echelon(mu, "right").result.map
    ]


def render(config: TaggedConfiguration | CollapsingMap) -> str:
    """Text version of the integral matrix; highlighted entries are wrapped in ``*``."""
    cfg = config if isinstance(config, TaggedConfiguration) else TaggedConfiguration.identity(config)
    ps = cfg.map.pseq
    k, Q = ps.k, ps.Q
    header = [f"t[{k + Q[h]}]" for h in cfg.header]
    table = [header]
    for r in range(1, ps.height(ps.n) + 1):
        line = []
        for c in range(1, ps.n + 1):
            if r > ps.height(c):
                line.append("0")
                continue
            targets = ",".join(str(i) for i in range(k + Q[c - 1] + 1, k + Q[c] + 1))
            cell = f"B{r};{targets}"
            line.append(f"*{cell}*" if cfg.rows[c - 1] == r else cell)
        table.append(line)
    widths = [max(len(row[c]) for row in table) for c in range(ps.n)]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in table)


# ------------------------------------------------------- Duhamel integrals


GammaPath = Callable[[float], DensityKernel | ProductKernel]


def _integrand(cfg: TaggedConfiguration, s: Sequence[float], t: float, gamma: GammaPath, cache: dict) -> np.ndarray:
    ps = cfg.map.pseq
    k, Q, n = ps.k, ps.Q, ps.n
    key = s[-1]
    if key not in cache:
        cache[key] = gamma(key)
    cur = cache[key]
    times = [t, *s]
    for c in range(n, 0, -1):
        cur = contract(cur, cfg.rows[c - 1], ps.p[c - 1], "full")
        level = k + Q[c - 1]
        vals = free_propagate(cur.values, times[c - 1] - times[c], cur.grid, kernel_signs(level))
        cur = DensityKernel(cur.grid, level, vals)
    return cur.values


def duhamel_integral(
    config: TaggedConfiguration, gamma: GammaPath, t: float, nodes: int, symmetry_tol: float = 1e-10
) -> DensityKernel:
    """``I(mu, sigma)`` by tensor Gauss-Legendre on ``[0, t]^n`` with the order-simplex indicator.

    ``gamma(s)`` returns the top-level kernel ``gamma^(k+Q_n)`` at time ``s``; it
    must be symmetric in its particle pairs.
    """
    ps = config.map.pseq
    probe = gamma(0.0)
    K = ps.k + ps.Q[-1]
    if probe.k != K:
        raise ValueError(f"gamma must have {K} particle pairs, got {probe.k}")
    if isinstance(probe, DensityKernel):
        if probe.values.size > 2**24:
            raise ValueError("top-level kernel too large; pass a ProductKernel")
        if probe.symmetry_defect() > symmetry_tol:
            raise ValueError("gamma is not symmetric under particle relabeling")
    x, w = np.polynomial.legendre.leggauss(nodes)
    x = 0.5 * t * (x + 1)
    w = 0.5 * t * w
    grid: Grid = probe.grid
    total = np.zeros((grid.n,) * (2 * ps.k * grid.d), dtype=complex)
    cache: dict = {}
    order = [i - 1 for i in config.sigma]
    for idx in itertools.product(range(nodes), repeat=ps.n):
        s = [x[i] for i in idx]
        chain = [s[i] for i in order]
        if any(b > a for a, b in zip([t, *chain], chain)):
            continue
        total += math.prod(w[i] for i in idx) * _integrand(config, s, t, gamma, cache)
    return DensityKernel(grid, ps.k, total)


@dataclass(frozen=True)
class InvarianceResult:
    nodes: int
    residual: float
    magnitude: float


def verify_move_invariance(
    config: TaggedConfiguration,
    moved: TaggedConfiguration,
    gamma: GammaPath,
    t: float = 1.0,
    nodes: int = 8,
) -> InvarianceResult:
    """Relative difference ``|I(mu, sigma) - I(mu', sigma')| / max(|I|, 1e-30)`` in the kernel L2 norm."""
    a = duhamel_integral(config, gamma, t, nodes)
    if moved == config:
        return InvarianceResult(nodes, 0.0, a.norm())
    b = duhamel_integral(moved, gamma, t, nodes)
    mag = max(a.norm(), b.norm())
    res = (a - b).norm() / max(mag, 1e-30)
    return InvarianceResult(nodes, float(res), float(mag))
