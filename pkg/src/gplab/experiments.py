"""Convergence scans of ``Tr|gamma_N^(k) - |phi><phi|^k|`` and bundled residual/bound sweeps."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import tensorio
from .hierarchy import bbgky_residual, bound_report, gp_residual, sobolev_norm
from .kernels import factorized_density, trace_distance
from .lattice import Grid, free_propagate, kernel_signs, make_grid
from .manybody import (
    DENSE_CAP,
    DEFAULT_MEMORY_CAP,
    ManyBodyHamiltonian,
    ManyBodyState,
    PotentialSpec,
    ScalingParams,
    check_memory,
    chi_regularize,
    energy_moment,
    evolve_manybody,
    marginal,
    random_symmetric_state,
    sobolev_product_expectation,
)
from .nls import NonlinearityCoefficients, WaveField, evolve_to_times, gaussian_packet, nls_evolve

CSV_HEADER = ("N", "beta", "t", "k", "trace_distance", "mass_drift", "energy_drift")


class ConfigError(ValueError):
    pass


def _strict(cls, data: dict, where: str) -> dict:
    names = {f.name for f in dataclasses.fields(cls)}
    extra = set(data) - names
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
    return data


@dataclass(frozen=True)
class GridConfig:
    d: int = 1
    n: int = 12
    L: float = 2 * math.pi

    def build(self) -> Grid:
        return make_grid(self.d, self.n, self.L)


@dataclass(frozen=True)
class PotentialConfig:
    p: int = 1
    shape: str = "gaussian"
    width: float = 1.0
    height: float = 1.0

    def build(self, d: int) -> PotentialSpec:
        return PotentialSpec(self.p, d, self.shape, self.width, self.height)


@dataclass(frozen=True)
class InitialConfig:
    """Normalized Gaussian packet used as the one-particle state."""

    width: float = 1.0
    center: float = 0.0
    momentum: float = 1.0


@dataclass(frozen=True)
class ScanConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    potentials: tuple[PotentialConfig, ...] = (PotentialConfig(),)
    initial: InitialConfig = field(default_factory=InitialConfig)
    beta: float = 0.1
    N_list: tuple[int, ...] = (2, 3, 4)
    T: float = 0.3
    dt: float = 1e-3
    n_samples: int = 3
    k_list: tuple[int, ...] = (1,)
    kappa: float = 0.0
    out: str = "scan"
    memory_cap: int = DEFAULT_MEMORY_CAP

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScanConfig":
        data = dict(_strict(cls, data, "scan config"))
        if "grid" in data:
            data["grid"] = GridConfig(**_strict(GridConfig, data["grid"], "grid"))
        if "initial" in data:
            data["initial"] = InitialConfig(**_strict(InitialConfig, data["initial"], "initial"))
        if "potentials" in data:
            data["potentials"] = tuple(
                PotentialConfig(**_strict(PotentialConfig, p, "potential")) for p in data["potentials"]
            )
        for key in ("N_list", "k_list"):
            if key in data:
                data[key] = tuple(int(v) for v in data[key])
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["potentials"] = [dict(p) for p in d["potentials"]]
        d["N_list"] = list(self.N_list)
        d["k_list"] = list(self.k_list)
        return d

    def fingerprint(self) -> str:
        """Hash of every setting that affects results (the output path excluded)."""
        body = {k: v for k, v in self.to_dict().items() if k != "out"}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]

    def specs(self) -> list[PotentialSpec]:
        return [p.build(self.grid.d) for p in self.potentials]

    def sample_times(self) -> list[float]:
        return [self.T * i / self.n_samples for i in range(1, self.n_samples + 1)]

    def validate(self) -> None:
        """Raise :class:`ConfigError` for anything that would fail mid-scan."""
        try:
            grid = self.grid.build()
            specs = self.specs()
            if not self.N_list or min(self.N_list) < 1:
                raise ValueError("N_list must hold positive particle numbers")
            if self.n_samples < 1:
                raise ValueError("n_samples must be >= 1")
            steps = self.T / (self.dt * self.n_samples)
            if not self.dt > 0 or self.T <= 0 or abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
                raise ValueError(f"T={self.T} must split into {self.n_samples} whole multiples of dt={self.dt}")
            if self.kappa < 0:
                raise ValueError("kappa must be >= 0")
            p0 = max((s.p for s in specs), default=1)
            for N in self.N_list:
                check_memory(grid, N, self.memory_cap)
                if any(k > N or k < 1 for k in self.k_list):
                    raise ValueError(f"k_list {self.k_list} incompatible with N={N}")
                if specs:
                    ScalingParams(N, self.beta).check(grid.d, p0, grid, min(s.width for s in specs))
                if self.kappa > 0 and grid.n ** (grid.d * N) > DENSE_CAP:
                    raise ValueError(f"chi regularization needs dimension <= {DENSE_CAP} (N={N})")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def mean_field_coefficients(specs: Sequence[PotentialSpec]) -> NonlinearityCoefficients:
    """NLS coefficients ``b_p = sum int V^(p) / p!`` implied by the Hamiltonian normalization."""
    p0 = max((s.p for s in specs), default=1)
    b = [0.0] * p0
    for s in specs:
        b[s.p - 1] += s.b0 / math.factorial(s.p)
    return NonlinearityCoefficients(tuple(b))


def _scan_one(cfg: ScanConfig, N: int, outdir: Path) -> list[tuple]:
    """Rows for one particle number, checkpointing after each sample time."""
    grid = cfg.grid.build()
    specs = cfg.specs()
    scaling = ScalingParams(N, cfg.beta)
    phi0 = gaussian_packet(grid, cfg.initial.width, cfg.initial.center, cfg.initial.momentum)
    times = cfg.sample_times()
    coeffs = mean_field_coefficients(specs)
    phis = evolve_to_times(phi0, coeffs, times, cfg.dt)
    H = ManyBodyHamiltonian(grid, N, specs, scaling)
    ck = outdir / "checkpoints" / cfg.fingerprint()
    ck.mkdir(parents=True, exist_ok=True)

    psi = ManyBodyState.product(phi0, N)
    if cfg.kappa > 0:
        psi = chi_regularize(psi, specs, scaling, cfg.kappa)
    e0 = energy_moment(psi, specs, scaling, 1) - N
    rows: list[tuple] = []
    start = 0
    for i in range(len(times)):
        meta = ck / f"N{N}_t{i}.json"
        if meta.exists():
            rows.extend(tuple(r) for r in tensorio.read_json(meta)["rows"])
            start = i + 1
    if start == len(times):
        return rows
    if start > 0:
        psi = ManyBodyState(grid, N, tensorio.read_tensor(ck / f"N{N}_t{start - 1}.gph"))
    steps = round(cfg.T / (cfg.dt * cfg.n_samples))
    for i in range(start, len(times)):
        traj = evolve_manybody(psi, specs, scaling, steps * cfg.dt, cfg.dt, steps, cfg.memory_cap, H)
        psi = traj.state(-1)
        phi = WaveField(grid, phis[i]).normalized()
        mass_drift = abs(psi.norm() ** 2 - 1.0)
        e = energy_moment(psi, specs, scaling, 1) - N
        energy_drift = abs(e - e0) / max(abs(e0), 1e-300)
        new = [
            (N, cfg.beta, times[i], k, trace_distance(marginal(psi, k), factorized_density(phi, k)), mass_drift, energy_drift)
            for k in cfg.k_list
        ]
        tensorio.write_tensor(ck / f"N{N}_t{i}.gph", psi.values)
        tensorio.write_json(ck / f"N{N}_t{i}.json", {"rows": [list(r) for r in new]})
        rows.extend(new)
    return rows


@dataclass(frozen=True)
class ScanResult:
    csv_path: Path
    rows: list[tuple]

    def final_distances(self, k: int = 1) -> dict[int, float]:
        tmax = max(r[2] for r in self.rows)
        return {r[0]: r[4] for r in self.rows if r[3] == k and r[2] == tmax}

    def strictly_decreasing(self, k: int = 1) -> bool:
        d = self.final_distances(k)
        vals = [d[N] for N in sorted(d)]
        return all(b < a for a, b in zip(vals, vals[1:]))


def convergence_scan(cfg: ScanConfig, outdir: str | Path | None = None, jobs: int = 1) -> ScanResult:
    """Run (or resume) the scan; rows are ordered by (N, t, k) regardless of ``jobs``."""
    cfg.validate()
    out = Path(cfg.out if outdir is None else outdir)
    out.mkdir(parents=True, exist_ok=True)
    tensorio.write_json(out / "manifest.json", cfg.to_dict())
    if jobs > 1 and len(cfg.N_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_scan_one, [cfg] * len(cfg.N_list), cfg.N_list, [out] * len(cfg.N_list)))
    else:
        parts = [_scan_one(cfg, N, out) for N in cfg.N_list]
    rows = sorted((r for part in parts for r in part), key=lambda r: (r[0], r[2], r[3]))
    path = out / "scan.csv"
    tensorio.write_csv(path, CSV_HEADER, rows)
    return ScanResult(path, rows)


# ----------------------------------------------------------------- suites


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    passed: bool
    detail: str = ""


@dataclass
class SuiteReport:
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, value: float, passed: bool, detail: str = "") -> None:
        self.checks.append(Check(name, float(value), bool(passed), detail))

    def summary(self) -> str:
        bad = [c.name for c in self.checks if not c.passed]
        return f"{len(self.checks) - len(bad)}/{len(self.checks)} checks passed" + (f"; failed: {', '.join(bad)}" if bad else "")

    def rows(self) -> list[tuple]:
        return [(c.name, c.value, int(c.passed), c.detail) for c in self.checks]


def order_slope(dts: Sequence[float], errors: Sequence[float]) -> float:
    return float(np.polyfit(np.log(dts), np.log(errors), 1)[0])


def gp_order_table(
    coeffs: NonlinearityCoefficients, grid: Grid, k: int = 1, dts: Sequence[float] = (2e-3, 1e-3, 5e-4), t_center: float = 0.1
) -> list[tuple[float, float]]:
    """``(dt, gp_residual)`` at a fixed physical time for a localized packet."""
    phi0 = gaussian_packet(grid, 1.0, 0.0, 1.0)
    out = []
    for dt in dts:
        n = round(t_center / dt)
        traj = nls_evolve(phi0, coeffs, (n + 1) * dt, dt)
        out.append((dt, gp_residual(traj, k, n, coeffs)))
    return out


def bbgky_order_table(
    grid: Grid, N: int, specs: Sequence[PotentialSpec], beta: float, k: int = 1, dts: Sequence[float] = (4e-4, 2e-4, 1e-4)
) -> list[tuple[float, float]]:
    scaling = ScalingParams(N, beta)
    psi = random_symmetric_state(grid, N, np.random.default_rng(0), bandlimit=2)
    H = ManyBodyHamiltonian(grid, N, specs, scaling)
    out = []
    for dt in dts:
        traj = evolve_manybody(psi, specs, scaling, 2 * dt, dt, hamiltonian=H)
        out.append((dt, bbgky_residual(traj, specs, scaling, k, 1)))
    return out


def residual_suite(cfg: ScanConfig) -> SuiteReport:
    """GP and BBGKY convergence orders plus energy-moment sanity on the scan's setting."""
    rep = SuiteReport()
    specs = cfg.specs()
    coeffs = mean_field_coefficients(specs)
    gp_grid = make_grid(cfg.grid.d, 64, 20.0)
    tab = gp_order_table(coeffs, gp_grid)
    slope = order_slope(*zip(*tab))
    rep.add("gp_order", slope, 1.6 <= slope <= 2.4 or max(e for _, e in tab) < 1e-9, repr(tab))
    N = min(3, max(cfg.N_list))
    grid = make_grid(cfg.grid.d, 8, cfg.grid.L)
    tab = bbgky_order_table(grid, N, specs, cfg.beta)
    slope = order_slope(*zip(*tab))
    rep.add("bbgky_order", slope, 1.6 <= slope <= 2.4 or max(e for _, e in tab) < 1e-9, repr(tab))
    psi = ManyBodyState.product(gaussian_packet(grid, cfg.initial.width, cfg.initial.center, cfg.initial.momentum), N)
    scaling = ScalingParams(N, cfg.beta)
    e1 = energy_moment(psi, specs, scaling, 1)
    e2 = energy_moment(psi, specs, scaling, 2)
    rep.add("energy_moment_cauchy_schwarz", e2 - e1**2, e2 >= e1**2 * (1 - 1e-12))
    return rep


def energy_bound_ratio(psi: ManyBodyState, specs: Sequence[PotentialSpec], scaling: ScalingParams) -> float:
    """``<psi,(H_N+N)psi> / (N <psi,(1-Delta_1)psi>)``."""
    return energy_moment(psi, specs, scaling, 1) / (psi.N * sobolev_product_expectation(psi, 1))


def bound_battery(grid: Grid, alpha: float = 1.0, seed: int = 0) -> list[tuple[str, WaveField]]:
    rng = np.random.default_rng(seed)
    out = [
        ("gaussian", gaussian_packet(grid, 1.0, 0.0, 0.0)),
        ("moving", gaussian_packet(grid, 0.7, 0.5, 2.0)),
        ("narrow", gaussian_packet(grid, 0.4, -0.3, 1.0)),
    ]
    modes = np.zeros(grid.n, dtype=complex)
    modes[:3] = rng.normal(size=3) + 1j * rng.normal(size=3)
    modes[-2:] = rng.normal(size=2) + 1j * rng.normal(size=2)
    out.append(("bandlimited", WaveField(grid, np.fft.ifft(modes)).normalized()))
    return out


def bound_suite(cfg: ScanConfig, alpha: float = 1.0) -> SuiteReport:
    """Energy-bound ratios, Sobolev ratios and their invariances on small kernels."""
    rep = SuiteReport()
    grid = make_grid(1, 8, cfg.grid.L)
    N = 3
    scaling = ScalingParams(N, cfg.beta)
    rng = np.random.default_rng(1)
    for i in range(3):
        psi = random_symmetric_state(grid, N, rng, bandlimit=3)
        r0 = energy_bound_ratio(psi, [], scaling)
        rep.add(f"energy_bound_free_{i}", r0, abs(r0 - 1) <= 1e-10)
        r1 = energy_bound_ratio(psi, cfg.specs(), scaling)
        rep.add(f"energy_bound_interacting_{i}", r1, r1 >= 1 - 1e-12)
    bgrid = make_grid(1, 12, cfg.grid.L)
    ratios = []
    for name, phi in bound_battery(bgrid, alpha):
        for p in (1, 2):
            g = factorized_density(phi, 1 + p)
            rec = bound_report(g, 1, p, alpha)
            scaled = bound_report(g.scaled(3.5), 1, p, alpha)
            ok = rec.ratio is not None and math.isfinite(rec.ratio)
            ratios.append(rec.ratio)
            rep.add(f"ratio_{name}_p{p}", rec.ratio or float("nan"), ok)
            rep.add(
                f"ratio_scale_{name}_p{p}",
                abs(scaled.ratio - rec.ratio),
                abs(scaled.ratio - rec.ratio) <= 1e-12 * rec.ratio,
            )
            ev = free_propagate(g.values, 0.37, bgrid, kernel_signs(g.k))
            ref = sobolev_norm(g, alpha)
            drift = abs(sobolev_norm(type(g)(bgrid, g.k, ev), alpha) - ref) / ref
            rep.add(f"sobolev_free_invariance_{name}_p{p}", drift, drift <= 1e-10)
    return rep
