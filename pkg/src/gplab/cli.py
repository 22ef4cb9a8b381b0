"""Command-line entry point: ``python -m gplab <command> [flags]``.

Every command reads defaults, then an optional strict JSON ``--config``, then
explicit flags.  Numeric results go to files under the output directory and a
single summary line goes to stdout.  Exit codes: 0 success, 2 invalid input,
1 runtime failure.
"""
from __future__ import annotations

import argparse
import copy
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import scipy.linalg

from . import boardgame as bg
from . import experiments as ex
from . import tensorio
from .hierarchy import bound_report, mollifier_rate
from .kernels import factorized_density
from .lattice import make_grid
from .manybody import ManyBodyHamiltonian, ManyBodyState, PotentialSpec, ScalingParams, evolve_manybody, marginal
from .nls import (
    NonlinearityCoefficients,
    WaveField,
    energy,
    evolve_to_times,
    gaussian_packet,
    mass,
    nls_evolve,
    plane_wave,
    save_trajectory,
)

COMMANDS = (
    "nls-evolve",
    "manybody-evolve",
    "converge-scan",
    "gp-residual",
    "bbgky-residual",
    "boardgame-classify",
    "boardgame-verify",
    "bound-report",
    "mollifier-rate",
)

_GRID = {"d": 1, "n": 64, "L": 20.0}
_POT = [{"p": 1, "shape": "gaussian", "width": 1.0, "height": 1.0}]

DEFAULTS: dict[str, dict[str, Any]] = {
    "nls-evolve": {"grid": dict(_GRID, n=256), "coeffs": [1.0, 0.5], "preset": "gaussian", "mode": 1, "T": 1.0, "dt": 1e-3, "sample_every": 0.1},
    "manybody-evolve": {"grid": {"d": 1, "n": 12, "L": 2 * math.pi}, "N": [3], "beta": 0.1, "potentials": _POT, "T": 0.3, "dt": 1e-3, "k": 1},
    "converge-scan": ex.ScanConfig().to_dict(),
    "gp-residual": {"grid": dict(_GRID), "coeffs": [1.0, 0.5], "k": 1, "dt": 1e-3, "t_center": 0.1},
    "bbgky-residual": {"grid": {"d": 1, "n": 8, "L": 2 * math.pi}, "N": [3], "k": 1, "beta": 0.1, "potentials": _POT, "dt": 2e-4},
    "boardgame-classify": {"k": 1, "p": [2, 1, 3, 2], "exhaustive": False, "k_max": 3, "n_max": 4, "p_max": 3},
    "boardgame-verify": {"grid": {"d": 1, "n": 8, "L": 2 * math.pi}, "k": 2, "p": [1, 1], "rows": [2, 1], "j": 1, "t": 1.0, "nodes": [8, 16], "coeffs": [0.0], "dt": 1e-3},
    "bound-report": {"grid": {"d": 1, "n": 12, "L": 2 * math.pi}, "alpha": [0.0, 0.5, 1.0], "p": [1, 2], "k": 1},
    "mollifier-rate": {"grid": {"d": 1, "n": 256, "L": 2 * math.pi}, "eps": [0.4, 0.2, 0.1, 0.05], "kappa": 0.5, "k": 1, "p": [1]},
}

# dense matrix-exponential cross-check for small Hilbert spaces
EXPM_MAX_DIM = 1024

_FLAG_KEYS = {"dt": "dt", "grid_n": "grid.n", "grid_L": "grid.L", "k": "k", "p": "p", "beta": "beta", "N": "N"}


class ValidationError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    params: dict[str, Any]
    out: str = ""
    seed: int = 0

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        extra = set(data) - {"command", "params", "out", "seed"}
        if extra:
            raise ValidationError(f"unknown config keys {sorted(extra)}")
        cmd = data.get("command")
        if cmd not in COMMANDS:
            raise ValidationError(f"unknown command {cmd!r}")
        params = _merge(DEFAULTS[cmd], data.get("params", {}), cmd)
        return cls(cmd, params, str(data.get("out", "")), int(data.get("seed", 0)))

    def to_dict(self) -> dict[str, Any]:
        return {"command": self.command, "params": copy.deepcopy(self.params), "out": self.out, "seed": self.seed}


def _merge(base: dict, over: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if key not in base:
            raise ValidationError(f"{where}: unknown key {key!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ValidationError(f"{where}.{key} must be an object")
            out[key] = _merge(base[key], val, f"{where}.{key}")
        else:
            out[key] = copy.deepcopy(val)
    return out


def _set(params: dict, dotted: str, value: Any, cmd: str, flag: str) -> None:
    *path, last = dotted.split(".")
    target = params
    for part in path:
        if part not in target:
            raise ValidationError(f"{cmd} does not accept --{flag.replace('_', '-')}")
        target = target[part]
    if last not in target:
        raise ValidationError(f"{cmd} does not accept --{flag.replace('_', '-')}")
    target[last] = value


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a comma list of integers, got {text!r}") from exc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gplab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON file with {params, out, seed}")
        sp.add_argument("--out", help="output directory (default $GPH_OUT or ./gph_out)")
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--dt", type=float)
        sp.add_argument("--grid-n", dest="grid_n", type=int)
        sp.add_argument("--grid-L", dest="grid_L", type=float)
        sp.add_argument("--k", type=int)
        sp.add_argument("--p", type=_int_list)
        sp.add_argument("--beta", type=float)
        sp.add_argument("--N", type=_int_list)
        if name == "nls-evolve":
            sp.add_argument("--preset", choices=("gaussian", "plane-wave"))
            sp.add_argument("--coeffs", type=lambda s: [float(v) for v in s.split(",")])
        if name == "boardgame-classify":
            sp.add_argument("--exhaustive", action="store_true")
    return parser


def resolve(argv: list[str]) -> tuple[RunConfig, int]:
    ns = build_parser().parse_args(argv)
    if ns.command is None:
        raise ValidationError("missing command; choose one of " + ", ".join(COMMANDS))
    data: dict[str, Any] = {"command": ns.command}
    if ns.config:
        try:
            loaded = tensorio.read_json(ns.config)
        except (OSError, ValueError) as exc:
            raise ValidationError(f"cannot read config {ns.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ValidationError("config must be a JSON object")
        if loaded.get("command", ns.command) != ns.command:
            raise ValidationError(f"config is for {loaded['command']!r}, not {ns.command!r}")
        data.update(loaded)
        data["command"] = ns.command
    cfg = RunConfig.from_dict(data)
    for flag, key in _FLAG_KEYS.items():
        val = getattr(ns, flag)
        if val is not None:
            _set(cfg.params, key, val, cfg.command, flag)
    for flag in ("preset", "coeffs"):
        if getattr(ns, flag, None) is not None:
            cfg.params[flag] = getattr(ns, flag)
    if getattr(ns, "exhaustive", False):
        cfg.params["exhaustive"] = True
    if cfg.command == "boardgame-classify" and not cfg.params["exhaustive"] and not ns.config:
        missing = [f"--{f}" for f in ("k", "p") if getattr(ns, f) is None]
        if missing:
            raise ValidationError(f"boardgame-classify: missing required {' and '.join(missing)} (or --exhaustive)")
    if ns.seed is not None:
        cfg.seed = ns.seed
    cfg.out = ns.out or cfg.out or os.environ.get("GPH_OUT", "") or str(Path("gph_out") / cfg.command)
    if ns.jobs < 1:
        raise ValidationError("--jobs must be >= 1")
    return cfg, ns.jobs


# -------------------------------------------------------------------- commands

Task = Callable[[], str]


def _grid(p):
    g = p["grid"]
    return make_grid(int(g["d"]), int(g["n"]), float(g["L"]))


def _specs(p, d):
    return [PotentialSpec(int(s["p"]), d, s["shape"], float(s["width"]), float(s["height"])) for s in p["potentials"]]


def _single_N(p) -> int:
    if len(p["N"]) != 1:
        raise ValueError("this command takes a single N")
    return int(p["N"][0])


def cmd_nls_evolve(p, out: Path, cfg: RunConfig, jobs: int) -> Task:
    grid = _grid(p)
    coeffs = NonlinearityCoefficients(tuple(p["coeffs"]))
    if p["preset"] == "plane-wave":
        phi0 = plane_wave(grid, int(p["mode"]))
    elif p["preset"] == "gaussian":
        phi0 = gaussian_packet(grid, 1.0, 0.0, 1.0)
    else:
        raise ValueError(f"unknown preset {p['preset']!r}")
    T, dt = float(p["T"]), float(p["dt"])

    def run() -> str:
        traj = nls_evolve(phi0, coeffs, T, dt, p["sample_every"])
        save_trajectory(traj, out)
        last = traj.field(len(traj) - 1)
        report = {
            "mass_drift": abs(mass(last) - mass(phi0)),
            "energy_drift": abs(energy(last, coeffs) - energy(phi0, coeffs)) / abs(energy(phi0, coeffs)),
        }
        if p["preset"] == "plane-wave":
            A = grid.L ** (-grid.d / 2)
            xi2 = grid.d * (2 * np.pi * int(p["mode"]) / grid.L) ** 2
            omega = xi2 + sum(b * A ** (2 * q) for q, b in enumerate(coeffs.b, start=1))
            exact = phi0.values * np.exp(-1j * omega * traj.times[-1])
            report["phase_error"] = float(np.max(np.abs(last.values - exact)) / A)
        tensorio.write_json(out / "report.json", report)
        return " ".join(f"{k}={v:.3e}" for k, v in sorted(report.items()))

    return run


def cmd_manybody_evolve(p, out: Path, cfg: RunConfig, jobs: int) -> Task:
    grid = _grid(p)
    N = _single_N(p)
    specs = _specs(p, grid.d)
    scaling = ScalingParams(N, float(p["beta"]))
    scaling.check(grid.d, max((s.p for s in specs), default=1), grid, min((s.width for s in specs), default=1.0))
    k = int(p["k"])
    if not 1 <= k <= N:
        raise ValueError(f"k={k} out of range 1..{N}")
    psi0 = ManyBodyState.product(gaussian_packet(grid, 1.0, 0.0, 1.0), N)

    def run() -> str:
        traj = evolve_manybody(psi0, specs, scaling, float(p["T"]), float(p["dt"]), round(float(p["T"]) / float(p["dt"])))
        final = traj.state(len(traj) - 1)
        tensorio.write_tensor(out / "psi_final.gph", final.values)
        tensorio.write_tensor(out / f"gamma{k}_final.gph", marginal(final, k).values)
        norm_drift = abs(final.norm() - 1)
        report = {"N": N, "T": float(p["T"]), "norm_drift": norm_drift}
        summary = f"N={N} T={p['T']} norm_drift={norm_drift:.3e}"
        if grid.n ** (N * grid.d) <= EXPM_MAX_DIM:
            H = ManyBodyHamiltonian(grid, N, specs, scaling).dense()
            exact = scipy.linalg.expm(-1j * float(p["T"]) * H) @ psi0.values.reshape(-1)
            err = grid.norm((final.values.reshape(-1) - exact).reshape(final.values.shape))
            report["expm_error"] = err
            summary += f" expm_error={err:.3e}"
        tensorio.write_json(out / "report.json", report)
        return summary

    return run


def cmd_converge_scan(p, out: Path, cfg: RunConfig, jobs: int) -> Task:
    scan = ex.ScanConfig.from_dict({**p, "out": str(out)})
    scan.validate()

    def run() -> str:
        res = ex.convergence_scan(scan, out, jobs)
        dists = res.final_distances(scan.k_list[0])
        trend = "decreasing" if res.strictly_decreasing(scan.k_list[0]) else "not-decreasing"
        return f"rows={len(res.rows)} final=" + ",".join(f"N{N}:{d:.4g}" for N, d in sorted(dists.items())) + f" {trend}"

    return run


def cmd_gp_residual(p, out: Path, cfg: RunConfig, jobs: int) -> Task:
    grid = _grid(p)
    coeffs = NonlinearityCoefficients(tuple(p["coeffs"]))
    dt = float(p["dt"])

    def run() -> str:
        tab = ex.gp_order_table(coeffs, grid, int(p["k"]), (dt, dt / 2), float(p["t_center"]))
        ratio = tab[0][1] / tab[1][1]
        tensorio.write_csv(out / "gp_residual.csv", ("dt", "residual"), tab)
        tensorio.write_json(out / "report.json", {"residual": tab[0][1], "halving_ratio": ratio})
        return f"residual={tab[0][1]:.3e} halving_ratio={ratio:.3f}"

    return run


def cmd_bbgky_residual(p, out: Path, cfg: RunConfig, jobs: int) -> Task:
    grid = _grid(p)
    N = _single_N(p)
    specs = _specs(p, grid.d)
    k = int(p["k"])
    if not 1 <= k <= N:
        raise ValueError(f"k={k} out of range 1..{N}")
    dt = float(p["dt"])

    def run() -> str:
        tab = ex.bbgky_order_table(grid, N, specs, float(p["beta"]), k, (dt, dt / 2, dt / 4))
        slope = ex.order_slope(*zip(*tab))
        tensorio.write_csv(out / "bbgky_residual.csv", ("dt", "residual"), tab)
        tensorio.write_json(out / "report.json", {"slope": slope, "residuals": [r for _, r in tab]})
        return f"residual={tab[0][1]:.3e} order={slope:.3f}"

    return run


CLASS_HEADER = ("pseq", "maps", "classes", "bound", "max_class", "partition_ok", "sigmas_distinct", "max_moves", "moves_ok", "confluent")


def _class_row(ps: bg.PSequence):
    r = bg.count_bound_check(ps)
    conf = not bg.confluence_check(ps)
    return (f"{ps.k}|{','.join(map(str, ps.p))}", r.n_maps, r.n_classes, r.bound, r.max_class, int(r.partition_ok), int(r.sigmas_distinct), r.max_moves, int(r.moves_ok), int(conf)), r


def cmd_boardgame_classify(p, out: Path, cfg: RunConfig, jobs: int) -> Task:
    import itertools

    if p["exhaustive"]:
        seqs = [
            bg.PSequence(k, ps)
            for k in range(1, int(p["k_max"]) + 1)
            for n in range(1, int(p["n_max"]) + 1)
            for ps in itertools.product(range(1, int(p["p_max"]) + 1), repeat=n)
        ]
    else:
        seqs = [bg.PSequence(int(p["k"]), tuple(p["p"]))]
    for ps in seqs:
        if ps.map_count() > bg.ENUM_CAP:
            raise ValueError(f"{ps} has {ps.map_count()} maps, above the cap {bg.ENUM_CAP}")

    def run() -> str:
        rows, reports = zip(*(_class_row(ps) for ps in seqs))
        tensorio.write_csv(out / "classes_summary.csv", CLASS_HEADER, rows)
        if not p["exhaustive"]:
            ps = seqs[0]
            table = []
            for c in bg.classify_all(ps):
                for m in c.members:
                    table.append((" ".join(map(str, c.representative.rows)), " ".join(map(str, m.map.rows)), " ".join(map(str, m.sigma))))
            tensorio.write_csv(out / "classes.csv", ("representative", "map", "sigma"), table)
        ok = all(r.ok for r in reports)
        nonconf = sum(1 - row[-1] for row in rows)
        total = sum(r.n_maps for r in reports)
        return f"pseqs={len(seqs)} maps={total} classes={sum(r.n_classes for r in reports)} all_ok={ok} nonconfluent_pseqs={nonconf}"

    return run


def cmd_boardgame_verify(p, out: Path, cfg: RunConfig, jobs: int) -> Task:
    grid = _grid(p)
    if grid.d != 1:
        raise ValueError("move verification runs in d = 1 only")
    ps = bg.PSequence(int(p["k"]), tuple(p["p"]))
    start = bg.TaggedConfiguration.identity(bg.CollapsingMap(ps, tuple(p["rows"])))
    moved = bg.apply_move(start, int(p["j"]), check=True)
    coeffs = NonlinearityCoefficients(tuple(p["coeffs"]))
    K = ps.k + ps.Q[-1]
    phi0 = gaussian_packet(grid, 0.8, 0.3, 1.0)
    nodes = [int(v) for v in p["nodes"]]

    cache: dict = {}

    def gamma(s):
        if s not in cache:
            v = evolve_to_times(phi0, coeffs, [s], float(p["dt"]))[0]
            cache[s] = factorized_density(WaveField(grid, v).normalized(), K, lazy=True)
        return cache[s]

    def run() -> str:
        res = [bg.verify_move_invariance(start, moved, gamma, float(p["t"]), m) for m in nodes]
        tensorio.write_csv(out / "move_invariance.csv", ("nodes", "residual", "magnitude"), [(r.nodes, r.residual, r.magnitude) for r in res])
        (out / "configs.txt").write_text(bg.render(start) + "\n\n" + bg.render(moved) + "\n")
        return "residuals=" + ",".join(f"{r.nodes}:{r.residual:.3e}" for r in res)

    return run


def cmd_bound_report(p, out: Path, cfg: RunConfig, jobs: int) -> Task:
    grid = _grid(p)
    k = int(p["k"])
    if k != 1 or any(q not in (1, 2) for q in p["p"]) or grid.n > 16:
        raise ValueError("bound reports are limited to k = 1, p <= 2, n <= 16")
    alphas = [float(a) for a in p["alpha"]]
    if any(a < 0 for a in alphas):
        raise ValueError("alpha must be >= 0")

    def run() -> str:
        rows = []
        for name, phi in ex.bound_battery(grid, seed=cfg.seed):
            for q in p["p"]:
                g = factorized_density(phi, k + int(q))
                for a in alphas:
                    rec = bound_report(g, 1, int(q), a)
                    rows.append((name, int(q), a, rec.lhs, rec.rhs, "" if rec.ratio is None else rec.ratio))
        tensorio.write_csv(out / "bound_report.csv", ("kernel", "p", "alpha", "lhs", "rhs", "ratio"), rows)
        worst = max(r[5] for r in rows if r[5] != "")
        return f"kernels={len(rows)} max_ratio={worst:.4g}"

    return run


def cmd_mollifier_rate(p, out: Path, cfg: RunConfig, jobs: int) -> Task:
    grid = _grid(p)
    eps = [float(e) for e in p["eps"]]
    if min(eps) < 2 * grid.dx:
        raise ValueError(f"eps={min(eps)} below resolution 2*dx={2 * grid.dx:.4g}; raise --grid-n")
    k = int(p["k"])
    phi = gaussian_packet(grid, 0.8, 0.0, 1.0)

    def run() -> str:
        rows, fits = [], []
        for q in p["p"]:
            fit = mollifier_rate(factorized_density(phi, k + int(q), lazy=True), eps, float(p["kappa"]), 1, int(q))
            fits.append(fit)
            rows += [(int(q), e, err) for e, err in zip(fit.eps, fit.errors)]
        tensorio.write_csv(out / "mollifier_errors.csv", ("p", "eps", "error"), rows)
        tensorio.write_json(out / "report.json", {"slopes": [f.slope for f in fits], "kappa": float(p["kappa"])})
        return "slopes=" + ",".join(f"{f.slope:.3f}" for f in fits) + f" kappa={p['kappa']} passed={all(f.passed for f in fits)}"

    return run


HANDLERS = {
    "nls-evolve": cmd_nls_evolve,
    "manybody-evolve": cmd_manybody_evolve,
    "converge-scan": cmd_converge_scan,
    "gp-residual": cmd_gp_residual,
    "bbgky-residual": cmd_bbgky_residual,
    "boardgame-classify": cmd_boardgame_classify,
    "boardgame-verify": cmd_boardgame_verify,
    "bound-report": cmd_bound_report,
    "mollifier-rate": cmd_mollifier_rate,
}


def run(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg, jobs = resolve(argv)
        out = Path(cfg.out)
        task = HANDLERS[cfg.command](cfg.params, out, cfg, jobs)
    except (ValidationError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if not argv or (argv and argv[0] not in COMMANDS):
            print(build_parser().format_usage(), file=sys.stderr, end="")
        return 2
    try:
        out.mkdir(parents=True, exist_ok=True)
        tensorio.write_json(out / "config.json", cfg.to_dict())
        summary = task()
    except Exception as exc:  # noqa: BLE001
        logging.getLogger(__name__).debug("runtime failure", exc_info=True)
        print(f"error: {cfg.command} failed: {exc}", file=sys.stderr)
        return 1
    print(f"{cfg.command}: {summary} out={out}")
    return 0


def main() -> None:
    sys.exit(run())
