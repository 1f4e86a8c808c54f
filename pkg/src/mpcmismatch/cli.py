"""Command-line experiment runner: ``simulate``, ``sweep``, ``certify`` and ``reproduce``.

Exit codes: 0 success, 2 invalid configuration, 3 infeasible initial state,
4 certification verdict ``unstable``.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .closedloop import (
    _as_rows,
    cost_difference_field,
    delta_bisection,
    descent_certification,
    descent_samples,
    fit_gamma_v,
    lyapunov_increase_envelope,
    rpi_check,
    run_closed_loop,
    sublevel_box,
)
from .compfn import JointComparisonFn, scaling_limit_estimate
from .errors import InfeasibleStartError, InvalidInputError, MpcMismatchError
from .model import grid_points
from .scenarios import SCENARIO_NAMES, Scenario, get_scenario
from .svgplot import contour_chart, line_chart
from .terminal import eigenvalues_2x2, pendulum_linear_feedback

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_UNSTABLE = 0, 2, 3, 4
DEFAULT_LEVELS = (-1.0, -0.1, 0.0, 0.1, 1.0)
TAU_GRID = (1e-3, 1e-2, 1e-1, 1.0)


@dataclass
class ExperimentConfig:
    scenario: str = "integrator"
    command: str = "simulate"
    x0: Optional[list] = None
    thetas: Optional[list] = None
    k_max: Optional[int] = None
    rho: Optional[float] = None
    delta: Optional[float] = None
    x_points: int = 81
    theta_points: int = 41
    x_range: Optional[list] = None
    theta_range: Optional[list] = None
    levels: list = field(default_factory=lambda: list(DEFAULT_LEVELS))
    rpi_samples: int = 100
    out: str = "out"
    seed: int = 0
    prefix: Optional[str] = None
    tag: str = "diagnostic"

    def validate(self, scn: Scenario) -> "ExperimentConfig":
        if self.x0 is not None:
            self.x0 = _as_rows(self.x0, scn.plant.n).tolist()
        if self.thetas is not None:
            self.thetas = _as_rows(self.thetas, scn.plant.n_theta).tolist()
        for name in ("k_max", "x_points", "theta_points", "rpi_samples"):
            v = getattr(self, name)
            if v is not None and (not isinstance(v, int) or v < 1):
                raise InvalidInputError(f"{name} must be a positive integer")
        for name in ("rho", "delta"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v >= 0):
                raise InvalidInputError(f"{name} must be a finite nonnegative number")
        if self.rho is not None and self.rho <= 0:
            raise InvalidInputError("rho must be positive")
        for name in ("x_range", "theta_range"):
            v = getattr(self, name)
            if v is not None and (len(v) != 2 or not v[0] < v[1]):
                raise InvalidInputError(f"{name} must be [lo, hi] with lo < hi")
        return self


def load_config(path: Optional[str], overrides: dict) -> ExperimentConfig:
    data: dict = {}
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise InvalidInputError("config must be a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise InvalidInputError(f"unknown config keys: {', '.join(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**data)


# --- output helpers ---------------------------------------------------------------

def _num(v) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return _num(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else _num(v)
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2) + "\n")


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(c) for c in row])


class Manifest:
    def __init__(self, out: Path):
        self.out = out
        self.entries: list[dict] = []

    def add(self, name: str, tag: str, description: str) -> Path:
        self.entries.append({"file": name, "tag": tag, "description": description})
        return self.out / name

    def write(self, extra: Optional[dict] = None) -> None:
        doc = dict(extra or {})
        doc["artifacts"] = self.entries + [{"file": "manifest.json", "tag": "diagnostic", "description": "this index"}]
        write_json(self.out / "manifest.json", doc)


def _labels(prefix: str, dim: int) -> list[str]:
    return [prefix] if dim == 1 else [f"{prefix}{i + 1}" for i in range(dim)]


def _theta_label(th: Sequence[float]) -> str:
    return "theta=(" + ",".join(f"{v:g}" for v in th) + ")"


# --- commands ---------------------------------------------------------------------------

def cmd_simulate(cfg: ExperimentConfig, manifest: Manifest) -> dict:
    """Closed-loop runs for every (x0, theta) pair: one CSV plus a chart per state coordinate."""
    scn = get_scenario(cfg.scenario)
    cfg.validate(scn)
    n, m, nt = scn.plant.n, scn.plant.m, scn.plant.n_theta
    x0s = cfg.x0 or scn.x0
    thetas = cfg.thetas or scn.thetas
    k_max = cfg.k_max or scn.k_max
    prefix = cfg.prefix or "trajectories"
    rows, series = [], {j: [] for j in range(n)}
    summary = []
    run_id = 0
    for x0 in x0s:
        for th in thetas:
            run = run_closed_loop(scn.controller, scn.plant, x0, th, k_max)
            dv = run.delta_v
            for k, x in enumerate(run.states):
                u = run.inputs[k] if k < len(run.inputs) else [""] * m
                d = dv[k] if k < len(dv) else ""
                rows.append([run_id, k, *th, *x, *u, run.values[k], d])
            for j in range(n):
                series[j].append((f"x0={x0} {_theta_label(th)}", list(range(len(run.states))), run.states[:, j].tolist()))
            summary.append({
                "run": run_id,
                "x0": list(x0),
                "theta": list(th),
                "steps": len(run.inputs),
                "escaped": run.escaped,
                "final_norm": float(run.norms[-1]),
            })
            run_id += 1
    header = ["run", "k", *_labels("theta", nt), *_labels("x", n), *_labels("u", m), "V", "dV"]
    write_csv(manifest.add(f"{prefix}.csv", cfg.tag, "closed-loop runs (k, x, u, V, dV)"), header, rows)
    labels = _labels("x", n)
    for j in range(n):
        name = f"{prefix}.svg" if n == 1 else f"{prefix}_{labels[j]}.svg"
        svg = line_chart(series[j], f"{scn.name}: closed-loop {labels[j]}(k)", "k", labels[j])
        manifest.add(name, cfg.tag, f"chart of {labels[j]} along each run").write_text(svg)
    return {"runs": summary}


def _sweep_grids(cfg: ExperimentConfig, scn: Scenario):
    prob = scn.problem
    lo, hi = prob.state_box
    if cfg.x_range is not None:
        lo = np.full(scn.plant.n, cfg.x_range[0])
        hi = np.full(scn.plant.n, cfg.x_range[1])
    if scn.plant.n == 1:
        xs = np.linspace(lo[0], hi[0], cfg.x_points).reshape(-1, 1)
    else:
        xs = grid_points(lo, hi, max(2, int(round(math.sqrt(cfg.x_points)))))
    if cfg.thetas is not None:
        ths = np.array(cfg.thetas, dtype=float)
    elif scn.plant.n_theta == 1:
        a, b = cfg.theta_range or scn.theta_range
        ths = np.linspace(a, b, cfg.theta_points).reshape(-1, 1)
    else:
        ths = np.array(scn.thetas[:1], dtype=float)
    return xs, ths


def cmd_sweep(cfg: ExperimentConfig, manifest: Manifest) -> dict:
    """Cost difference field on a grid, CSV plus contour chart."""
    scn = get_scenario(cfg.scenario)
    cfg.validate(scn)
    n, nt = scn.plant.n, scn.plant.n_theta
    xs, ths = _sweep_grids(cfg, scn)
    fld = cost_difference_field(scn.controller, scn.plant, xs, ths)
    prefix = cfg.prefix or "field"
    dv = np.where(fld.feasible[:, None], fld.dv, math.inf)
    rows = [[*xs[i], *ths[j], dv[i, j]] for i in range(len(xs)) for j in range(len(ths))]
    write_csv(manifest.add(f"{prefix}.csv", cfg.tag, "cost difference dV(x, theta)"),
              [*_labels("x", n), *_labels("theta", nt), "value"], rows)
    levels = [float(v) for v in cfg.levels]
    if n == 1 and nt == 1:
        svg = contour_chart(xs[:, 0], ths[:, 0], dv, levels, f"{scn.name}: dV(x, theta)", "x", "theta")
        manifest.add(f"{prefix}.svg", cfg.tag, "contours of dV").write_text(svg)
    elif n == 2:
        side = int(round(math.sqrt(len(xs))))
        a1 = xs[::side, 0]
        a2 = xs[:side, 1]
        for j, th in enumerate(ths):
            svg = contour_chart(a1, a2, dv[:, j].reshape(side, side), levels,
                                f"{scn.name}: dV(x, {_theta_label(th)})", "x1", "x2")
            manifest.add(f"{prefix}_theta{j}.svg", cfg.tag, f"contours of dV at {_theta_label(th)}").write_text(svg)
    with np.errstate(invalid="ignore"):
        finite = dv[np.isfinite(dv)]
    return {
        "points": int(dv.size),
        "infeasible": int(np.sum(~np.isfinite(dv))),
        "max_dv": float(finite.max()) if finite.size else math.nan,
        "min_dv": float(finite.min()) if finite.size else math.nan,
    }


def certify(scn: Scenario, rho: float, delta: float, x_points: int = 81, theta_points: int = 41,
            rpi_samples: int = 100, seed: int = 0):
    """Descent verdict, RPI check, fitted increase bound, scaling scan and empirical delta."""
    prob = scn.problem
    lo, hi = sublevel_box(prob, rho)
    if scn.plant.n == 1:
        xs = np.linspace(lo[0], hi[0], x_points).reshape(-1, 1)
    else:
        xs = grid_points(lo, hi, max(2, int(round(math.sqrt(x_points)))))
    xs[np.abs(xs) < 1e-12 * float(np.max(hi - lo))] = 0.0  # exact origin on symmetric grids
    ths = scn.theta_samples(delta, theta_points)
    samples = descent_samples(scn.controller, scn.plant, xs, ths, scn.lyapunov)
    report = descent_certification(
        scn.controller, scn.plant, rho, delta, xs, ths, scn.alpha3,
        lyapunov=scn.lyapunov, theta_norm=scn.theta_norm, precomputed=samples,
    )
    inside = np.array([s.x for s in samples[0] if s.value <= rho])
    inside = np.unique(inside, axis=0) if len(inside) else xs
    if scn.lyapunov is None:
        rpi = rpi_check(scn.controller, scn.plant, rho, delta, rpi_samples, seed, ths)
        report.extras["rpi_check"] = rpi.to_dict()
        if rpi.ok is False:
            report.rpi_ok = False
            report.verdict = "unstable"
        gamma = fit_gamma_v(scn.controller, scn.plant, inside, ths, quadratic=scn.smooth, theta_norm=scn.theta_norm)
    else:
        report.extras["rpi_check"] = "sublevel sets of the candidate V, checked on the descent samples"
        env = lyapunov_increase_envelope(scn.lyapunov, scn.controller, scn.plant, inside, ths, scn.theta_norm)
        gamma = JointComparisonFn(lambda s, t, env=env: env(t) * s * s, "sigma_V(t)*s^2 (candidate V)")
        report.extras["sigma_v"] = env.to_dict()
        report.extras["lyapunov"] = scn.notes.get("lyapunov", "candidate")
    report.lyap_increase_fit = gamma
    s_max = min(rho, max(float(np.max(np.linalg.norm(inside, axis=1))), 1e-6))
    taus = [t for t in TAU_GRID if t <= delta] or [delta]
    if delta not in taus and delta > 0:
        taus.append(delta)
    scan = []
    for tau in taus:
        if tau <= 0:
            continue
        scan.append(scaling_limit_estimate(gamma, scn.alpha3, tau, 1e-8, s_max, 64))
    passing = [r for r in scan if r.verdict == "passes"]
    report.scaling = passing[-1] if passing else (scan[0] if scan else None)
    report.extras["scaling_scan"] = [{"tau": r.tau, "verdict": r.verdict, "limit_estimate": r.limit_estimate} for r in scan]
    report.delta_star = delta_bisection(samples[0], rho, delta, scn.alpha3, theta_norm=scn.theta_norm)
    return report


def cmd_certify(cfg: ExperimentConfig, manifest: Manifest) -> dict:
    scn = get_scenario(cfg.scenario)
    cfg.validate(scn)
    rho = cfg.rho if cfg.rho is not None else scn.rho
    delta = cfg.delta if cfg.delta is not None else scn.delta
    report = certify(scn, rho, delta, cfg.x_points, cfg.theta_points, cfg.rpi_samples, cfg.seed)
    doc = {"scenario": scn.name, **report.to_dict()}
    write_json(manifest.add(f"{cfg.prefix or 'certification'}.json", cfg.tag, "certification report"), doc)
    return {"verdict": report.verdict, "delta_star": report.delta_star}


REPRODUCE_PLANS = {
    "integrator": [("sweep", "fig1_contour"), ("simulate", "fig2_trajectories"), ("certify", None)],
    "signed-sqrt": [("sweep", "fig3_contour"), ("simulate", "fig4_trajectories"), ("certify", None)],
    "sin": [("sweep", "sin_contour"), ("simulate", "sin_trajectories"), ("certify", None)],
    "pendulum": [("constants", "terminal_constants"), ("simulate", "fig5_trajectories")],
}


def _pendulum_constants(scn: Scenario, manifest: Manifest) -> None:
    fb = pendulum_linear_feedback()
    ev = eigenvalues_2x2(fb.A_K)
    doc = {
        "A_K": fb.A_K.tolist(),
        "eigenvalues_A_K": sorted(float(e.real) for e in ev),
        **scn.notes["constants"],
        "k_hat": scn.notes["k_hat"],
        "sample_time": scn.notes["sample_time"],
    }
    write_json(manifest.add("terminal_constants.json", "terminal_constants", "P_f, a, b, x*, c_f and A_K spectrum"), doc)


def cmd_reproduce(name: str, out: Path, seed: int = 0) -> Manifest:
    if name not in REPRODUCE_PLANS:
        raise InvalidInputError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIO_NAMES)}")
    scn = get_scenario(name)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(out)
    summaries = {}
    for command, tag in REPRODUCE_PLANS[name]:
        if command == "constants":
            _pendulum_constants(scn, manifest)
            continue
        cfg = ExperimentConfig(scenario=name, command=command, out=str(out), seed=seed,
                               prefix=tag, tag=tag or "diagnostic")
        summaries[command] = COMMANDS[command](cfg, manifest)
    manifest.write({"scenario": name, "seed": seed, "summaries": summaries})
    return manifest


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "certify": cmd_certify}


# --- argument parsing ---------------------------------------------------------------------

def _vector(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpcmismatch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "closed-loop runs under parameter mismatch"),
        ("sweep", "cost difference field on an (x, theta) grid"),
        ("certify", "robust vs strong stability certification"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--scenario", choices=SCENARIO_NAMES)
        p.add_argument("--theta", type=_vector, action="append", help="parameter vector, repeatable")
        p.add_argument("--x0", type=_vector, action="append", help="initial state, repeatable")
        p.add_argument("--rho", type=float)
        p.add_argument("--delta", type=float)
        p.add_argument("--k-max", type=int, dest="k_max")
        p.add_argument("--x-points", type=int, dest="x_points")
        p.add_argument("--theta-points", type=int, dest="theta_points")
        p.add_argument("--levels", type=_vector)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int)
    p = sub.add_parser("reproduce", help="all figure data for one scenario")
    p.add_argument("name")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        if args.command == "reproduce":
            out = Path(args.out or f"reproduce_{args.name}")
            manifest = cmd_reproduce(args.name, out, args.seed)
            print(f"wrote {len(manifest.entries) + 1} files to {out}")
            return EXIT_OK
        overrides = {
            "scenario": args.scenario, "thetas": args.theta, "x0": args.x0, "rho": args.rho,
            "delta": args.delta, "k_max": args.k_max, "x_points": args.x_points,
            "theta_points": args.theta_points, "levels": args.levels, "out": args.out, "seed": args.seed,
        }
        cfg = load_config(args.config, overrides)
        cfg.command = args.command
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        manifest = Manifest(out)
        summary = COMMANDS[args.command](cfg, manifest)
        manifest.write({"scenario": cfg.scenario, "command": cfg.command, "seed": cfg.seed, "summary": summary})
        print(json.dumps(_jsonable(summary)))
        if summary.get("verdict") == "unstable":
            return EXIT_UNSTABLE
        return EXIT_OK
    except InfeasibleStartError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except MpcMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
