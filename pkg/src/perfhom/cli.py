"""Command-line front end: configuration, caching, and report emission.

Every subcommand reads a single JSON or YAML config file, derives a
content hash from the canonicalized config, and writes its outputs under
``<out>/<command>_<hash>/`` next to a manifest recording the full
configuration.  Re-running with an identical config is served from the
cache (byte-identical outputs) unless ``--no-cache`` is given.

Exit codes: 0 success, 1 configuration/domain error, 2 solver failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .capacity import PExponent
from .cell import (
    CellConfig,
    alpha0_from_lcurve,
    build_cell_problem,
    default_tol_zero,
    estimate_lcurve,
    find_alpha0,
    solve_cell,
    write_alpha0_csv,
    write_extrapolation_csv,
    write_lcurve_csv,
    zero_set_fraction,
)
from .corrector import (
    CorrectorConfig,
    diagnostics,
    solve_corrector,
    write_diagnostics_csv,
)
from .errors import PerfhomError, SolverError
from .experiments import (
    HomogenizationStudy,
    run_study,
    solve_u0,
    solve_u_eps,
    write_report_csv,
)
from .field import field_for_unit_box, law_from_config
from .mesh import Grid, HoleStrategy, export_gridfunction_csv, write_phgf
from .solver import SolveConfig, report_csv_row

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2


# -- config plumbing -----------------------------------------------------


def load_config(path: Path) -> dict:
    text = Path(path).read_text()
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        cfg = yaml.safe_load(text)
    else:
        cfg = json.loads(text)
    if not isinstance(cfg, dict):
        raise PerfhomError(f"config root must be a mapping, got {type(cfg).__name__}")
    return cfg


def canonical_hash(command: str, config: dict) -> str:
    """Stable content hash; insensitive to key order, excludes timestamps."""
    payload = json.dumps(
        {"command": command, "config": config}, sort_keys=True, separators=(",", ":")
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def write_manifest(run_dir: Path, command: str, config: dict, outputs, wall: float):
    manifest = {
        "command": command,
        "config": config,
        "config_hash": canonical_hash(command, config),
        "outputs": sorted(outputs),
        "package_version": __version__,
        # timestamps are informational only; they never enter the hash
        "completed_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "wall_time_s": round(wall, 3),
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def cache_hit(run_dir: Path) -> bool:
    manifest = run_dir / "manifest.json"
    if not manifest.exists():
        return False
    try:
        listed = json.loads(manifest.read_text())["outputs"]
    except (json.JSONDecodeError, KeyError):
        return False
    return all((run_dir / name).exists() for name in listed)


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise PerfhomError(f"config key '{key}' is required")
    return cfg[key]


def _pe(cfg: dict) -> PExponent:
    return PExponent(float(_require(cfg, "p")), int(cfg.get("n", 2)))


def _law(cfg: dict):
    return law_from_config(_require(cfg, "law"))


def _seeds(cfg: dict):
    return [int(s) for s in cfg.get("seeds", [0, 1, 2])]


def _cell_config(cfg: dict, jobs: int) -> CellConfig:
    return CellConfig(
        cells_per_eps=int(cfg.get("cells_per_eps", 8)),
        tol_rel=float(cfg.get("tol_rel", 1e-6)),
        max_iter=int(cfg.get("max_iter", 200_000)),
        method=cfg.get("method", "auto"),
        jobs=jobs,
    )


# -- subcommand bodies ---------------------------------------------------


def cmd_field(cfg, run_dir, args):
    from .field import export_field_csv

    fld = field_for_unit_box(_law(cfg), int(cfg.get("seed", 0)), float(_require(cfg, "eps")), _pe(cfg).n)
    export_field_csv(fld, run_dir / "field.csv")
    return ["field.csv"]


def _grid_from(cfg, pe, eps):
    M = int(round(1.0 / eps))
    N = int(cfg.get("N", int(cfg.get("cells_per_eps", 8)) * M))
    return Grid(pe.n, N)


def cmd_solve(cfg, run_dir, args):
    pe = _pe(cfg)
    problem = cfg.get("problem", "cell")
    eps = float(cfg.get("eps", 0.25))
    seed = int(cfg.get("seed", 0))
    solve_cfg = SolveConfig(
        tol_rel=float(cfg.get("tol_rel", 1e-7)),
        max_iter=int(cfg.get("max_iter", 200_000)),
        method=cfg.get("method", "auto"),
    )
    if problem == "cell":
        prob = build_cell_problem(
            float(_require(cfg, "alpha")), eps, pe, _law(cfg), seed, _grid_from(cfg, pe, eps)
        )
        sol, report = solve_cell(prob, solve_cfg)
    elif problem == "corrector":
        fld = field_for_unit_box(_law(cfg), seed, eps, pe.n)
        run = solve_corrector(
            float(_require(cfg, "alpha0")),
            eps,
            fld,
            _grid_from(cfg, pe, eps),
            cfg.get("strategy", "resolved"),
            pe,
            CorrectorConfig(tol_rel=solve_cfg.tol_rel, method=solve_cfg.method),
        )
        sol, report = run.w, run.report
    elif problem in ("u_eps", "u0"):
        study = _study_from(cfg, pe)
        if problem == "u_eps":
            sol, report = solve_u_eps(study, eps, seed)
        else:
            sol, report = solve_u0(study, _grid_from(cfg, pe, eps))
    else:
        raise PerfhomError(f"unknown problem kind '{problem}'")
    write_phgf(sol, run_dir / "solution.phgf")
    export_gridfunction_csv(sol, run_dir / "solution.csv")
    with open(run_dir / "report.csv", "w", newline="") as fh:
        import csv as _csv

        row = report_csv_row(report)
        writer = _csv.DictWriter(fh, fieldnames=list(row))
        writer.writeheader()
        writer.writerow(row)
    return ["solution.phgf", "solution.csv", "report.csv"]


def cmd_cell(cfg, run_dir, args):
    pe = _pe(cfg)
    law = _law(cfg)
    alpha = float(_require(cfg, "alpha"))
    eps_list = [float(e) for e in _require(cfg, "eps_list")]
    from .cell import estimate_l

    row = estimate_l(alpha, eps_list, _seeds(cfg), law, pe, _cell_config(cfg, args.jobs))
    from .cell import LCurveEstimate

    write_lcurve_csv(LCurveEstimate(rows=[row]), run_dir / "fractions.csv")
    write_extrapolation_csv(LCurveEstimate(rows=[row]), run_dir / "extrapolation.csv")
    return ["fractions.csv", "extrapolation.csv"]


def cmd_lcurve(cfg, run_dir, args):
    pe = _pe(cfg)
    estimate = estimate_lcurve(
        [float(a) for a in _require(cfg, "alphas")],
        [float(e) for e in _require(cfg, "eps_list")],
        _seeds(cfg),
        _law(cfg),
        pe,
        _cell_config(cfg, args.jobs),
    )
    write_lcurve_csv(estimate, run_dir / "lcurve.csv")
    write_extrapolation_csv(estimate, run_dir / "extrapolation.csv")
    outputs = ["lcurve.csv", "extrapolation.csv"]
    if args.plot:
        outputs.append(_plot_lcurve(estimate, run_dir))
    return outputs


def cmd_alpha0(cfg, run_dir, args):
    bracket = [float(b) for b in _require(cfg, "bracket")]
    theta_l = float(cfg.get("theta_l", 0.02))
    tol_alpha = float(cfg.get("tol_alpha", 0.25))
    synthetic = cfg.get("synthetic")
    if synthetic is not None:
        # analytic fixture, e.g. {"kind": "ramp", "offset": 2.0}
        if synthetic.get("kind") != "ramp":
            raise PerfhomError(f"unknown synthetic estimator {synthetic!r}")
        offset = float(synthetic.get("offset", 2.0))
        result = find_alpha0(
            lambda a: max(0.0, a - offset), bracket, theta_l=theta_l, tol_alpha=tol_alpha
        )
    else:
        pe = _pe(cfg)
        result = alpha0_from_lcurve(
            [float(e) for e in _require(cfg, "eps_list")],
            _seeds(cfg),
            _law(cfg),
            pe,
            bracket,
            theta_l=theta_l,
            tol_alpha=tol_alpha,
            config=_cell_config(cfg, args.jobs),
        )
    write_alpha0_csv(result, run_dir / "alpha0.csv")
    write_lcurve_csv(result.lcurve, run_dir / "provenance.csv")
    return ["alpha0.csv", "provenance.csv"]


def cmd_corrector(cfg, run_dir, args):
    pe = _pe(cfg)
    law = _law(cfg)
    alpha0 = float(_require(cfg, "alpha0"))
    strategy = HoleStrategy(cfg.get("strategy", "resolved"))
    eps_list = [float(e) for e in _require(cfg, "eps_list")]
    deltas = [float(d) for d in cfg.get("deltas", [0.0])]
    grid_sizes = {float(k): int(v) for k, v in cfg.get("grid_sizes", {}).items()}
    ccfg = CorrectorConfig(
        tol_rel=float(cfg.get("tol_rel", 1e-7)), method=cfg.get("method", "auto")
    )
    diag_list = []
    for eps in eps_list:
        M = int(round(1.0 / eps))
        N = grid_sizes.get(eps, int(cfg.get("cells_per_eps", 8)) * M)
        grid = Grid(pe.n, N)
        for seed in _seeds(cfg):
            fld = field_for_unit_box(law, seed, eps, pe.n)
            for delta in deltas:
                run = solve_corrector(
                    alpha0, eps, fld, grid, strategy, pe, ccfg, delta=delta
                )
                diag_list.append(diagnostics(run))
    write_diagnostics_csv(diag_list, run_dir / "diagnostics.csv")
    return ["diagnostics.csv"]


def _study_from(cfg, pe) -> HomogenizationStudy:
    eps_list = [float(e) for e in _require(cfg, "eps_list")]
    return HomogenizationStudy(
        pe=pe,
        alpha0=float(_require(cfg, "alpha0")),
        eps_list=eps_list,
        seeds=_seeds(cfg),
        law=law_from_config(_require(cfg, "law")),
        load=float(cfg.get("load", -1.0)),
        strategy=HoleStrategy(cfg.get("strategy", "resolved")),
        grid_sizes={float(k): int(v) for k, v in cfg.get("grid_sizes", {}).items()},
        cells_per_eps=int(cfg.get("cells_per_eps", 8)),
        tol_rel=float(cfg.get("tol_rel", 1e-7)),
        method=cfg.get("method", "auto"),
        literal_psi_on_holes=bool(cfg.get("literal_psi_on_holes", True)),
    )


def cmd_converge(cfg, run_dir, args):
    study = _study_from(cfg, _pe(cfg))
    report = run_study(study, with_obstacle=bool(cfg.get("with_obstacle", False)))
    write_report_csv(report, run_dir / "report.csv")
    _write_trends(report, run_dir / "trends.csv")
    outputs = ["report.csv", "trends.csv"]
    if args.plot:
        outputs.append(_plot_convergence(report, run_dir))
    return outputs


def cmd_obstacle(cfg, run_dir, args):
    study = _study_from(cfg, _pe(cfg))
    report = run_study(study, with_obstacle=True)
    write_report_csv(report, run_dir / "report.csv")
    _write_trends(report, run_dir / "trends.csv")
    return ["report.csv", "trends.csv"]


def _write_trends(report, path):
    import csv as _csv

    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(
            ["eps", "mean_lp_error", "mean_obstacle_lp_error", "trend_decreasing", "final_ratio"]
        )
        for eps in report.study.eps_list:
            writer.writerow(
                [
                    repr(eps),
                    repr(report.mean_lp_by_eps[eps]),
                    repr(report.mean_obstacle_lp_by_eps[eps]),
                    int(report.trend_decreasing),
                    repr(report.final_ratio),
                ]
            )


# -- plots ---------------------------------------------------------------


def _plot_lcurve(estimate, run_dir) -> str:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots()
    alphas = estimate.alphas
    ax.plot(alphas, [r.l_extrapolated for r in estimate.rows], "o-", label="extrapolated")
    for eps in estimate.rows[0].eps_list:
        ax.plot(alphas, [r.mean_by_eps[eps] for r in estimate.rows], "--", label=f"eps={eps}")
    ax.set_xlabel("alpha")
    ax.set_ylabel("zero-set fraction")
    ax.legend()
    fig.savefig(run_dir / "lcurve.svg")
    plt.close(fig)
    return "lcurve.svg"


def _plot_convergence(report, run_dir) -> str:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots()
    eps = report.study.eps_list
    ax.loglog(eps, [report.mean_lp_by_eps[e] for e in eps], "o-", label="|u_eps - u0|_Lp")
    obs = [report.mean_obstacle_lp_by_eps[e] for e in eps]
    if np.all(np.isfinite(obs)):
        ax.loglog(eps, obs, "s-", label="|h_eps - h0|_Lp")
    ax.set_xlabel("eps")
    ax.set_ylabel("mean Lp error")
    ax.legend()
    fig.savefig(run_dir / "convergence.svg")
    plt.close(fig)
    return "convergence.svg"


COMMANDS = {
    "field": cmd_field,
    "solve": cmd_solve,
    "cell": cmd_cell,
    "lcurve": cmd_lcurve,
    "alpha0": cmd_alpha0,
    "corrector": cmd_corrector,
    "converge": cmd_converge,
    "obstacle": cmd_obstacle,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perfhom",
        description="Numerical studies of p-Laplacian problems in perforated domains.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, default=Path("out"))
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--no-cache", action="store_true")
        p.add_argument("--plot", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
    except (OSError, json.JSONDecodeError, PerfhomError) as exc:
        print(f"error: cannot read config {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    run_dir = args.out / f"{args.command}_{canonical_hash(args.command, config)}"
    if not args.no_cache and cache_hit(run_dir):
        print(f"cache hit: {run_dir}")
        return EXIT_OK
    run_dir.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    try:
        outputs = COMMANDS[args.command](config, run_dir, args)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except PerfhomError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KeyError, TypeError, ValueError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_manifest(run_dir, args.command, config, outputs, time.perf_counter() - t0)
    print(f"wrote {run_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
