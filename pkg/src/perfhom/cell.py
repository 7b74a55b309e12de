"""Cell obstacle problems and the critical constant alpha_0.

A cell problem minimizes int (1/p)|grad v|^p + alpha int v minus atomic
sources gamma(k) eps^n v(eps k), over nonnegative v vanishing on the
boundary.  The volume fraction of its zero set, extrapolated to eps -> 0
by Monte Carlo over field seeds, gives the function l(alpha); bisection
on l(alpha) > theta_l estimates alpha_0 = sup{alpha : l(alpha) = 0}.

The atomic sources are placed exactly at lattice nodes (the grid N is a
multiple of 1/eps), so no geometric hole needs to be resolved here.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from .capacity import PExponent
from .errors import BracketError, ConfigError, SolverError
from .field import CapacityField, Law, field_for_unit_box, inverse_cell_size
from .mesh import Grid, GridFunction
from .solver import (
    ConstraintSpec,
    EnergySpec,
    SolveConfig,
    SolveReport,
    assemble,
    minimize,
)

#: Default grid refinement: subdivisions per lattice cell.
DEFAULT_CELLS_PER_EPS = 8
#: Default numerical threshold for "l(alpha) = 0" in the bisection.
DEFAULT_THETA_L = 0.02
#: Relative scale of the zero-set tolerance (times sup v).
TOL_ZERO_SCALE = 1e-6


@dataclass(frozen=True)
class CellProblem:
    """One instance of the cell obstacle problem on the unit box."""

    alpha: float
    eps: float
    pe: PExponent
    field: CapacityField
    grid: Grid

    def __post_init__(self):
        M = inverse_cell_size(self.eps)
        if self.grid.N % M != 0:
            raise ConfigError(
                f"grid N={self.grid.N} must be a multiple of 1/eps={M} "
                "so hole centers fall on nodes"
            )
        if self.grid.n != self.pe.n or self.field.n != self.pe.n:
            raise ConfigError("dimension mismatch between grid, field, and exponents")


@dataclass(frozen=True)
class CellConfig:
    """Knobs shared by all Monte Carlo cell runs."""

    cells_per_eps: int = DEFAULT_CELLS_PER_EPS
    tol_rel: float = 1e-6
    max_iter: int = 200_000
    method: str = "auto"
    jobs: int = 1
    max_failure_fraction: float = 0.2

    def solve_config(self) -> SolveConfig:
        return SolveConfig(tol_rel=self.tol_rel, max_iter=self.max_iter, method=self.method)

    def grid_for(self, eps: float, n: int) -> Grid:
        return Grid(n, self.cells_per_eps * inverse_cell_size(eps))


@dataclass
class InstanceRecord:
    """One solved (alpha, eps, seed) instance."""

    alpha: float
    eps: float
    seed: int
    fraction: float
    tol_zero: float
    solver_iters: int
    converged: bool


@dataclass
class LCurveRow:
    """Monte Carlo estimate of l(alpha) for a single alpha."""

    alpha: float
    eps_list: list
    seeds: list
    records: list  # InstanceRecord, sorted by (eps, seed)
    mean_by_eps: dict
    std_by_eps: dict
    ci95_by_eps: dict
    l_extrapolated: float
    failures: list = dc_field(default_factory=list)


@dataclass
class LCurveEstimate:
    """l(alpha) estimates over an alpha grid."""

    rows: list

    @property
    def alphas(self) -> list:
        return [row.alpha for row in self.rows]

    def row_for(self, alpha: float) -> LCurveRow:
        for row in self.rows:
            if row.alpha == alpha:
                return row
        raise KeyError(alpha)


@dataclass
class AlphaZeroResult:
    """Bisection output with its full Monte Carlo provenance."""

    alpha0: float
    bracket_lo: float
    bracket_hi: float
    theta_l: float
    tol_alpha: float
    lcurve: LCurveEstimate


def build_cell_problem(
    alpha: float, eps: float, pe: PExponent, law: Law, seed: int, grid: Grid = None
) -> CellProblem:
    if grid is None:
        grid = Grid(pe.n, DEFAULT_CELLS_PER_EPS * inverse_cell_size(eps))
    fld = field_for_unit_box(law, seed, eps, pe.n)
    return CellProblem(alpha=alpha, eps=eps, pe=pe, field=fld, grid=grid)


def _interior_point_masses(problem: CellProblem):
    """(node_index, gamma eps^n) for every interior lattice site."""
    M = inverse_cell_size(problem.eps)
    stride = problem.grid.N // M
    n = problem.pe.n
    axes = [np.arange(1, M)] * n
    sites = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    gammas = problem.field.gamma_at_sites(sites)
    weight = problem.eps**n
    masses = []
    for site, g in zip(sites, gammas):
        if g > 0:
            masses.append((problem.grid.node_index(site * stride), g * weight))
    return tuple(masses)


def solve_cell(problem: CellProblem, config: SolveConfig = None):
    """Solve one cell obstacle problem.

    Returns (GridFunction, SolveReport).  The constraint set is v >= 0 at
    every node with v = 0 on the boundary.
    """
    spec = EnergySpec(
        pe=problem.pe,
        bulk_linear=problem.alpha,
        point_masses=_interior_point_masses(problem),
    )
    obj = assemble(spec, problem.grid)
    cons = ConstraintSpec.dirichlet_zero_boundary(problem.grid).with_lower_bound(
        np.arange(problem.grid.num_nodes), 0.0
    )
    return minimize(obj, cons, config or SolveConfig(tol_rel=1e-6))


def default_tol_zero(v: GridFunction) -> float:
    """Zero-set tolerance: relative to sup v, floored away from 0."""
    return TOL_ZERO_SCALE * max(float(v.values.max(initial=0.0)), 1e-12)


def zero_set_fraction(v: GridFunction, tol_zero: float = None) -> float:
    """Volume fraction of elements whose nodes all satisfy v <= tol_zero.

    Elements whose every vertex lies on the boundary carry no information
    about v (their nodes are pinned by the Dirichlet data); they are
    excluded from both numerator and denominator so that solutions that
    are positive inside report a fraction of exactly 0.
    """
    if tol_zero is None:
        tol_zero = default_tol_zero(v)
    if float(v.values.min()) < -tol_zero:
        raise ConfigError(
            f"negative values below -tol_zero={-tol_zero:.3g}; not an obstacle solution"
        )
    grid = v.grid
    node_zero = v.values <= tol_zero
    elem_zero = np.all(node_zero[grid.elements], axis=1)
    informative = np.any(grid.interior_mask[grid.elements], axis=1)
    denom = float(np.dot(grid.volumes, informative))
    return float(np.dot(grid.volumes, elem_zero & informative)) / denom


def _solve_instance(args):
    """Worker for the Monte Carlo farm; must stay picklable/top-level."""
    alpha, eps, N, seed, law, pe, tol_rel, max_iter, method = args
    try:
        grid = Grid(pe.n, N)
        problem = build_cell_problem(alpha, eps, pe, law, seed, grid)
        v, report = solve_cell(
            problem, SolveConfig(tol_rel=tol_rel, max_iter=max_iter, method=method)
        )
        tz = default_tol_zero(v)
        frac = zero_set_fraction(v, tz)
        return ("ok", eps, seed, frac, tz, report.iterations, report.converged)
    except Exception as exc:  # noqa: BLE001 - aggregated by the farm
        return ("fail", eps, seed, f"{type(exc).__name__}: {exc}", 0.0, 0, False)


def estimate_l(
    alpha: float,
    eps_list,
    seeds,
    law: Law,
    pe: PExponent,
    config: CellConfig = None,
) -> LCurveRow:
    """Monte Carlo estimate of l(alpha) over (eps, seed) instances.

    Per-eps means feed a linear-in-eps extrapolation through the two
    smallest eps values; the result is clamped to [0, 1] and the raw
    per-instance fractions are retained.
    """
    cfg = config or CellConfig()
    eps_list = sorted(set(float(e) for e in eps_list), reverse=True)
    seeds = sorted(set(int(s) for s in seeds))
    if len(eps_list) < 2:
        raise ConfigError(f"need >= 2 eps values, got {eps_list}")
    if len(seeds) < 3:
        raise ConfigError(f"need >= 3 seeds, got {seeds}")
    tasks = [
        (
            alpha,
            eps,
            cfg.cells_per_eps * inverse_cell_size(eps),
            seed,
            law,
            pe,
            cfg.tol_rel,
            cfg.max_iter,
            cfg.method,
        )
        for eps in eps_list
        for seed in seeds
    ]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_solve_instance, tasks))
    else:
        results = [_solve_instance(t) for t in tasks]
    # deterministic reduction regardless of completion order
    results.sort(key=lambda r: (-r[1], r[2]))

    records, failures = [], []
    for status, eps, seed, payload, tz, iters, conv in results:
        if status == "ok":
            records.append(
                InstanceRecord(alpha, eps, seed, payload, tz, iters, conv)
            )
        else:
            failures.append((eps, seed, payload))
    if len(failures) > cfg.max_failure_fraction * len(tasks):
        raise SolverError(
            f"{len(failures)}/{len(tasks)} cell instances failed at alpha={alpha}: "
            + "; ".join(str(f) for f in failures[:5])
        )

    mean_by_eps, std_by_eps, ci_by_eps = {}, {}, {}
    for eps in eps_list:
        fr = np.array([r.fraction for r in records if r.eps == eps])
        if len(fr) == 0:
            raise SolverError(f"all instances failed at alpha={alpha}, eps={eps}")
        mean_by_eps[eps] = float(fr.mean())
        std = float(fr.std(ddof=1)) if len(fr) > 1 else 0.0
        std_by_eps[eps] = std
        ci_by_eps[eps] = 1.96 * std / math.sqrt(len(fr))

    e1, e2 = sorted(eps_list)[:2]  # the two smallest
    f1, f2 = mean_by_eps[e1], mean_by_eps[e2]
    slope = (f2 - f1) / (e2 - e1)
    l0 = min(max(f1 - slope * e1, 0.0), 1.0)
    return LCurveRow(
        alpha=alpha,
        eps_list=eps_list,
        seeds=seeds,
        records=records,
        mean_by_eps=mean_by_eps,
        std_by_eps=std_by_eps,
        ci95_by_eps=ci_by_eps,
        l_extrapolated=l0,
        failures=failures,
    )


def estimate_lcurve(
    alphas, eps_list, seeds, law: Law, pe: PExponent, config: CellConfig = None
) -> LCurveEstimate:
    rows = [estimate_l(a, eps_list, seeds, law, pe, config) for a in sorted(alphas)]
    return LCurveEstimate(rows=rows)


def find_alpha0(
    l_estimator,
    bracket,
    theta_l: float = DEFAULT_THETA_L,
    tol_alpha: float = 0.05,
    max_iter: int = 60,
) -> AlphaZeroResult:
    """Bisection for alpha_0 on the predicate l(alpha) > theta_l.

    ``l_estimator`` maps alpha to either a float or an LCurveRow; the
    bracket must satisfy l(lo) <= theta_l < l(hi).
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise ConfigError(f"bracket must satisfy lo < hi, got [{lo}, {hi}]")
    rows = []

    def evaluate(a):
        out = l_estimator(a)
        if isinstance(out, LCurveRow):
            rows.append(out)
            return out.l_extrapolated
        return float(out)

    l_lo, l_hi = evaluate(lo), evaluate(hi)
    if l_lo > theta_l or l_hi <= theta_l:
        raise BracketError(
            f"bracket [{lo}, {hi}] invalid: need l(lo) <= {theta_l} < l(hi), "
            f"got l(lo)={l_lo:.4g}, l(hi)={l_hi:.4g}",
            lo_estimate=l_lo,
            hi_estimate=l_hi,
        )
    for _ in range(max_iter):
        if hi - lo <= tol_alpha:
            break
        mid = 0.5 * (lo + hi)
        if evaluate(mid) > theta_l:
            hi = mid
        else:
            lo = mid
    return AlphaZeroResult(
        alpha0=0.5 * (lo + hi),
        bracket_lo=lo,
        bracket_hi=hi,
        theta_l=theta_l,
        tol_alpha=tol_alpha,
        lcurve=LCurveEstimate(rows=sorted(rows, key=lambda r: r.alpha)),
    )


def alpha0_from_lcurve(
    eps_list,
    seeds,
    law: Law,
    pe: PExponent,
    bracket,
    theta_l: float = DEFAULT_THETA_L,
    tol_alpha: float = 0.05,
    config: CellConfig = None,
) -> AlphaZeroResult:
    """Convenience wrapper wiring estimate_l into the bisection."""

    def estimator(alpha):
        return estimate_l(alpha, eps_list, seeds, law, pe, config)

    return find_alpha0(estimator, bracket, theta_l=theta_l, tol_alpha=tol_alpha)


# -- artifacts -----------------------------------------------------------

LCURVE_COLUMNS = ["alpha", "eps", "seed", "fraction", "tol_zero", "solver_iters"]


def write_lcurve_csv(estimate: LCurveEstimate, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LCURVE_COLUMNS)
        for row in estimate.rows:
            for rec in row.records:
                writer.writerow(
                    [
                        repr(rec.alpha),
                        repr(rec.eps),
                        rec.seed,
                        repr(rec.fraction),
                        repr(rec.tol_zero),
                        rec.solver_iters,
                    ]
                )


def write_alpha0_csv(result: AlphaZeroResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha0", "bracket_lo", "bracket_hi", "theta_l", "tol_alpha"])
        writer.writerow(
            [
                repr(result.alpha0),
                repr(result.bracket_lo),
                repr(result.bracket_hi),
                repr(result.theta_l),
                repr(result.tol_alpha),
            ]
        )


def write_extrapolation_csv(estimate: LCurveEstimate, path) -> None:
    """Per-alpha summary: means, CIs, and the extrapolated l."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "eps", "mean_fraction", "std", "ci95", "l_extrapolated"])
        for row in estimate.rows:
            for eps in row.eps_list:
                writer.writerow(
                    [
                        repr(row.alpha),
                        repr(eps),
                        repr(row.mean_by_eps[eps]),
                        repr(row.std_by_eps[eps]),
                        repr(row.ci95_by_eps[eps]),
                        repr(row.l_extrapolated),
                    ]
                )
