"""Finite-eps convergence studies toward the homogenized limit.

The perforated minimizer u^eps (constraint u >= 0 on the holes) is
compared against the limit minimizer u_0 of the penalized functional
F_0(v) = int (1/p)|grad v|^p + (alpha_0/p) v_-^p - f v.  The same
machinery covers the oscillating-obstacle variant, the recovery-sequence
upper bound, and the lower-semicontinuity margin.

Default load is f = -1: it drives the solution negative, which is the
regime where the hole constraint binds and the v_-^p penalty is visible.
With f >= 0 the perforation is asymptotically invisible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field

import numpy as np

from .capacity import PExponent
from .corrector import CorrectorRun
from .errors import ConfigError, SolverError
from .field import CapacityField, Law, field_for_unit_box, holes_from_field
from .mesh import (
    Grid,
    GridFunction,
    HoleStrategy,
    realize_holes,
    restrict_to_coarse,
)
from .solver import (
    ConstraintSpec,
    EnergySpec,
    SolveConfig,
    assemble,
    minimize,
)


def default_psi(n: int):
    """Sign-changing oscillating-obstacle profile, strictly negative somewhere."""

    def psi(*coords):
        out = 0.1
        for c in coords:
            out = out * np.sin(2 * np.pi * np.asarray(c))
        return -0.2 + out

    return psi


@dataclass
class HomogenizationStudy:
    """Configuration of one Theorem-style convergence run."""

    pe: PExponent
    alpha0: float
    eps_list: list
    seeds: list
    law: Law
    load: object = -1.0
    psi: object = None  # oscillating-obstacle profile; None -> default_psi
    strategy: HoleStrategy = HoleStrategy.RESOLVED
    grid_sizes: dict = dc_field(default_factory=dict)  # eps -> N
    cells_per_eps: int = 8
    tol_rel: float = 1e-7
    max_iter: int = 200_000
    method: str = "auto"
    literal_psi_on_holes: bool = True

    def __post_init__(self):
        eps = [float(e) for e in self.eps_list]
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError(f"eps list must be strictly decreasing, got {eps}")
        self.eps_list = eps
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.alpha0 < 0:
            raise ConfigError(f"alpha0 must be >= 0, got {self.alpha0}")

    def grid_for(self, eps: float) -> Grid:
        M = int(round(1.0 / eps))
        N = self.grid_sizes.get(eps, self.cells_per_eps * M)
        if N % M != 0:
            raise ConfigError(f"N={N} not a multiple of 1/eps={M}")
        return Grid(self.pe.n, N)

    def finest_grid(self) -> Grid:
        return self.grid_for(self.eps_list[-1])

    def solve_config(self) -> SolveConfig:
        return SolveConfig(tol_rel=self.tol_rel, max_iter=self.max_iter, method=self.method)

    def load_values(self, grid: Grid) -> np.ndarray:
        if callable(self.load):
            return grid.interpolate(self.load).values
        return np.broadcast_to(np.asarray(self.load, dtype=float), (grid.num_nodes,)).copy()

    def psi_values(self, grid: Grid) -> np.ndarray:
        psi = self.psi if self.psi is not None else default_psi(self.pe.n)
        if callable(psi):
            return grid.interpolate(psi).values
        return np.broadcast_to(np.asarray(psi, dtype=float), (grid.num_nodes,)).copy()


def _hole_nodes(study: HomogenizationStudy, eps: float, seed: int, grid: Grid):
    field = field_for_unit_box(study.law, seed, eps, study.pe.n)
    perforation = holes_from_field(field, eps, study.pe)
    holes = realize_holes(grid, perforation, study.strategy)
    return field, holes.all_nodes()


def solve_u_eps(study: HomogenizationStudy, eps: float, seed: int):
    """Perforated minimizer: F over {u >= 0 on hole nodes, u = 0 on boundary}."""
    grid = study.grid_for(eps)
    _, hole_nodes = _hole_nodes(study, eps, seed, grid)
    spec = EnergySpec(pe=study.pe, load=study.load_values(grid))
    cons = ConstraintSpec.dirichlet_zero_boundary(grid)
    if len(hole_nodes):
        cons = cons.with_lower_bound(hole_nodes, 0.0)
    return minimize(assemble(spec, grid), cons, study.solve_config())


def solve_u0(study: HomogenizationStudy, grid: Grid = None):
    """Limit minimizer of the penalized functional (no holes, no obstacle)."""
    if grid is None:
        grid = study.finest_grid()
    spec = EnergySpec(
        pe=study.pe, load=study.load_values(grid), neg_penalty=study.alpha0
    )
    cons = ConstraintSpec.dirichlet_zero_boundary(grid)
    return minimize(assemble(spec, grid), cons, study.solve_config())


def solve_oscillating_obstacle(study: HomogenizationStudy, eps: float, seed: int):
    """Minimizer over {v >= psi^eps}: psi off the holes, 0 on them.

    The literal definition replaces psi by 0 on hole nodes even where
    psi > 0 (which weakens the constraint there); set
    ``literal_psi_on_holes=False`` to use max(psi, 0) instead.
    """
    grid = study.grid_for(eps)
    _, hole_nodes = _hole_nodes(study, eps, seed, grid)
    psi_eps = study.psi_values(grid)
    if len(hole_nodes):
        if study.literal_psi_on_holes:
            psi_eps[hole_nodes] = 0.0
        else:
            psi_eps[hole_nodes] = np.maximum(psi_eps[hole_nodes], 0.0)
    spec = EnergySpec(pe=study.pe, load=study.load_values(grid))
    cons = ConstraintSpec.dirichlet_zero_boundary(grid)
    interior = np.flatnonzero(grid.interior_mask)
    cons = cons.with_lower_bound(interior, psi_eps[interior])
    return minimize(assemble(spec, grid), cons, study.solve_config())


def solve_h0(study: HomogenizationStudy, grid: Grid = None):
    """Limit of the oscillating-obstacle problem: v >= psi with the penalty."""
    if grid is None:
        grid = study.finest_grid()
    psi = study.psi_values(grid)
    spec = EnergySpec(
        pe=study.pe, load=study.load_values(grid), neg_penalty=study.alpha0
    )
    cons = ConstraintSpec.dirichlet_zero_boundary(grid)
    interior = np.flatnonzero(grid.interior_mask)
    cons = cons.with_lower_bound(interior, psi[interior])
    return minimize(assemble(spec, grid), cons, study.solve_config())


# -- energy functionals --------------------------------------------------


def dirichlet_energy_F(study: HomogenizationStudy, u: GridFunction) -> float:
    """F(u) = int (1/p)|grad u|^p - f u."""
    grid, p = u.grid, study.pe.p
    g = grid.gradient(u.values)
    val = grid.integrate_elements(np.sum(g * g, axis=1) ** (p / 2.0)) / p
    val -= grid.integrate_nodal(study.load_values(grid) * u.values)
    return float(val)


def limit_energy_F0(study: HomogenizationStudy, u: GridFunction) -> float:
    """F_0(u) = F(u) + (alpha0/p) int u_-^p."""
    grid, p = u.grid, study.pe.p
    neg = np.maximum(-u.values, 0.0)
    return float(
        dirichlet_energy_F(study, u)
        + (study.alpha0 / p) * grid.integrate_nodal(neg**p)
    )


def recovery_check(study: HomogenizationStudy, phi, run: CorrectorRun) -> float:
    """Gap F(phi + phi_- w^eps) - F_0(phi) of the recovery sequence."""
    grid = run.grid
    phi_gf = grid.interpolate(phi) if callable(phi) else phi
    neg = np.maximum(-phi_gf.values, 0.0)
    candidate = GridFunction(grid, phi_gf.values + neg * run.w.values)
    return float(
        dirichlet_energy_F(study, candidate) - limit_energy_F0(study, phi_gf)
    )


def lsc_check(study: HomogenizationStudy, u_eps_list, u0: GridFunction):
    """Margins F(u^eps) - F_0(u_0), one per supplied solution."""
    f0 = limit_energy_F0(study, u0)
    return [dirichlet_energy_F(study, u) - f0 for u in u_eps_list]


# -- the study driver ----------------------------------------------------


@dataclass
class StudyRow:
    eps: float
    seed: int
    N: int
    lp_error: float
    energy_F: float
    energy_F0_limit: float
    lsc_margin: float
    obstacle_lp_error: float
    solver_iters: int
    converged: bool


@dataclass
class ConvergenceReport:
    study: HomogenizationStudy
    rows: list
    mean_lp_by_eps: dict
    mean_obstacle_lp_by_eps: dict
    f0_u0: float
    trend_decreasing: bool
    obstacle_trend_decreasing: bool
    final_ratio: float

    def mean_curve(self) -> list:
        return [self.mean_lp_by_eps[e] for e in self.study.eps_list]


def run_study(study: HomogenizationStudy, with_obstacle: bool = True) -> ConvergenceReport:
    """Solve all (eps, seed) instances and compare against the limits.

    The limit solutions are computed once on the finest grid and injected
    into coarser comparisons by nodal restriction.
    """
    fine = study.finest_grid()
    u0, _ = solve_u0(study, fine)
    h0 = solve_h0(study, fine)[0] if with_obstacle else None
    f0_u0 = limit_energy_F0(study, u0)

    rows = []
    failures = 0
    total = len(study.eps_list) * len(study.seeds)
    for eps in study.eps_list:
        grid = study.grid_for(eps)
        u0_here = restrict_to_coarse(u0, grid) if grid.N != fine.N else u0
        h0_here = (
            restrict_to_coarse(h0, grid) if (with_obstacle and grid.N != fine.N) else h0
        )
        for seed in study.seeds:
            try:
                u, rep = solve_u_eps(study, eps, seed)
                err = grid.lp_norm(u.values - u0_here.values, study.pe.p)
                margin = dirichlet_energy_F(study, u) - f0_u0
                if with_obstacle:
                    h, _ = solve_oscillating_obstacle(study, eps, seed)
                    herr = grid.lp_norm(h.values - h0_here.values, study.pe.p)
                else:
                    herr = float("nan")
                rows.append(
                    StudyRow(
                        eps=eps,
                        seed=seed,
                        N=grid.N,
                        lp_error=err,
                        energy_F=dirichlet_energy_F(study, u),
                        energy_F0_limit=f0_u0,
                        lsc_margin=margin,
                        obstacle_lp_error=herr,
                        solver_iters=rep.iterations,
                        converged=rep.converged,
                    )
                )
            except Exception as exc:  # noqa: BLE001 - partial-failure policy
                failures += 1
                if failures > 0.2 * total:
                    raise SolverError(
                        f"too many study instances failed (last: {exc})"
                    ) from exc

    mean_lp = {
        eps: float(np.mean([r.lp_error for r in rows if r.eps == eps]))
        for eps in study.eps_list
    }
    mean_obs = {
        eps: float(np.nanmean([r.obstacle_lp_error for r in rows if r.eps == eps]))
        for eps in study.eps_list
    }
    curve = [mean_lp[e] for e in study.eps_list]
    obs_curve = [mean_obs[e] for e in study.eps_list]
    trend = all(b < a for a, b in zip(curve, curve[1:]))
    obs_trend = with_obstacle and all(b < a for a, b in zip(obs_curve, obs_curve[1:]))
    return ConvergenceReport(
        study=study,
        rows=rows,
        mean_lp_by_eps=mean_lp,
        mean_obstacle_lp_by_eps=mean_obs,
        f0_u0=f0_u0,
        trend_decreasing=trend,
        obstacle_trend_decreasing=bool(obs_trend),
        final_ratio=curve[-1] / curve[0] if curve[0] > 0 else float("nan"),
    )


REPORT_COLUMNS = [
    "eps",
    "seed",
    "N",
    "lp_error",
    "energy_F",
    "energy_F0_limit",
    "lsc_margin",
    "obstacle_lp_error",
    "solver_iters",
    "converged",
]


def write_report_csv(report: ConvergenceReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for r in report.rows:
            writer.writerow(
                [
                    repr(r.eps),
                    r.seed,
                    r.N,
                    repr(r.lp_error),
                    repr(r.energy_F),
                    repr(r.energy_F0_limit),
                    repr(r.lsc_margin),
                    repr(r.obstacle_lp_error),
                    r.solver_iters,
                    int(r.converged),
                ]
            )
