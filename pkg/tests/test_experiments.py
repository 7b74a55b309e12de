import numpy as np
import pytest

from perfhom.capacity import PExponent
from perfhom.corrector import CorrectorConfig, solve_corrector
from perfhom.errors import ConfigError
from perfhom.experiments import (
    ConvergenceReport,
    HomogenizationStudy,
    default_psi,
    dirichlet_energy_F,
    limit_energy_F0,
    lsc_check,
    recovery_check,
    run_study,
    solve_h0,
    solve_oscillating_obstacle,
    solve_u0,
    solve_u_eps,
    write_report_csv,
)
from perfhom.field import ConstantLaw, field_for_unit_box
from perfhom.mesh import Grid, GridFunction, HoleStrategy


@pytest.fixture(scope="module")
def pe():
    return PExponent(1.5, 2)


@pytest.fixture(scope="module")
def study(pe):
    """Small resolved-hole study: gamma = 31.5 keeps radii meshable."""
    return HomogenizationStudy(
        pe=pe,
        alpha0=31.5,
        eps_list=[1 / 4, 1 / 6],
        seeds=[0, 1],
        law=ConstantLaw(31.5),
        grid_sizes={1 / 4: 16, 1 / 6: 96},
        tol_rel=1e-7,
    )


def test_study_validation(pe):
    with pytest.raises(ConfigError):
        HomogenizationStudy(pe, 1.0, [1 / 8, 1 / 4], [0], ConstantLaw(1.0))
    with pytest.raises(ConfigError):
        HomogenizationStudy(pe, 1.0, [1 / 4, 1 / 8], [], ConstantLaw(1.0))
    with pytest.raises(ConfigError):
        HomogenizationStudy(pe, -1.0, [1 / 4, 1 / 8], [0], ConstantLaw(1.0))
    with pytest.raises(ConfigError):
        HomogenizationStudy(
            pe, 1.0, [1 / 4, 1 / 8], [0], ConstantLaw(1.0), grid_sizes={1 / 4: 10}
        ).grid_for(1 / 4)


def test_grids(study):
    assert study.grid_for(1 / 4).N == 16
    assert study.finest_grid().N == 96


def test_default_psi_sign_changing():
    psi = default_psi(2)
    vals = psi(np.linspace(0, 1, 33)[None, :], np.linspace(0, 1, 33)[:, None])
    assert vals.min() < -0.25
    assert vals.max() <= -0.1 + 1e-12
    # strictly negative everywhere on the default profile
    assert np.all(vals < 0)


def test_u0_negative_under_negative_load(study):
    """f = -1 pushes u0 below zero, activating the penalty regime."""
    u0, rep = solve_u0(study)
    assert rep.converged
    interior = study.finest_grid().interior_mask
    assert u0.values[interior].max() < 0


def test_u_eps_zero_on_holes_binding(study):
    u, rep = solve_u_eps(study, 1 / 4, 0)
    assert rep.converged
    grid = study.grid_for(1 / 4)
    from perfhom.experiments import _hole_nodes

    _, hole_nodes = _hole_nodes(study, 1 / 4, 0, grid)
    assert len(hole_nodes) > 0
    # the constraint binds: u = 0 on hole nodes although u < 0 nearby
    assert np.max(np.abs(u.values[hole_nodes])) < 1e-7
    assert u.values.min() < -1e-4


def test_penalty_raises_limit_solution(study, pe):
    """The alpha0 penalty lifts u0 relative to the unpenalized minimizer."""
    free = HomogenizationStudy(
        pe=pe,
        alpha0=0.0,
        eps_list=[1 / 4, 1 / 8],
        seeds=[0],
        law=study.law,
        grid_sizes=study.grid_sizes,
    )
    u_free, _ = solve_u0(free)
    u_pen, _ = solve_u0(study)
    assert u_pen.values.min() > u_free.values.min()


def test_energy_functionals_consistency(study):
    grid = study.finest_grid()
    u = grid.interpolate(lambda x, y: -np.sin(np.pi * x) * np.sin(np.pi * y) * 0.1)
    F = dirichlet_energy_F(study, u)
    F0 = limit_energy_F0(study, u)
    # u is negative, so the penalty strictly increases the energy
    assert F0 > F
    # for a nonnegative function they coincide
    v = GridFunction(grid, np.abs(u.values))
    assert limit_energy_F0(study, v) == pytest.approx(dirichlet_energy_F(study, v))


def test_lsc_margins(study):
    u0, _ = solve_u0(study)
    u, _ = solve_u_eps(study, 1 / 6, 0)
    margins = lsc_check(study, [u], u0)
    assert len(margins) == 1
    # F(u^eps) >= F_0(u_0) up to discretization slack
    assert margins[0] > -0.05 * abs(limit_energy_F0(study, u0))


def test_recovery_check(study, pe):
    """The recovery candidate phi + phi_- w^eps approaches F_0(phi)."""
    eps = 1 / 6
    grid = study.grid_for(eps)
    field = field_for_unit_box(study.law, 0, eps)
    run = solve_corrector(
        study.alpha0, eps, field, grid, HoleStrategy.RESOLVED, pe,
        CorrectorConfig(tol_rel=1e-7),
    )

    def phi(x, y):
        return -0.1 * np.sin(np.pi * x) * np.sin(np.pi * y)

    gap = recovery_check(study, phi, run)
    assert np.isfinite(gap)
    # at eps = 1/8 the gap is already small relative to the energies
    assert abs(gap) < 0.5 * abs(limit_energy_F0(study, grid.interpolate(phi)))


def test_oscillating_obstacle_binds(study):
    h, rep = solve_oscillating_obstacle(study, 1 / 4, 0)
    assert rep.converged
    grid = study.grid_for(1 / 4)
    psi = study.psi_values(grid)
    interior = grid.interior_mask
    assert np.all(h.values[interior] >= psi[interior] - 1e-9)
    h0, rep0 = solve_h0(study)
    assert rep0.converged
    fine = study.finest_grid()
    assert np.all(
        h0.values[fine.interior_mask]
        >= study.psi_values(fine)[fine.interior_mask] - 1e-9
    )


def test_run_study_report(study, tmp_path):
    report = run_study(study)
    assert isinstance(report, ConvergenceReport)
    assert len(report.rows) == 4
    assert set(report.mean_lp_by_eps) == {1 / 4, 1 / 6}
    assert report.mean_lp_by_eps[1 / 6] < report.mean_lp_by_eps[1 / 4]
    assert report.trend_decreasing
    assert 0 < report.final_ratio < 1
    assert report.mean_curve() == [
        report.mean_lp_by_eps[1 / 4],
        report.mean_lp_by_eps[1 / 6],
    ]
    # all margins satisfy the lower-semicontinuity bound
    for r in report.rows:
        assert r.lsc_margin > -0.05 * abs(report.f0_u0)

    path = tmp_path / "report.csv"
    write_report_csv(report, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("eps,seed,N,lp_error")
    assert len(lines) == 5


def test_run_study_without_obstacle(study):
    report = run_study(study, with_obstacle=False)
    assert all(np.isnan(r.obstacle_lp_error) for r in report.rows)
    assert not report.obstacle_trend_decreasing
