import numpy as np
import pytest

from perfhom.capacity import PExponent
from perfhom.cell import (
    AlphaZeroResult,
    CellConfig,
    CellProblem,
    build_cell_problem,
    default_tol_zero,
    estimate_l,
    estimate_lcurve,
    find_alpha0,
    solve_cell,
    write_alpha0_csv,
    write_extrapolation_csv,
    write_lcurve_csv,
    zero_set_fraction,
)
from perfhom.errors import BracketError, ConfigError, SolverError
from perfhom.field import ConstantLaw, UniformLaw
from perfhom.mesh import Grid, GridFunction
from perfhom.solver import SolveConfig


@pytest.fixture(scope="module")
def pe():
    return PExponent(1.5, 2)


def test_cell_problem_invariants(pe):
    with pytest.raises(ConfigError):
        build_cell_problem(1.0, 1 / 4, pe, ConstantLaw(1.0), 0, grid=Grid(2, 10))
    with pytest.raises(ConfigError):
        build_cell_problem(1.0, 0.3, pe, ConstantLaw(1.0), 0)
    prob = build_cell_problem(1.0, 1 / 4, pe, ConstantLaw(1.0), 0)
    assert prob.grid.N == 32  # default 8 cells per lattice period


def test_cell_config_grid():
    cfg = CellConfig(cells_per_eps=4)
    assert cfg.grid_for(1 / 8, 2).N == 32


def test_negative_alpha_positive_solution(pe):
    """alpha < 0 pushes the solution up: empty zero set, positive interior."""
    prob = build_cell_problem(-1.0, 1 / 4, pe, UniformLaw(0.5, 1.5), 0)
    v, rep = solve_cell(prob, SolveConfig(tol_rel=1e-8))
    assert rep.converged
    assert zero_set_fraction(v) == 0.0
    assert v.values[prob.grid.interior_mask].min() > 0


def test_large_alpha_pins_solution(pe):
    """Far above the critical scale the solution is zero except near sources."""
    prob = build_cell_problem(200.0, 1 / 4, pe, ConstantLaw(1.0), 0)
    v, rep = solve_cell(prob, SolveConfig(tol_rel=1e-8))
    assert rep.converged
    assert zero_set_fraction(v) > 0.8


def test_zero_set_fraction_tolerance():
    g = Grid(2, 4)
    v = GridFunction(g, np.zeros(g.num_nodes))
    assert zero_set_fraction(v) == 1.0
    v2 = GridFunction(g, np.full(g.num_nodes, -1.0))
    with pytest.raises(ConfigError):
        zero_set_fraction(v2)
    assert default_tol_zero(v) == 1e-6 * 1e-12  # floor when sup v = 0


def test_zero_set_fraction_interior_bump():
    g = Grid(2, 4)
    vals = np.zeros(g.num_nodes)
    vals[g.interior_mask] = 1.0
    # every informative element touches a positive interior node
    assert zero_set_fraction(GridFunction(g, vals)) == 0.0


def test_estimate_l_validation(pe):
    law = ConstantLaw(1.0)
    with pytest.raises(ConfigError):
        estimate_l(1.0, [1 / 4], [0, 1, 2], law, pe)
    with pytest.raises(ConfigError):
        estimate_l(1.0, [1 / 4, 1 / 8], [0, 1], law, pe)


@pytest.fixture(scope="module")
def small_row(pe):
    cfg = CellConfig(cells_per_eps=4, tol_rel=1e-5)
    return estimate_l(40.0, [1 / 4, 1 / 8], [0, 1, 2], UniformLaw(0.5, 1.5), pe, cfg)


def test_estimate_l_structure(small_row, pe):
    row = small_row
    assert row.eps_list == [1 / 4, 1 / 8]  # descending
    assert len(row.records) == 6
    assert [(-(r.eps), r.seed) for r in row.records] == sorted(
        (-(r.eps), r.seed) for r in row.records
    )
    assert 0.0 <= row.l_extrapolated <= 1.0
    for eps in row.eps_list:
        assert 0.0 <= row.mean_by_eps[eps] <= 1.0
        assert row.ci95_by_eps[eps] >= 0.0
    # alpha = 40 is far supercritical for E[gamma] = 1: large zero set
    assert row.l_extrapolated > 0.5


def test_estimate_l_deterministic(small_row, pe):
    cfg = CellConfig(cells_per_eps=4, tol_rel=1e-5)
    again = estimate_l(40.0, [1 / 4, 1 / 8], [0, 1, 2], UniformLaw(0.5, 1.5), pe, cfg)
    assert [r.fraction for r in again.records] == [
        r.fraction for r in small_row.records
    ]
    assert again.l_extrapolated == small_row.l_extrapolated


def test_estimate_l_parallel_matches_serial(small_row, pe):
    cfg = CellConfig(cells_per_eps=4, tol_rel=1e-5, jobs=2)
    par = estimate_l(40.0, [1 / 4, 1 / 8], [0, 1, 2], UniformLaw(0.5, 1.5), pe, cfg)
    assert [r.fraction for r in par.records] == [r.fraction for r in small_row.records]


def test_subcritical_l_is_zero(pe):
    cfg = CellConfig(cells_per_eps=4, tol_rel=1e-5)
    row = estimate_l(-2.0, [1 / 4, 1 / 8], [0, 1, 2], UniformLaw(0.5, 1.5), pe, cfg)
    assert row.l_extrapolated == 0.0
    assert all(r.fraction == 0.0 for r in row.records)


def test_lcurve_sorted(pe):
    cfg = CellConfig(cells_per_eps=4, tol_rel=1e-4)
    est = estimate_lcurve([30.0, -1.0], [1 / 4, 1 / 8], [0, 1, 2], ConstantLaw(1.0), pe, cfg)
    assert est.alphas == [-1.0, 30.0]
    assert est.row_for(30.0).alpha == 30.0
    with pytest.raises(KeyError):
        est.row_for(7.0)


# -- bisection on a synthetic l-curve ------------------------------------


def _ramp(offset):
    return lambda a: max(0.0, (a - offset) / 10.0)


def test_find_alpha0_synthetic():
    res = find_alpha0(_ramp(2.0), (0.0, 10.0), theta_l=0.02, tol_alpha=0.01)
    # predicate flips where (a - 2)/10 > 0.02, i.e. at a = 2.2
    assert res.alpha0 == pytest.approx(2.2, abs=0.01)
    assert res.bracket_hi - res.bracket_lo <= 0.01
    assert isinstance(res, AlphaZeroResult)


def test_find_alpha0_bad_bracket():
    with pytest.raises(BracketError):
        find_alpha0(_ramp(2.0), (5.0, 10.0))  # l(lo) > theta_l
    with pytest.raises(BracketError):
        find_alpha0(_ramp(2.0), (0.0, 1.0))  # l(hi) <= theta_l
    with pytest.raises(ConfigError):
        find_alpha0(_ramp(2.0), (3.0, 3.0))


def test_find_alpha0_collects_rows(small_row):
    calls = []

    def estimator(a):
        calls.append(a)
        return small_row if a > 20 else 0.0

    res = find_alpha0(estimator, (0.0, 40.0), tol_alpha=5.0)
    # LCurveRow outputs are retained as provenance
    assert len(res.lcurve.rows) >= 1
    assert all(r.alpha == 40.0 for r in res.lcurve.rows)


# -- artifacts -----------------------------------------------------------


def test_csv_writers(tmp_path, small_row):
    from perfhom.cell import LCurveEstimate

    est = LCurveEstimate(rows=[small_row])
    p1 = tmp_path / "lcurve.csv"
    write_lcurve_csv(est, p1)
    lines = p1.read_text().strip().splitlines()
    assert lines[0] == "alpha,eps,seed,fraction,tol_zero,solver_iters"
    assert len(lines) == 1 + len(small_row.records)

    p2 = tmp_path / "extrap.csv"
    write_extrapolation_csv(est, p2)
    assert p2.read_text().splitlines()[0].startswith("alpha,eps,mean_fraction")

    res = AlphaZeroResult(1.0, 0.9, 1.1, 0.02, 0.05, est)
    p3 = tmp_path / "alpha0.csv"
    write_alpha0_csv(res, p3)
    rows = p3.read_text().strip().splitlines()
    assert rows[0] == "alpha0,bracket_lo,bracket_hi,theta_l,tol_alpha"
    assert rows[1].split(",")[0] == "1.0"
