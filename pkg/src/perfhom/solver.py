"""Constrained minimization of discrete p-Dirichlet energies.

One engine serves every variational problem in the package: obstacle
problems with atomic sources, correctors with hole/boundary data, the
penalized limit problem, and plain p-Poisson solves.  Constraints are
node-wise (equality data and lower bounds), so projection is exact.

Engines: accelerated projected gradient with backtracking ("fista"),
an L-BFGS-B path through scipy ("lbfgsb", the default inside "auto"
for speed, always followed by a projected-gradient certificate and a
FISTA polish when the certificate is not met), and a direct sparse
solve for unconstrained p = 2 problems ("direct", also the oracle).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import sparse
from scipy.optimize import minimize as scipy_minimize
from scipy.sparse.linalg import spsolve

from .capacity import PExponent
from .errors import DomainError, LineSearchFailure, NonfiniteObjective
from .mesh import Grid, GridFunction

#: Default gradient regularization scale for p < 2 (see EnergySpec).
DEFAULT_DELTA_REG = 1e-8
#: Stronger default near p = 1, where the unregularized Hessian blows up
#: like |grad v|^{p-2} and iteration counts explode.
DELTA_REG_NEAR_ONE = 1e-3


@dataclass(frozen=True)
class EnergySpec:
    """Declarative description of one discrete energy.

    value(v) = sum_e (vol_e/p) (|grad v|^2 + delta_reg^2)^{p/2}
             - int f v + bulk_linear int v + (neg_penalty/p) int v_-^p
             - sum point_masses w_j v(node_j)

    where the volume integrals of nodal quantities use the lumped vertex
    rule (exact for P1 integrands).  All terms are convex for p > 1.
    """

    pe: PExponent
    load: object = 0.0  # constant, nodal array, or GridFunction
    bulk_linear: float = 0.0
    neg_penalty: float = 0.0
    point_masses: tuple = ()  # ((node_index, weight), ...)
    delta_reg: float = None  # None -> DEFAULT_DELTA_REG for p < 2, else 0

    def __post_init__(self):
        if self.neg_penalty < 0:
            raise DomainError(f"neg_penalty must be >= 0, got {self.neg_penalty}")
        if self.delta_reg is not None and self.delta_reg < 0:
            raise DomainError(f"delta_reg must be >= 0, got {self.delta_reg}")

    def resolved_delta(self) -> float:
        if self.delta_reg is not None:
            return self.delta_reg
        if self.pe.p < 1.3:
            return DELTA_REG_NEAR_ONE
        return DEFAULT_DELTA_REG if self.pe.p < 2 else 0.0


@dataclass
class ConstraintSpec:
    """Node-wise equality data and optional lower bounds."""

    equality_idx: np.ndarray = dc_field(default_factory=lambda: np.array([], dtype=int))
    equality_val: np.ndarray = dc_field(default_factory=lambda: np.array([]))
    lower_idx: np.ndarray = dc_field(default_factory=lambda: np.array([], dtype=int))
    lower_val: np.ndarray = dc_field(default_factory=lambda: np.array([]))

    def __post_init__(self):
        self.equality_idx = np.asarray(self.equality_idx, dtype=int)
        self.equality_val = np.asarray(self.equality_val, dtype=float)
        self.lower_idx = np.asarray(self.lower_idx, dtype=int)
        self.lower_val = np.asarray(self.lower_val, dtype=float)
        if len(self.equality_idx) != len(self.equality_val):
            raise DomainError("equality index/value length mismatch")
        if len(self.lower_idx) != len(self.lower_val):
            raise DomainError("lower-bound index/value length mismatch")
        if len(self.equality_idx) and len(self.lower_idx):
            eq = dict(zip(self.equality_idx.tolist(), self.equality_val.tolist()))
            for i, lb in zip(self.lower_idx.tolist(), self.lower_val.tolist()):
                if i in eq and eq[i] < lb - 1e-12:
                    raise DomainError(
                        f"equality value {eq[i]} at node {i} violates lower bound {lb}"
                    )

    @staticmethod
    def dirichlet_zero_boundary(grid: Grid) -> "ConstraintSpec":
        idx = np.flatnonzero(grid.boundary_mask)
        return ConstraintSpec(equality_idx=idx, equality_val=np.zeros(len(idx)))

    def with_equality(self, idx, values) -> "ConstraintSpec":
        idx = np.asarray(idx, dtype=int)
        values = np.broadcast_to(np.asarray(values, dtype=float), idx.shape)
        keep = ~np.isin(self.equality_idx, idx)
        return ConstraintSpec(
            equality_idx=np.concatenate([self.equality_idx[keep], idx]),
            equality_val=np.concatenate([self.equality_val[keep], values]),
            lower_idx=self.lower_idx,
            lower_val=self.lower_val,
        )

    def with_lower_bound(self, idx, values) -> "ConstraintSpec":
        idx = np.asarray(idx, dtype=int)
        values = np.broadcast_to(np.asarray(values, dtype=float), idx.shape)
        return ConstraintSpec(
            equality_idx=self.equality_idx,
            equality_val=self.equality_val,
            lower_idx=np.concatenate([self.lower_idx, idx]),
            lower_val=np.concatenate([self.lower_val, values]),
        )


@dataclass
class SolveReport:
    iterations: int
    energy: float
    pg_norm: float
    kkt_residual: float
    wall_time: float
    converged: bool
    method: str
    delta_reg: float
    message: str = ""


@dataclass(frozen=True)
class SolveConfig:
    tol_rel: float = 1e-8
    max_iter: int = 200_000
    method: str = "auto"  # auto | fista | lbfgsb | direct


class Objective:
    """Value/gradient evaluator for an EnergySpec on a grid."""

    def __init__(self, spec: EnergySpec, grid: Grid):
        self.spec = spec
        self.grid = grid
        self.pe = spec.pe
        self.delta = spec.resolved_delta()
        load = spec.load
        if isinstance(load, GridFunction):
            load = load.values
        self.f_nodal = np.broadcast_to(
            np.asarray(load, dtype=float), (grid.num_nodes,)
        ).copy()
        # lumped linear coefficient: (-f + bulk_linear) m_i
        self.linear = grid.lumped_mass * (spec.bulk_linear - self.f_nodal)
        self.point_idx = np.array([i for i, _ in spec.point_masses], dtype=int)
        self.point_w = np.array([w for _, w in spec.point_masses], dtype=float)
        if len(self.point_idx):
            np.add.at(self.linear, self.point_idx, -self.point_w)

    def value_and_grad(self, v: np.ndarray):
        grid, p = self.grid, self.pe.p
        g = grid.gradient(v)
        q = np.einsum("ed,ed->e", g, g) + self.delta**2
        w_e = grid.volumes * q ** ((p - 2) / 2.0)  # dW/d(grad) weight
        value = np.dot(grid.volumes, q ** (p / 2.0)) / p
        # chain rule back to nodes through the per-type gradient coefficients
        weighted = w_e[:, None] * g  # (num_el, n)
        B = grid._Btypes[grid.elem_type]  # (num_el, n+1, n)
        contrib = np.einsum("eld,ed->el", B, weighted)
        grad = np.zeros(grid.num_nodes)
        np.add.at(grad, grid.elements.ravel(), contrib.ravel())
        value += np.dot(self.linear, v)
        grad += self.linear
        if self.spec.neg_penalty:
            neg = np.maximum(-v, 0.0)
            value += (self.spec.neg_penalty / p) * np.dot(grid.lumped_mass, neg**p)
            grad -= self.spec.neg_penalty * grid.lumped_mass * neg ** (p - 1)
        return value, grad

    def value(self, v: np.ndarray) -> float:
        return self.value_and_grad(v)[0]


def assemble(spec: EnergySpec, grid: Grid) -> Objective:
    return Objective(spec, grid)


def _projected_gradient_residual(g, v, cons: ConstraintSpec):
    r = g.copy()
    if len(cons.equality_idx):
        r[cons.equality_idx] = 0.0
    if len(cons.lower_idx):
        at_bound = v[cons.lower_idx] <= cons.lower_val + 1e-13
        li = cons.lower_idx[at_bound]
        r[li] = np.minimum(r[li], 0.0)
    return r


def _project(v, cons: ConstraintSpec):
    if len(cons.lower_idx):
        v[cons.lower_idx] = np.maximum(v[cons.lower_idx], cons.lower_val)
    if len(cons.equality_idx):
        v[cons.equality_idx] = cons.equality_val
    return v


def _initial_iterate(obj: Objective, cons: ConstraintSpec) -> np.ndarray:
    v = np.zeros(obj.grid.num_nodes)
    return _project(v, cons)


def _check_finite(value, grad):
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise NonfiniteObjective(f"objective value {value} or gradient became nonfinite")


def _fista(obj: Objective, cons: ConstraintSpec, cfg: SolveConfig, v0, tol_abs):
    v = v0.copy()
    fv, g = obj.value_and_grad(v)
    _check_finite(fv, g)
    y = v.copy()
    t_mom = 1.0
    step = 1.0
    best_v, best_f = v.copy(), fv
    it = 0
    for it in range(1, cfg.max_iter + 1):
        fy, gy = obj.value_and_grad(y)
        _check_finite(fy, gy)
        # backtracking on the proximal upper bound
        while True:
            v_new = _project(y - step * gy, cons)
            d = v_new - y
            f_new = obj.value(v_new)
            if f_new <= fy + np.dot(gy, d) + np.dot(d, d) / (2 * step) + 1e-14 * abs(fy):
                break
            step *= 0.5
            if step < 1e-18:
                raise LineSearchFailure(
                    f"step underflow at iteration {it} (pg={np.linalg.norm(gy):.3g})"
                )
        # monotone safeguard with restart
        f_cand, g_cand = obj.value_and_grad(v_new)
        if f_cand > best_f + 1e-14 * (1 + abs(best_f)):
            y = best_v.copy()
            t_mom = 1.0
            res = _projected_gradient_residual(g_cand, v_new, cons)
            if np.linalg.norm(res) <= tol_abs:
                best_v, best_f = v_new, f_cand
                return best_v, best_f, np.linalg.norm(res), it, True
            continue
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * t_mom**2))
        y = v_new + ((t_mom - 1) / t_next) * (v_new - v)
        _project(y, cons)
        v, fv = v_new, f_cand
        t_mom = t_next
        if fv < best_f:
            best_v, best_f = v.copy(), fv
        res = _projected_gradient_residual(g_cand, v, cons)
        pg = np.linalg.norm(res)
        if pg <= tol_abs:
            return v, fv, pg, it, True
        step *= 1.3
    _, g = obj.value_and_grad(best_v)
    pg = np.linalg.norm(_projected_gradient_residual(g, best_v, cons))
    return best_v, best_f, pg, it, pg <= tol_abs


def _lbfgsb(obj: Objective, cons: ConstraintSpec, cfg: SolveConfig, v0, tol_abs):
    n_nodes = obj.grid.num_nodes
    lb = np.full(n_nodes, -np.inf)
    ub = np.full(n_nodes, np.inf)
    if len(cons.lower_idx):
        np.maximum.at(lb, cons.lower_idx, cons.lower_val)
    if len(cons.equality_idx):
        lb[cons.equality_idx] = cons.equality_val
        ub[cons.equality_idx] = cons.equality_val
    res = scipy_minimize(
        obj.value_and_grad,
        v0,
        jac=True,
        method="L-BFGS-B",
        bounds=np.stack([lb, ub], axis=1),
        options={
            "maxiter": min(cfg.max_iter, 50_000),
            "maxfun": min(4 * cfg.max_iter, 200_000),
            "ftol": 1e-18,
            "gtol": 0.5 * tol_abs / max(1.0, np.sqrt(n_nodes)),
            "maxcor": 20,
        },
    )
    v = _project(res.x.copy(), cons)
    fv, g = obj.value_and_grad(v)
    pg = np.linalg.norm(_projected_gradient_residual(g, v, cons))
    return v, fv, pg, int(res.nit), pg <= tol_abs


def solve_p2_direct(obj: Objective, cons: ConstraintSpec) -> np.ndarray:
    """Sparse direct solve of the quadratic (p = 2) problem without obstacles.

    Oracle path; raises DomainError if the problem is not quadratic or has
    lower bounds.
    """
    if obj.pe.p != 2 or obj.spec.neg_penalty != 0:
        raise DomainError("direct solve needs p = 2 and no negative-part penalty")
    if len(cons.lower_idx):
        raise DomainError("direct solve does not support obstacles")
    grid = obj.grid
    D = grid.grad_operator
    volw = sparse.diags(np.repeat(grid.volumes, grid.n))
    K = (D.T @ volw @ D).tocsr()
    v = np.zeros(grid.num_nodes)
    v[cons.equality_idx] = cons.equality_val
    free = np.ones(grid.num_nodes, dtype=bool)
    free[cons.equality_idx] = False
    rhs = -obj.linear - K @ v
    sol = spsolve(K[free][:, free].tocsc(), rhs[free])
    v[free] = sol
    return v


def minimize(
    objective: Objective,
    constraints: ConstraintSpec = None,
    config: SolveConfig = None,
    initial: np.ndarray = None,
):
    """Minimize the objective under node-wise constraints.

    Returns (GridFunction, SolveReport).  On hitting the iteration cap the
    best iterate is returned with ``converged`` False rather than raising.
    """
    cons = constraints if constraints is not None else ConstraintSpec()
    cfg = config if config is not None else SolveConfig()
    t0 = time.perf_counter()
    v0 = (
        _project(np.asarray(initial, dtype=float).copy(), cons)
        if initial is not None
        else _initial_iterate(objective, cons)
    )
    _, g0 = objective.value_and_grad(v0)
    pg0 = np.linalg.norm(_projected_gradient_residual(g0, v0, cons))
    tol_abs = cfg.tol_rel * (1.0 + pg0)

    method = cfg.method
    if method == "auto":
        method = "lbfgsb"
    if method == "direct":
        v = solve_p2_direct(objective, cons)
        fv, g = objective.value_and_grad(v)
        pg = np.linalg.norm(_projected_gradient_residual(g, v, cons))
        it, ok = 1, True
    elif method == "lbfgsb":
        v, fv, pg, it, ok = _lbfgsb(objective, cons, cfg, v0, tol_abs)
        if not ok and cfg.method == "auto":
            # polish with the projected-gradient engine
            v, fv, pg, it2, ok = _fista(
                objective, cons, SolveConfig(cfg.tol_rel, 5000, "fista"), v, tol_abs
            )
            it += it2
    elif method == "fista":
        v, fv, pg, it, ok = _fista(objective, cons, cfg, v0, tol_abs)
    else:
        raise DomainError(f"unknown method {cfg.method!r}")

    wall = time.perf_counter() - t0
    energy = objective.value(v)  # independent re-evaluation
    report = SolveReport(
        iterations=it,
        energy=energy,
        pg_norm=pg,
        kkt_residual=pg,
        wall_time=wall,
        converged=bool(ok),
        method=method,
        delta_reg=objective.delta,
        message="" if ok else f"not converged: pg={pg:.3g} > tol={tol_abs:.3g}",
    )
    return GridFunction(objective.grid, v), report


def report_csv_row(report: SolveReport) -> dict:
    return {
        "iterations": report.iterations,
        "energy": repr(report.energy),
        "pg_norm": repr(report.pg_norm),
        "kkt_residual": repr(report.kkt_residual),
        "wall_time": f"{report.wall_time:.6f}",
        "converged": int(report.converged),
        "method": report.method,
        "delta_reg": repr(report.delta_reg),
    }
