"""perfhom: a numerical laboratory for p-Laplacian obstacle problems in
randomly perforated domains and their homogenized limit."""

__version__ = "0.1.0"

from .capacity import (
    PExponent,
    ball_p_capacity,
    barrier_g,
    barrier_h_alpha0,
    exact_radial_solution,
    fundamental_constant,
    radial_constant,
    radius_for_capacity,
    singular_profile_h,
)
from .field import (
    BernoulliLaw,
    CapacityField,
    ConstantLaw,
    LatticeBox,
    PerforationSpec,
    UniformLaw,
    holes_from_field,
    sample_field,
    shift_field,
)
from .mesh import Grid, GridFunction, HoleStrategy, realize_holes
from .solver import ConstraintSpec, EnergySpec, SolveConfig, assemble, minimize
from .cell import (
    CellConfig,
    alpha0_from_lcurve,
    build_cell_problem,
    estimate_l,
    estimate_lcurve,
    find_alpha0,
    solve_cell,
    zero_set_fraction,
)
from .corrector import (
    CorrectorConfig,
    corrector_energy_inequality,
    cutoff_h,
    diagnostics,
    solve_corrector,
    solve_corrector_delta,
)
from .experiments import (
    HomogenizationStudy,
    run_study,
    solve_h0,
    solve_oscillating_obstacle,
    solve_u0,
    solve_u_eps,
)
