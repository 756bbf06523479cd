"""PDE pricing engine for interest-rate derivatives.

Prices caplets and European swaptions under a LIBOR market model with a
common SABR-type stochastic volatility by solving the pricing PDE with
second-order finite differences, a third-order two-stage linearly
implicit time stepper built on directional tridiagonal solves, and
optionally a sparse-grid combination of anisotropic component grids.
"""

from .cli import RunConfig, TableRow, parse_config, run, serialize_config
from .errors import ComponentSolveError, ConfigError, GridTooLargeError
from .indexing import FlatIndexMap, GridShape
from .market import (
    CAPLET,
    SWAPTION,
    DomainSpec,
    MarketData,
    PdeModel,
    ProductSpec,
    black_caplet_price,
    drift_weight,
    payoff,
    product_discount,
    validate_domain,
)
from .operator import (
    GridOperator,
    StateVector,
    dump_state,
    initial_state,
    interpolate,
)
from .sparse import (
    CombinationPlan,
    CombinationTerm,
    ComponentResult,
    SparseResult,
    combine,
    count_points,
    export_plan_csv,
    modified_plan,
    shape_for_levels,
    solve_component_grid,
    standard_plan,
)
from .stepper import (
    THETA_ORDER3,
    AmfrW2Config,
    StepCounters,
    ThetaGsConfig,
    ThetaGsIntegrator,
    amfrw2_stage,
    amfrw2_step,
    assemble_directional_matrix,
    assemble_operator_matrix,
    integrate,
)

__version__ = "0.1.0"
