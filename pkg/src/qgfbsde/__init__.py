"""Monte-Carlo engine for quadratic-growth FBSDEs and utility indifference pricing."""

from .core import (
    ConfigError,
    DomainError,
    NumericalError,
    PathBatch,
    SeedSpec,
    SimulationError,
    TimeGrid,
    build_grid,
    draw_increments,
)
from .market import MarketModel, PayoffSpec, simulate_asset, simulate_index, theta
from .drivers import (
    LipschitzDriver,
    QuadraticDriverSpec,
    cole_hopf_forward,
    cole_hopf_inverse,
    eval_quadratic,
    transformed_driver,
    truncate_scalar,
    truncated_driver,
    utility_driver,
)
from .solver import (
    BsdeSolution,
    RegressionBasis,
    SolverConfig,
    regress,
    solve_lipschitz,
    solve_truncated,
)
from .pricing import (
    PriceReport,
    distortion_oracle,
    lognormal_put,
    optimal_strategy,
    price_indifference,
)

__version__ = "0.1.0"
