"""Anderson acceleration with optimized damping for fixed-point problems."""

from ._backend import backend_name
from .accelerator import (
    AndersonState,
    ClampFloor,
    Constant,
    FixedPointProblem,
    FlipBelow,
    IterationRecord,
    Optimized,
    Raw,
    SolveReport,
    SolverConfig,
    Undamped,
    aa_step,
    apply_safeguard,
    constrained_ls_oracle,
    gamma_to_alpha,
    mixed_averages,
    optimize_damping,
    solve_aa,
    solve_picard,
    theta_ratio,
)
from .errors import (
    AAError,
    CapacityError,
    DimensionError,
    DivergenceError,
    EmptyWindowError,
    NotFoundError,
    SingularWindowError,
)
from .problems import (
    Grid2D,
    bratu_problem,
    catalog,
    chandrasekhar_problem,
    convection_diffusion_problem,
    linear_problem,
    lookup,
)
from .qr_window import QrWindow, dense_qr

__version__ = "0.1.0"
