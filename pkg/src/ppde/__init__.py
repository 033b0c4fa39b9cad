"""Discrete path-dependent PDE toolkit on binomial path lattices.

Numba kernels are used when available; set ``PPDE_NUMBA=0`` for the pure
numpy path.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CFLViolationError,
    ConfigError,
    DepthCapError,
    GridMismatchError,
    InvalidDriftError,
    PPDEError,
    SchemeError,
)
from .pathspace import DiscretePath, PathPoint, TimeGrid, concat, pseudo_distance  # noqa: E402
from .functionals import (  # noqa: E402
    PathFunctional,
    PathProcess,
    affine,
    builtin_functionals,
    constant,
    fixed_time,
    leaf_table,
    pathwise_integral,
    running_max,
    running_min,
    shift_functional,
    terminal,
    terminal_fn,
    time_average,
)
from .lattice import ScenarioTree, StateLattice, build_lattice  # noqa: E402
from .measures import (  # noqa: E402
    DriftBound,
    DriftControl,
    NonlinearExpectation,
    ebar,
    ebar_tree,
    eunder,
    eunder_tree,
    expectation_mc,
    girsanov_weight,
    simulate_paths,
)
from .stopping import (  # noqa: E402
    SnellEnvelope,
    StoppingTime,
    conservation_error,
    doob_meyer,
    extremal_measure,
    hitting_time_eps,
    linear_snell,
    optimal_rule,
    snell,
    stopped_recursion,
)
from .funcalc import (  # noqa: E402
    Generator,
    Paraboloid,
    SmoothProcess,
    builtin_generators,
    classical_residual,
    discrete_derivatives,
    ito_residual,
)
from .solvers import (  # noqa: E402
    HeatSolutionProcess,
    SchemeOperator,
    builtin_operators,
    check_consistency,
    check_monotonicity,
    convergence_study,
    markovian_fd,
    monotone_scheme,
    solve_bsde,
    solve_heat,
    stability_experiment,
)
from .viscosity import (  # noqa: E402
    Localization,
    comparison_check,
    equivalence_experiment,
    regular_submartingale_check,
    subsolution_check,
    supersolution_check,
    tangency_in_mean,
)
