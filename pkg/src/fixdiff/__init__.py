"""
fixdiff - Conservative derivatives of parametric nonsmooth fixed points.

Differentiates w(lam) = Phi(w(lam), lam) for piecewise-smooth contractions
(proximal gradient steps, relu layers) by iterative differentiation (ITD),
approximate implicit differentiation (AID-FP, AID-CG) and the stochastic
NSID estimator, and assembles bilevel hypergradients from them.

Copyright (C) 2026 fixdiff developers
License: GPL-3.0 (https://www.gnu.org/licenses/gpl-3.0.html)

Example usage:
    # As a command-line tool
    $ fixdiff exp elastic --out results/
    $ fixdiff check excess

    # As a Python module
    import numpy as np
    from fixdiff import prox_elastic_net_map, fixed_point_solve, aid_fp_vjp

    traj = fixed_point_solve(phi, lam, np.zeros(phi.d), t=200)
    est = aid_fp_vjp(phi, traj.w_t, lam, y, k=200)
"""

__version__ = "0.3.0"
__author__ = "fixdiff developers"
__license__ = "GPL-3.0"
__copyright__ = "Copyright (C) 2026 fixdiff developers"
__url__ = "https://github.com/fixdiff/fixdiff"
__description__ = "Conservative derivatives of nonsmooth fixed points: ITD, AID and stochastic implicit differentiation"

# Public API exports
from fixdiff.bilevel import (
    UpperLevel,
    baid_fp_hypergrad,
    bitd_hypergrad,
    nsid_bilevel,
    outer_loop,
    validation_cross_entropy,
    validation_square_loss,
)
from fixdiff.config import Config, get_app_dirs, is_script_mode, load_config_file
from fixdiff.deterministic import DerivEstimate, aid_cg_vjp, aid_fp_vjp, estimate_error, itd_jvp, itd_vjp
from fixdiff.errors import (
    ArgumentError,
    BreakdownError,
    ConfigError,
    DataFormatError,
    DivergenceError,
    FixdiffError,
    NonFiniteError,
    ShapeError,
    SingularSystemError,
)
from fixdiff.linalg import Rng, solve_dense, spectral_norm
from fixdiff.maps import (
    MapSelection,
    StochasticMapSelection,
    compose,
    grad_step_multinomial,
    grad_step_quadratic,
    prox_elastic_net_map,
    soft_threshold,
    stochastic_grad_step_quadratic,
)
from fixdiff.problems import ProblemSpec, build_elastic_net, build_poisoning
from fixdiff.reference import implicit_jacobian_oracle, reference_vjp
from fixdiff.setvalued import MatrixSet, gap
from fixdiff.solver import Trajectory, fixed_point_solve, support_identification
from fixdiff.stochastic import SampleStreams, StepSchedule, nsid, sid_baseline

__all__ = [
    # Version info
    "__version__",
    "__author__",
    "__license__",
    "__url__",
    # Config
    "Config",
    "get_app_dirs",
    "load_config_file",
    "is_script_mode",
    # Errors
    "FixdiffError",
    "ArgumentError",
    "ShapeError",
    "NonFiniteError",
    "SingularSystemError",
    "DivergenceError",
    "BreakdownError",
    "DataFormatError",
    "ConfigError",
    # Linear algebra and sets
    "Rng",
    "spectral_norm",
    "solve_dense",
    "MatrixSet",
    "gap",
    # Maps
    "MapSelection",
    "StochasticMapSelection",
    "soft_threshold",
    "prox_elastic_net_map",
    "grad_step_quadratic",
    "stochastic_grad_step_quadratic",
    "grad_step_multinomial",
    "compose",
    # Solving
    "Trajectory",
    "fixed_point_solve",
    "support_identification",
    # Derivatives
    "DerivEstimate",
    "itd_vjp",
    "itd_jvp",
    "aid_fp_vjp",
    "aid_cg_vjp",
    "estimate_error",
    "StepSchedule",
    "SampleStreams",
    "nsid",
    "sid_baseline",
    "implicit_jacobian_oracle",
    "reference_vjp",
    # Bilevel
    "UpperLevel",
    "validation_square_loss",
    "validation_cross_entropy",
    "bitd_hypergrad",
    "baid_fp_hypergrad",
    "nsid_bilevel",
    "outer_loop",
    # Problems
    "ProblemSpec",
    "build_elastic_net",
    "build_poisoning",
]
