"""Guaranteed set-membership state estimation for LTI systems driven by
unknown-but-bounded inputs.

The estimator decomposes the state space into a strongly observable part,
reconstructed by an unknown-input observer fed from a high-gain derivative
bank with an analytic error envelope, and a weakly unobservable part,
tracked by a discrete ellipsoidal set-membership observer; the two set
estimates are fused into one bounding ellipsoid with certified size bounds.
"""

from .certificates import AssumptionConstants, CertificateReport, certify
from .decomposition import (Decomposition, LtiSystem, build_decomposition,
                            select_derivative_order,
                            weakly_unobservable_subspace)
from .ellipsoid import (Ellipsoid, affine_image, axis_bounds,
                        cartesian_product_bound, contains, minkowski_outer,
                        optimal_product_gain, support, volume)
from .errors import ObserverError
from .fusion import FusedEstimate, fuse, optimal_mu
from .generators import ShapeGenerator, SignalGenerator, Term
from .hgo import HgoConfig, HgoState, decay_constants, design_hgo, step_hgo
from .pipeline import (DesignArtifacts, RunResult, TraceRow, build_design,
                       certify_scenario, emit_plot_data, emit_traces,
                       monte_carlo_containment, parse_traces, run_algorithm1,
                       simulate_plant)
from .scenario import (BUILTIN_SCENARIOS, CertOptions, HgoSettings,
                       ScenarioConfig, example1, example2)
from .uio import (Epsilon1Evaluator, ErrorBoundParams, UioDesign, epsilon1,
                  epsilon1_uniform_bounds, solve_uio_gain, step_uio)
from .weak import (StepInputs, WeakState, gamma_k, measurement_update,
                   optimize_beta, propagate)

__version__ = "0.1.0"

__all__ = [
    "AssumptionConstants", "CertificateReport", "certify",
    "Decomposition", "LtiSystem", "build_decomposition",
    "select_derivative_order", "weakly_unobservable_subspace",
    "Ellipsoid", "affine_image", "axis_bounds", "cartesian_product_bound",
    "contains", "minkowski_outer", "optimal_product_gain", "support",
    "volume",
    "ObserverError",
    "FusedEstimate", "fuse", "optimal_mu",
    "ShapeGenerator", "SignalGenerator", "Term",
    "HgoConfig", "HgoState", "decay_constants", "design_hgo", "step_hgo",
    "DesignArtifacts", "RunResult", "TraceRow", "build_design",
    "certify_scenario", "emit_plot_data", "emit_traces",
    "monte_carlo_containment", "parse_traces", "run_algorithm1",
    "simulate_plant",
    "BUILTIN_SCENARIOS", "CertOptions", "HgoSettings", "ScenarioConfig",
    "example1", "example2",
    "Epsilon1Evaluator", "ErrorBoundParams", "UioDesign", "epsilon1",
    "epsilon1_uniform_bounds", "solve_uio_gain", "step_uio",
    "StepInputs", "WeakState", "gamma_k", "measurement_update",
    "optimize_beta", "propagate",
    "__version__",
]
