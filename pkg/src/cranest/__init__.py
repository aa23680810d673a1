"""State estimation over a simulated cellular uplink via Gaussian belief propagation.

The package splits into small layers:

* :mod:`cranest.messages`    - scalar Gaussian message algebra (precision form)
* :mod:`cranest.graph`       - factor-graph construction and validation
* :mod:`cranest.engine`      - synchronous damped message-passing scheduler
* :mod:`cranest.oracle`      - dense closed-form MMSE reference solver
* :mod:`cranest.grid`        - DC power-grid measurement model (30-bus case shipped)
* :mod:`cranest.cran`        - device placement, channel generation, transmission
* :mod:`cranest.estimators`  - fit/predict front-ends over both solvers
* :mod:`cranest.experiments` - seeded Monte Carlo drivers and result files
* :mod:`cranest.cli`         - the ``cranest`` command
"""

from .engine import (
    GbpResult,
    MessageState,
    NonFiniteMessageError,
    ScheduleConfig,
    initialize_messages,
    iterate_once,
    run_to_convergence,
)
from .estimators import GbpStateEstimator, MmseStateEstimator
from .graph import (
    FactorGraph,
    GraphViolation,
    NodeId,
    NodeKind,
    build_bilayer_graph,
    build_estimation_graph,
    graph_diameter,
)
from .messages import (
    UNINFORMATIVE,
    FactorCoeffs,
    GaussianMessage,
    factor_to_variable,
    marginal,
    variable_to_factor,
)
from .oracle import (
    DenseModel,
    IllConditionedModelError,
    ObservabilityResult,
    baseline_estimate_no_cran,
    is_observable,
    mmse_estimate,
    mmse_posterior,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "GaussianMessage",
    "FactorCoeffs",
    "UNINFORMATIVE",
    "variable_to_factor",
    "factor_to_variable",
    "marginal",
    "FactorGraph",
    "GraphViolation",
    "NodeId",
    "NodeKind",
    "build_bilayer_graph",
    "build_estimation_graph",
    "graph_diameter",
    "ScheduleConfig",
    "GbpResult",
    "MessageState",
    "NonFiniteMessageError",
    "initialize_messages",
    "iterate_once",
    "run_to_convergence",
    "DenseModel",
    "IllConditionedModelError",
    "ObservabilityResult",
    "mmse_posterior",
    "mmse_estimate",
    "baseline_estimate_no_cran",
    "is_observable",
    "GbpStateEstimator",
    "MmseStateEstimator",
]
