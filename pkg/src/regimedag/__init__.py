"""Regime discovery and temporal causal graph learning for time series.

From one multivariate series with unknown consecutive regimes, learn how
many regimes there are, which samples belong to each, and one temporal
graph (instantaneous DAG plus lagged matrices) per regime, via expectation
maximization over window-initialized candidate regimes.
"""

from .acyclicity import h_grad, h_value, is_dag, matrix_exp
from .em import EmConfig, FitError, RunResult, run
from .estimator import RegimeDagLearner
from .linear import (
    FitConfig,
    fit_regime_linear,
    linear_objective,
    predict_means,
    variance_order,
)
from .metrics import EvalReport, edge_f1, evaluate, match_regimes, shd
from .nonlinear import (
    RegimeNet,
    extract_graph,
    fit_regime_nonlinear,
    network_objective,
)
from .series import (
    AlignmentParams,
    RegimeAssignment,
    TemporalGraph,
    TimeSeries,
    summary_graph,
)
from .synthetic import (
    GeneratorSpec,
    RegimeSystem,
    load_manifest,
    manifest_graphs,
    manifest_labels,
    random_system,
    save_manifest,
    simulate,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentParams",
    "EmConfig",
    "EvalReport",
    "FitConfig",
    "FitError",
    "GeneratorSpec",
    "RegimeAssignment",
    "RegimeDagLearner",
    "RegimeNet",
    "RegimeSystem",
    "RunResult",
    "TemporalGraph",
    "TimeSeries",
    "edge_f1",
    "evaluate",
    "extract_graph",
    "fit_regime_linear",
    "fit_regime_nonlinear",
    "h_grad",
    "h_value",
    "is_dag",
    "linear_objective",
    "variance_order",
    "load_manifest",
    "manifest_graphs",
    "manifest_labels",
    "match_regimes",
    "matrix_exp",
    "network_objective",
    "predict_means",
    "random_system",
    "run",
    "save_manifest",
    "shd",
    "simulate",
    "summary_graph",
    "__version__",
]
