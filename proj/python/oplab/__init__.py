"""Opinion dynamics on directed stochastic block models."""

from ._core import (
    BoundsViolation,
    BudgetError,
    Config,
    Graph,
    MeanFieldModel,
    ModelSpec,
    __version__,
    bound_checks_performed,
    build_model,
    chaos_experiment,
    closed_form_state,
    coefficient,
    concentration_check,
    error_experiment,
    estimate_a_s,
    meanfield_means,
    ratio_tail_bound,
    run,
    sample_graph,
    sample_labels,
    sample_stationary,
    simulate,
    sum_tail_bound,
    tree_likeness,
)

__all__ = [
    "BoundsViolation",
    "BudgetError",
    "Config",
    "Graph",
    "MeanFieldModel",
    "ModelSpec",
    "__version__",
    "bound_checks_performed",
    "build_model",
    "chaos_experiment",
    "closed_form_state",
    "coefficient",
    "concentration_check",
    "error_experiment",
    "estimate_a_s",
    "meanfield_means",
    "ratio_tail_bound",
    "run",
    "sample_graph",
    "sample_labels",
    "sample_stationary",
    "simulate",
    "sum_tail_bound",
    "tree_likeness",
]
