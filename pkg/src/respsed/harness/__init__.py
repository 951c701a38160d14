from .experiment import ExperimentConfig, run_experiment, scenario_matrix
from .plots import emit_plot
from .summary import summarize_corpus

__all__ = ["ExperimentConfig", "emit_plot", "run_experiment", "scenario_matrix", "summarize_corpus"]
