"""Experiment orchestration: configuration, training runs, analysis, plots."""

from .analyze import analyze_run, run_analyze
from .config import ExperimentConfig, load_config
from .plot import run_plot
from .train import run_train
from .verify import run_verify

__all__ = ["ExperimentConfig", "load_config", "run_train", "run_analyze", "analyze_run",
           "run_plot", "run_verify"]
