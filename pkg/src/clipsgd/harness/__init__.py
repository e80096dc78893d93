"""Experiment driver, bound verification and command-line interface."""

from .config import ExperimentConfig, MoreauSettings, load_config, save_config
from .experiments import AggregateResult, run_trajectory, run_trials, sweep_initial_stepsize
from .io import emit
from .verify import verify_bounds
