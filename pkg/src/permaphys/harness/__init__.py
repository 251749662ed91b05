"""Experiment orchestration: configs, CLI verbs, metrics, reports."""

from .config import ConfigError, EvalConfig, ExperimentConfig, config_from_dict, load_config
from .evals import eval_following, eval_pixels, eval_plausibility, eval_rollout
from .report import ReportError, build_report, format_report, write_metric
