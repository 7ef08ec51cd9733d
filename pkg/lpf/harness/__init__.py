# lpf/harness/__init__.py

"""
Verification harness: experiment configuration, runs and reports
"""
from .assumptions import validate_assumptions
from .config import ExperimentConfig, load_config, parse_config
from .experiments import run_t1, run_t2, run_t3, run_t4, run_t5, run_t6, run_t7
from .reports import Check, ExperimentReport, write_report, write_summary
from .runner import EXPERIMENTS, run_all, run_experiment

__all__ = [
    "EXPERIMENTS",
    "Check",
    "ExperimentConfig",
    "ExperimentReport",
    "load_config",
    "parse_config",
    "run_all",
    "run_experiment",
    "run_t1",
    "run_t2",
    "run_t3",
    "run_t4",
    "run_t5",
    "run_t6",
    "run_t7",
    "validate_assumptions",
    "write_report",
    "write_summary",
]
