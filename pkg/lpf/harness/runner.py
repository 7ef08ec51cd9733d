# lpf/harness/runner.py

"""
Experiment registry, single-experiment runs and the full verification sweep
"""
import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

from .assumptions import validate_assumptions
from .config import ExperimentConfig
from .experiments import run_t1, run_t2, run_t3, run_t4, run_t5, run_t6, run_t7
from .reports import ExperimentReport, OutputFormat, write_report, write_summary

logger = logging.getLogger(__name__)

Runner = Callable[[ExperimentConfig, Optional[int]], ExperimentReport]

EXPERIMENTS: Dict[str, Runner] = {
    "t1": run_t1,
    "t2": run_t2,
    "t3": run_t3,
    "t4": run_t4,
    "t5": run_t5,
    "t6": run_t6,
    "t7": run_t7,
    "assumptions": validate_assumptions,
}


def run_experiment(
    name: str,
    config: ExperimentConfig,
    jobs: Optional[int] = None,
    out_dir: Union[str, Path, None] = None,
    fmt: OutputFormat = "both",
) -> ExperimentReport:
    if name not in EXPERIMENTS:
        raise KeyError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
    logger.info(f"running {name} (seed {config.seed})")
    report = EXPERIMENTS[name](config, jobs)
    if out_dir is not None:
        write_report(report, out_dir, fmt)
    return report


def run_all(
    config: ExperimentConfig,
    jobs: Optional[int] = None,
    out_dir: Union[str, Path, None] = None,
    fmt: OutputFormat = "both",
) -> Tuple[List[ExperimentReport], bool]:
    """
    All seven experiments plus the assumption checks, in a fixed order.
    Returns the reports and the overall verdict.
    """
    reports = [run_experiment(name, config, jobs, out_dir, fmt) for name in EXPERIMENTS]
    if out_dir is not None:
        write_summary(reports, out_dir)
    failed = [r.experiment for r in reports if not r.passed]
    if failed:
        logger.warning(f"failed experiments: {', '.join(failed)}")
    return reports, not failed
