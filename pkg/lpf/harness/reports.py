# lpf/harness/reports.py

"""
Experiment report model and its JSON / CSV writers.

Every check carries both the measured statistic and the bound it is compared
against, so a verdict can be recomputed from the written files alone.
"""
import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Union

from pydantic import BaseModel, Field

from .config import ConstantsSection

logger = logging.getLogger(__name__)

Relation = Literal["<=", ">=", "<", "=="]
OutputFormat = Literal["json", "csv", "both"]

PASS_GLYPH = "✅"
FAIL_GLYPH = "❌"


class Check(BaseModel):
    name: str
    statistic: Optional[float]
    bound: Optional[float]
    relation: Relation = "<="
    passed: bool
    margin: Optional[float] = None

    @classmethod
    def compare(cls, name: str, statistic: float, bound: float, relation: Relation = "<=") -> "Check":
        if not (math.isfinite(statistic) and math.isfinite(bound)):
            passed = relation in ("<=", "<") and math.isfinite(statistic) and bound == math.inf
            return cls(name=name, statistic=statistic, bound=bound, relation=relation, passed=passed)
        if relation == "<=":
            passed, margin = statistic <= bound, bound - statistic
        elif relation == "<":
            passed, margin = statistic < bound, bound - statistic
        elif relation == ">=":
            passed, margin = statistic >= bound, statistic - bound
        else:
            passed, margin = statistic == bound, None
        return cls(name=name, statistic=statistic, bound=bound, relation=relation, passed=passed, margin=margin)

    @classmethod
    def flag(cls, name: str, passed: bool) -> "Check":
        """Boolean condition without a numeric bound"""
        return cls(name=name, statistic=None, bound=None, relation="==", passed=passed)


class ExperimentReport(BaseModel):
    experiment: str
    title: str
    seed: int
    verdict: Literal["pass", "fail"]
    margin: Optional[float]
    checks: List[Check]
    rows: List[Dict[str, Any]] = Field(default_factory=list)
    extras: Dict[str, Any] = Field(default_factory=dict)
    notes: List[str] = Field(default_factory=list)
    constants: ConstantsSection

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    @property
    def failed_checks(self) -> List[str]:
        return [c.name for c in self.checks if not c.passed]


def make_report(
    experiment: str,
    title: str,
    seed: int,
    checks: Sequence[Check],
    constants: ConstantsSection,
    rows: Optional[List[Dict[str, Any]]] = None,
    extras: Optional[Dict[str, Any]] = None,
    notes: Optional[List[str]] = None,
) -> ExperimentReport:
    """Verdict is pass iff every check passed; margin is the smallest numeric margin"""
    margins = [c.margin for c in checks if c.margin is not None]
    verdict = "pass" if all(c.passed for c in checks) else "fail"
    report = ExperimentReport(
        experiment=experiment,
        title=title,
        seed=seed,
        verdict=verdict,
        margin=min(margins) if margins else None,
        checks=list(checks),
        rows=rows or [],
        extras=extras or {},
        notes=notes or [],
        constants=constants,
    )
    glyph = PASS_GLYPH if report.passed else FAIL_GLYPH
    logger.info(f"{glyph} {experiment}: {verdict}" + (f" (failed: {', '.join(report.failed_checks)})" if not report.passed else ""))
    return report


# ============= SERIALIZATION =============


def _sanitize(value: Any) -> Any:
    """Non-finite floats become null so the JSON stays strict"""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {k: _sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_sanitize(v) for v in value]
    return value


def report_to_json(report: ExperimentReport) -> str:
    payload = _sanitize(report.model_dump(mode="python"))
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _cell(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return ""
    if isinstance(value, (list, dict)):
        return json.dumps(_sanitize(value), sort_keys=True)
    return value


def write_rows_csv(rows: Sequence[Dict[str, Any]], path: Union[str, Path]) -> None:
    """CSV with the union of row keys as columns, in first-seen order"""
    columns: List[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row.get(k, "")) for k in columns})


def write_report(report: ExperimentReport, out_dir: Union[str, Path], fmt: OutputFormat = "both") -> List[Path]:
    """Writes <out>/<id>_report.json and/or <out>/<id>_table.csv"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt in ("json", "both"):
        path = out / f"{report.experiment}_report.json"
        path.write_text(report_to_json(report), encoding="utf-8")
        written.append(path)
    if fmt in ("csv", "both"):
        path = out / f"{report.experiment}_table.csv"
        write_rows_csv(report.rows, path)
        written.append(path)
    logger.debug(f"wrote {', '.join(str(p) for p in written)}")
    return written


def summary_rows(reports: Sequence[ExperimentReport]) -> List[Dict[str, Any]]:
    """One row per experiment: checks, worst margin, status glyph"""
    return [
        {
            "experiment": r.experiment,
            "title": r.title,
            "checks": len(r.checks),
            "failed": ";".join(r.failed_checks),
            "margin": r.margin if r.margin is not None else "",
            "verdict": r.verdict,
            "status": PASS_GLYPH if r.passed else FAIL_GLYPH,
        }
        for r in reports
    ]


def write_summary(reports: Sequence[ExperimentReport], out_dir: Union[str, Path]) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "summary.csv"
    write_rows_csv(summary_rows(reports), path)
    return path
