"""Experiment configuration, reports, the job pool and the verification runs."""

import csv
import json
import math
from pathlib import Path

import pytest

from conftest import SMALL_CONFIG
from lpf.core.errors import ConfigError
from lpf.harness.assumptions import validate_assumptions
from lpf.harness.config import ConstantsSection, ExperimentConfig, load_config, parse_config
from lpf.harness.experiments import run_t1, run_t2, run_t3, run_t4, run_t5, run_t6, run_t7
from lpf.harness.pool import map_jobs
from lpf.harness.reports import Check, make_report, report_to_json, write_report
from lpf.harness.runner import EXPERIMENTS, run_all, run_experiment
from lpf.services.factorizer import mc_error_bound

SCHEMA_PATH = Path(__file__).resolve().parent.parent / "docs" / "report_schema.json"

JSON_TYPES = {"string": str, "integer": int, "number": (int, float), "boolean": bool, "object": dict, "array": list, "null": type(None)}


def assert_matches_schema(payload: dict) -> None:
    """Required keys and value types of the report schema, checked by hand"""
    schema = json.loads(SCHEMA_PATH.read_text(encoding="utf-8"))

    def check(value, node, where):
        types = node.get("type")
        if types is not None:
            allowed = tuple(JSON_TYPES[t] for t in ([types] if isinstance(types, str) else types))
            assert isinstance(value, allowed), f"{where}: {value!r} is not {types}"
            if isinstance(value, bool) and "boolean" not in ([types] if isinstance(types, str) else types):
                raise AssertionError(f"{where}: unexpected boolean")
        if "enum" in node:
            assert value in node["enum"], f"{where}: {value!r} not in {node['enum']}"
        for key in node.get("required", []):
            assert key in value, f"{where}: missing '{key}'"
        for key, sub in node.get("properties", {}).items():
            if isinstance(value, dict) and key in value:
                check(value[key], sub, f"{where}.{key}")
        if "items" in node and isinstance(value, list):
            for i, item in enumerate(value):
                check(item, node["items"], f"{where}[{i}]")

    check(payload, schema, "report")


def with_overrides(**sections) -> ExperimentConfig:
    data = json.loads(json.dumps(SMALL_CONFIG))
    for name, values in sections.items():
        data.setdefault(name, {}).update(values)
    return parse_config(data)


class TestConfig:
    def test_defaults(self):
        config = load_config(None)
        assert config.seed == 42
        assert config.t2.M_values == [4, 8, 16, 32, 64]
        assert config.t3.N_values == [2002, 3003, 4200]
        assert config.constants.C_sample == 24.28

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("", encoding="utf-8")
        assert load_config(path) == ExperimentConfig()

    def test_file_overrides_defaults(self, small_config_file):
        config = load_config(small_config_file)
        assert config.t2.M_values == [4, 16]
        assert config.t2.order == 20
        assert config.t3.K == 5

    def test_unknown_keys_warn(self, tmp_path, caplog):
        path = tmp_path / "extra.yaml"
        path.write_text("colour: blue\nt2:\n  trials: 3\n  speed: 9\n", encoding="utf-8")
        config = load_config(path)
        assert config.t2.trials == 3
        assert "colour" in caplog.text
        assert "t2.speed" in caplog.text

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("t2:\n  trials: [1, 2\n  posteriors: 3\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="line"):
            load_config(path)

    def test_invalid_value_names_key(self):
        with pytest.raises(ConfigError, match="t2.trials"):
            parse_config({"t2": {"trials": 0}})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="nowhere.yaml"):
            load_config(tmp_path / "nowhere.yaml")

    def test_label_count_override(self):
        config = parse_config({"world": {"num_labels": 4}})
        world_config = config.world_config()
        assert world_config.num_labels == 4
        assert mc_error_bound(16, world_config.num_labels) != mc_error_bound(16, 3)

    def test_world_takes_run_seed(self):
        config = parse_config({"seed": 7, "world": {"seed": 99}})
        assert config.world_config().seed == 7
        assert config.world_config(d=2).d == 2


class TestReports:
    def test_relations(self):
        assert Check.compare("a", 0.1, 0.2).passed
        assert Check.compare("a", 0.1, 0.2).margin == pytest.approx(0.1)
        assert not Check.compare("a", 0.3, 0.2).passed
        assert Check.compare("a", 0.3, 0.2, ">=").margin == pytest.approx(0.1)
        assert not Check.compare("a", 0.2, 0.2, "<").passed
        equal = Check.compare("a", 0.0, 0.0, "==")
        assert equal.passed and equal.margin is None

    def test_non_finite(self):
        assert not Check.compare("a", math.nan, 1.0).passed
        assert Check.compare("a", 1e9, math.inf).passed
        assert not Check.compare("a", math.inf, 1.0).passed

    def test_verdict_and_margin(self):
        checks = [Check.compare("a", 0.1, 0.5), Check.compare("b", 0.4, 0.5), Check.flag("c", True)]
        report = make_report("t9", "demo", 1, checks, ConstantsSection())
        assert report.passed
        assert report.margin == pytest.approx(0.1)
        failed = make_report("t9", "demo", 1, checks + [Check.flag("d", False)], ConstantsSection())
        assert failed.verdict == "fail"
        assert failed.failed_checks == ["d"]

    def test_json_is_strict(self):
        report = make_report("t9", "demo", 1, [Check.compare("a", 1.0, math.inf)], ConstantsSection(), extras={"x": math.inf})
        payload = json.loads(report_to_json(report))
        assert payload["extras"]["x"] is None
        assert payload["checks"][0]["bound"] is None

    def test_written_files(self, tmp_path):
        rows = [{"K": 1, "ece": 0.3}, {"K": 2, "ece": 0.2, "note": "x"}]
        report = make_report("t9", "demo", 1, [Check.flag("a", True)], ConstantsSection(), rows=rows)
        paths = write_report(report, tmp_path, "both")
        assert [p.name for p in paths] == ["t9_report.json", "t9_table.csv"]
        with open(tmp_path / "t9_table.csv", newline="", encoding="utf-8") as f:
            table = list(csv.DictReader(f))
        assert table[0]["note"] == ""
        assert table[1]["note"] == "x"
        assert write_report(report, tmp_path / "json-only", "json")[0].suffix == ".json"


class TestPool:
    @pytest.mark.parametrize("jobs", [None, 1, 4])
    def test_order_preserved(self, jobs):
        assert map_jobs(lambda x: x * x, range(20), jobs) == [x * x for x in range(20)]


class TestExperiments:
    def test_t1(self, small_config):
        report = run_t1(small_config, jobs=2)
        assert [row["method"] for row in report.rows] == ["individual", "spn", "uniform", "learned"]
        assert set(report.extras["reliability"]) == {"individual", "spn", "uniform", "learned"}
        assert report.checks[0].name == "spn_ece_le_bound"
        assert report.extras["theoretical_C"] == pytest.approx(math.sqrt(2 * math.log(120)))

    def test_t2_sweep_points(self, small_config):
        report = run_t2(small_config)
        assert [row["M"] for row in report.rows] == [4, 16]
        assert all(c.passed for c in report.checks if c.name.startswith("p95_le_bound"))
        assert report.rows[0]["bound"] == pytest.approx(0.774, abs=1e-3)
        within = {c.name: c for c in report.checks if c.name.startswith("trials_within_bound")}
        assert set(within) == {"trials_within_bound_M4", "trials_within_bound_M16"}
        assert all(c.passed and c.bound == 0.95 for c in within.values())
        assert report.extras["informational"] == ["log_log_slope"]

    def test_t2_trial_fraction_enters_verdict(self):
        report = run_t2(with_overrides(t2={"min_trial_fraction": 1.0, "M_values": [4]}))
        check = next(c for c in report.checks if c.name == "trials_within_bound_M4")
        assert check.passed == (report.rows[0]["trials_within_bound"] >= 1.0)
        assert "log_log_slope" not in report.extras

    def test_t3_rows(self, small_config):
        report = run_t3(small_config)
        assert [row["N"] for row in report.rows] == [60, 120]
        assert report.rows[1]["bound_fixed"] < report.rows[0]["bound_fixed"]
        assert report.extras["num_params"] == 2752
        assert {c.name for c in report.checks} == {"gap_le_bound_N60", "bound_nonvacuous_N60", "gap_le_bound_N120", "bound_nonvacuous_N120"}

    def test_t4_components(self, small_config):
        report = run_t4(small_config)
        checks = {c.name: c for c in report.checks}
        assert checks["components_finite"].passed
        assert checks["h_y_le_log_labels"].passed
        row = report.rows[0]
        assert row["lower_bound"] <= row["achievable_bound"]

    def test_t5_zero_corruption(self, small_config):
        report = run_t5(small_config)
        assert report.rows[0]["mean_l1"] == 0.0
        assert {c.name: c for c in report.checks}["zero_corruption_exact"].passed
        assert [row["n_corrupted"] for row in report.rows] == [0, 1, 2]

    def test_t6_fit(self, small_config):
        report = run_t6(small_config)
        assert [row["K"] for row in report.rows] == [1, 2, 5]
        assert report.extras["reference_fit"]["a"] == pytest.approx(0.245, abs=0.02)
        assert report.rows[0]["bound"] == pytest.approx(24.28)

    def test_t7_decomposition(self, small_config):
        report = run_t7(small_config)
        assert {c.name: c for c in report.checks}["max_decomposition_error"].passed
        assert all(row["total"] > 0 for row in report.rows)

    def test_independent_of_worker_count(self, small_config):
        serial = report_to_json(run_t5(small_config, jobs=1))
        parallel = report_to_json(run_t5(small_config, jobs=4))
        assert serial == parallel

    def test_seed_changes_results(self, small_config):
        other = small_config.model_copy(update={"seed": 7})
        assert report_to_json(run_t4(small_config)) != report_to_json(run_t4(other))


class TestAssumptions:
    def test_default_world_passes(self):
        report = validate_assumptions(ExperimentConfig())
        assert report.passed, report.failed_checks
        assert len(report.rows) == 6

    def test_correlated_evidence(self):
        report = validate_assumptions(with_overrides(world={"correlation": 1.0}))
        assert "A1_conditional_independence" in report.failed_checks
        assert "A6_support_floor" not in report.failed_checks

    def test_floorless_decoder(self):
        report = validate_assumptions(with_overrides(decoder={"floor": 0.0}))
        assert "A6_support_floor" in report.failed_checks
        assert "A1_conditional_independence" not in report.failed_checks

    def test_wide_posteriors(self):
        report = validate_assumptions(with_overrides(world={"var_high": 1.5}))
        assert "A2_bounded_covariance" in report.failed_checks
        assert "A6_support_floor" not in report.failed_checks

    def test_evidence_count(self):
        report = validate_assumptions(with_overrides(t7={"K_values": [1, 9]}))
        assert "A5_bounded_evidence_count" in report.failed_checks

    def test_k_sweeps_reported_not_checked(self):
        report = validate_assumptions(with_overrides(t1={"K": 10}, t5={"K": 10}, t6={"K_values": [1, 5, 20]}))
        assert "A5_bounded_evidence_count" not in report.failed_checks
        counts = report.extras["evidence_count_per_experiment"]
        assert set(counts) == {"t1", "t3", "t4", "t5", "t6", "t7"}
        assert counts["t1"] == counts["t5"] == 10 and counts["t6"] == 20
        assert any(note.startswith("t5 uses K up to 10") for note in report.notes)
        assert any(note.startswith("t6 uses K up to 20") for note in report.notes)

    def test_evidence_count_uses_largest_bounded_k(self):
        report = validate_assumptions(with_overrides(t3={"K": 4}, t4={"K": 6}))
        assert "A5_bounded_evidence_count" in report.failed_checks
        assert report.rows[4]["statistic"] == 6.0


class TestRunner:
    def test_unknown_experiment(self, small_config):
        with pytest.raises(KeyError):
            run_experiment("t9", small_config)

    def test_run_all(self, small_config, tmp_path):
        reports, ok = run_all(small_config, jobs=2, out_dir=tmp_path)
        assert [r.experiment for r in reports] == list(EXPERIMENTS)
        assert ok == all(r.passed for r in reports)
        with open(tmp_path / "summary.csv", newline="", encoding="utf-8") as f:
            summary = list(csv.DictReader(f))
        assert [row["experiment"] for row in summary] == list(EXPERIMENTS)
        for name in EXPERIMENTS:
            assert_matches_schema(json.loads((tmp_path / f"{name}_report.json").read_text(encoding="utf-8")))
            assert (tmp_path / f"{name}_table.csv").is_file()

    def test_failure_names_experiment(self, tmp_path):
        config = with_overrides(world={"correlation": 1.0})
        reports, ok = run_all(config, out_dir=None)
        assert not ok
        assert "assumptions" in [r.experiment for r in reports if not r.passed]


@pytest.mark.slow
class TestFullRuns:
    """Default-size runs: the acceptance checks of every experiment"""

    @pytest.mark.parametrize("name", ["t1", "t2", "t4", "t5", "t6", "t7"])
    def test_experiment_passes(self, name):
        report = run_experiment(name, ExperimentConfig())
        assert report.passed, report.failed_checks

    def test_t2_scaling(self):
        report = run_t2(ExperimentConfig())
        means = [row["mean_error"] for row in report.rows]
        assert all(b < a for a, b in zip(means, means[1:]))
        assert -0.65 <= report.extras["log_log_slope"] <= -0.35

    def test_t3_generalization(self):
        report = run_t3(ExperimentConfig())
        assert report.passed, report.failed_checks
        assert report.extras["bound_decreasing_in_N"]
        assert all(row["test_accuracy"] >= 0.90 for row in report.rows)

    def test_adversarial_configs_flag_one_assumption(self):
        cases = {
            "A1_conditional_independence": {"world": {"correlation": 1.0}},
            "A6_support_floor": {"decoder": {"floor": 0.0}},
            "A2_bounded_covariance": {"world": {"var_high": 1.5}},
        }
        for target, overrides in cases.items():
            report = validate_assumptions(parse_config(overrides))
            assert report.failed_checks == [target]

    def test_verify_all_is_reproducible(self, tmp_path):
        config = ExperimentConfig()
        first, ok = run_all(config, out_dir=tmp_path / "a")
        second, _ = run_all(config, out_dir=tmp_path / "b")
        assert ok
        for name in EXPERIMENTS:
            a = (tmp_path / "a" / f"{name}_report.json").read_bytes()
            b = (tmp_path / "b" / f"{name}_report.json").read_bytes()
            assert a == b
