"""End-to-end tests of the command line surface."""
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from scorepower.cli import main
from scorepower.decision import ScenarioSet, scenarios_to_csv
from scorepower.power import TrialConfig, power_analysis
from scorepower.ror import ror_fraction, summary_max_mean, surface_from_csv
from scorepower.scoring import ScoringRule
from scorepower.testcases import TestCaseId, make_case


def run(capsys, *argv):
    rc = main(list(argv))
    captured = capsys.readouterr()
    return rc, captured.out, captured.err


def read_csv_rows(text):
    lines = text.strip().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, ln.split(","))) for ln in lines[1:]]


@pytest.fixture(scope="module")
def sweep_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    rc = main(["sweep", "--cases", "normal-all-mean-up", "--rules", "nll", "crps-q",
               "--d", "4", "16", "--m", "8", "32", "--K", "60",
               "--master-seed", "3", "--output-dir", str(out)])
    assert rc == 0
    return out


@pytest.fixture()
def scenario_file(tmp_path):
    gen = np.random.default_rng(19)
    sc = ScenarioSet(gen.gamma(2.0, 1.0, size=(20, 4, 3)))
    path = tmp_path / "scenarios.csv"
    path.write_text(scenarios_to_csv(sc))
    return path


class TestCasesCmd:
    def test_lists_all_nineteen(self, capsys):
        rc, out, _ = run(capsys, "cases")
        assert rc == 0
        rows = out.strip().splitlines()[2:]
        assert len(rows) == 19

    def test_json_round_trips_through_parser(self, capsys):
        rc, out, _ = run(capsys, "cases", "--format", "json")
        assert rc == 0
        rows = json.loads(out)
        assert len(rows) == 19
        names = [r["name"] for r in rows]
        rc, out, _ = run(capsys, "cases", "--format", "json", "--cases", *names)
        assert rc == 0
        assert [r["name"] for r in json.loads(out)] == names

    def test_unknown_case_exits_nonzero(self, capsys):
        rc, _, err = run(capsys, "cases", "--cases", "normal-sideways")
        assert rc == 2
        assert "normal-sideways" in err

    def test_filter_subset(self, capsys):
        rc, out, _ = run(capsys, "cases", "--cases", "mixture-extra")
        assert rc == 0
        rows = out.strip().splitlines()[2:]
        assert len(rows) == 1 and rows[0].startswith("mixture-extra")


class TestTuneCmd:
    def test_single_mean_row_is_constant(self, capsys):
        rc, out, _ = run(capsys, "tune", "--cases", "normal-single-mean-up",
                         "--d", "16", "64", "256", "--method", "analytic")
        assert rc == 0
        rows = read_csv_rows(out)
        eps = [float(r["epsilon"]) for r in rows]
        assert len(set(eps)) == 1
        assert abs(eps[0] - 0.9079) < 0.001

    def test_full_and_checker_rows_match(self, capsys):
        rc, out, _ = run(capsys, "tune", "--cases", "full-cov-missing",
                         "checker-cov-missing", "--d", "16", "64")
        assert rc == 0
        rows = read_csv_rows(out)
        by_case = {}
        for r in rows:
            by_case.setdefault(r["case"], []).append(r["epsilon"])
        assert by_case["full-cov-missing"] == by_case["checker-cov-missing"]

    def test_exp_matches_reference_value(self, capsys):
        rc, out, _ = run(capsys, "tune", "--cases", "exp-all-mean-up", "--d", "16")
        assert rc == 0
        eps = float(read_csv_rows(out)[0]["epsilon"])
        assert abs(eps - 1.2666) <= 0.02 * 1.2666

    def test_failures_recorded_and_run_continues(self, capsys):
        # block structure needs an even dimension
        rc, out, _ = run(capsys, "tune", "--cases", "block-cov-missing",
                         "--d", "5", "16")
        assert rc == 0
        rows = read_csv_rows(out)
        assert rows[0]["epsilon"] == "" and rows[0]["error"]
        assert rows[1]["epsilon"] != "" and rows[1]["error"] == ""

    def test_writes_output_file(self, capsys, tmp_path):
        target = tmp_path / "tune.csv"
        rc, out, _ = run(capsys, "tune", "--cases", "normal-single-mean-up",
                         "--d", "16", "--output", str(target))
        assert rc == 0 and out == ""
        assert target.read_text().startswith("case,d,epsilon,error")


class TestPowerCmd:
    def test_matches_library_call_bitwise(self, capsys):
        rc, out, _ = run(capsys, "power", "normal-all-mean-up", "crps-q",
                         "--d", "4", "--m", "16", "--K", "50",
                         "--epsilon", "0.3", "--seed", "9")
        assert rc == 0
        doc = json.loads(out)
        pair = make_case(TestCaseId.NORMAL_ALL_MEAN_UP, 4, 0.3)
        config = TrialConfig(pair, ScoringRule.from_string("crps-q"), 16, 30, 50,
                             0.05, 9)
        res = power_analysis(config)
        assert doc["power"] == res.power
        assert doc["delta_mean"] == res.stats.mean
        assert doc["n_min_80"] == float(res.n_min_80)

    def test_rank_deficient_cell_exits_2(self, capsys):
        rc, _, err = run(capsys, "power", "normal-all-mean-up", "ds",
                         "--d", "16", "--m", "8", "--K", "10", "--epsilon", "0.3")
        assert rc == 2
        assert "m > d" in err


class TestSweepCmd:
    def test_layout_and_manifest(self, sweep_dir):
        for rule_dir in ("nll", "crps-q"):
            base = sweep_dir / "normal-all-mean-up" / rule_dir
            for name in ("surface.csv", "contours.json", "heatmap.svg"):
                assert (base / name).is_file()
        manifest = json.loads((sweep_dir / "manifest.json").read_text())
        listed = {e["path"] for e in manifest["files"]}
        on_disk = {str(p.relative_to(sweep_dir)) for p in sweep_dir.rglob("*")
                   if p.is_file() and p.name != "manifest.json"}
        assert listed == on_disk
        for entry in manifest["files"]:
            data = (sweep_dir / entry["path"]).read_bytes()
            assert hashlib.sha256(data).hexdigest() == entry["sha256"]
            assert len(data) == entry["bytes"]
        config_bytes = (sweep_dir / "config.json").read_bytes()
        assert manifest["config_sha256"] == hashlib.sha256(config_bytes).hexdigest()
        assert set(manifest["versions"]) == {"python", "numpy", "scipy", "scorepower"}
        assert manifest["wall_clock_seconds"] > 0

    def test_config_serialized_verbatim(self, sweep_dir):
        config = json.loads((sweep_dir / "config.json").read_text())
        assert config["cases"] == ["normal-all-mean-up"]
        assert config["rules"] == ["nll", "crps-q"]
        assert config["d_values"] == [4, 16]
        assert config["m_values"] == [8, 32]
        assert config["K"] == 60 and config["master_seed"] == 3

    def test_rerun_is_byte_identical_across_workers(self, sweep_dir, tmp_path, capsys):
        again = tmp_path / "again"
        rc, _, _ = run(capsys, "sweep", "--cases", "normal-all-mean-up",
                       "--rules", "nll", "crps-q", "--d", "4", "16",
                       "--m", "8", "32", "--K", "60", "--master-seed", "3",
                       "--output-dir", str(again), "--workers", "2")
        assert rc == 0
        # config.json records the differing output_dir; data artifacts must match
        for rel in ("normal-all-mean-up/nll/surface.csv",
                    "normal-all-mean-up/crps-q/surface.csv",
                    "normal-all-mean-up/nll/contours.json",
                    "normal-all-mean-up/nll/heatmap.svg"):
            assert (again / rel).read_bytes() == (sweep_dir / rel).read_bytes()

    def test_setup_failure_exits_3(self, tmp_path, capsys):
        rc, _, err = run(capsys, "sweep", "--cases", "block-cov-missing",
                         "--rules", "nll", "--d", "5", "--m", "8", "16",
                         "--K", "40", "--output-dir", str(tmp_path / "bad"))
        assert rc == 3
        assert "case setup failed" in err
        # outputs still written for inspection
        surface = surface_from_csv(
            (tmp_path / "bad" / "block-cov-missing" / "nll" / "surface.csv").read_text())
        assert all(surface.mask[0, j] is not None for j in range(2))

    def test_structural_skip_is_not_failure(self, tmp_path, capsys):
        rc, _, _ = run(capsys, "sweep", "--cases", "normal-all-mean-up",
                       "--rules", "ds", "--d", "16", "--m", "8", "32",
                       "--K", "40", "--output-dir", str(tmp_path / "ds"))
        assert rc == 0
        surface = surface_from_csv(
            (tmp_path / "ds" / "normal-all-mean-up" / "ds" / "surface.csv").read_text())
        assert surface.mask[0, 0] == "m <= d"
        assert surface.mask[0, 1] is None

    def test_invalid_config_exits_2_before_any_output(self, tmp_path, capsys):
        out = tmp_path / "never"
        rc, _, err = run(capsys, "sweep", "--alpha", "1.5",
                         "--output-dir", str(out))
        assert rc == 2
        assert "alpha" in err
        assert not out.exists()

    def test_config_file_with_flag_override(self, tmp_path, capsys):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({
            "cases": ["normal-all-mean-up"], "rules": ["nll"],
            "d_values": [4], "m_values": [8], "K": 40, "master_seed": 1}))
        out = tmp_path / "run"
        rc, _, _ = run(capsys, "sweep", "--config", str(cfg), "--K", "50",
                       "--output-dir", str(out))
        assert rc == 0
        written = json.loads((out / "config.json").read_text())
        assert written["K"] == 50
        assert written["cases"] == ["normal-all-mean-up"]
        assert written["master_seed"] == 1

    def test_env_var_supplies_output_dir(self, tmp_path, capsys, monkeypatch):
        target = tmp_path / "from-env"
        monkeypatch.setenv("SCOREPOWER_OUTPUT", str(target))
        rc, _, _ = run(capsys, "sweep", "--cases", "normal-all-mean-up",
                       "--rules", "nll", "--d", "4", "--m", "8", "--K", "40")
        assert rc == 0
        assert (target / "manifest.json").is_file()


class TestSummaryCmd:
    def test_tables_match_library(self, sweep_dir, capsys):
        rc, out, _ = run(capsys, "summary", str(sweep_dir))
        assert rc == 0
        assert "max over m, mean over d" in out
        assert "fraction of m>d cells" in out
        surfaces = [surface_from_csv(p.read_text())
                    for p in sorted(sweep_dir.glob("*/*/surface.csv"))]
        expected_mm = summary_max_mean(surfaces)
        expected_fr = ror_fraction(surfaces)
        mm_rows = read_csv_rows((sweep_dir / "summary_max_mean.csv").read_text())
        assert {(r["case"], r["rule"]): float(r["max_mean_power"]) for r in mm_rows} \
            == expected_mm
        fr_rows = read_csv_rows(
            (sweep_dir / "summary_reliable_fraction.csv").read_text())
        assert {(r["case"], r["rule"]): float(r["reliable_fraction"]) for r in fr_rows} \
            == expected_fr

    def test_power_printed_to_four_decimals(self, sweep_dir, capsys):
        rc, out, _ = run(capsys, "summary", str(sweep_dir))
        assert rc == 0
        table_line = [ln for ln in out.splitlines() if ln.startswith("normal-all-mean-up")][0]
        cells = table_line.split()[1:]
        assert all(len(c.split(".")[1]) == 4 for c in cells)

    def test_empty_dir_exits_2(self, tmp_path, capsys):
        rc, _, err = run(capsys, "summary", str(tmp_path))
        assert rc == 2
        assert "no surface" in err


class TestDecisionCmd:
    def test_writes_plan_and_profit(self, scenario_file, tmp_path, capsys):
        out = tmp_path / "dec"
        rc, _, _ = run(capsys, "decision", str(scenario_file), "--budget", "2",
                       "--penalty", "10", "--output-dir", str(out))
        assert rc == 0
        plan = json.loads((out / "plan.json").read_text())
        assert len(plan["active"]) <= 2
        assert len(plan["commitments"]) == 3
        profit = json.loads((out / "profit_report.json").read_text())
        assert profit["expected_profit"] == plan["meta"]["expected_profit"]
        assert not (out / "loo_report.json").exists()

    def test_loo_break_correlations_quantile_rule(self, scenario_file, capsys):
        rc, out, _ = run(capsys, "decision", str(scenario_file), "--budget", "3",
                         "--penalty", "5", "--perturb", "break_correlations",
                         "--rule", "crps-q")
        assert rc == 0
        doc = json.loads(out)
        # column shuffles keep every order statistic, so the gap is zero
        assert doc["loo"]["degenerate"] is True
        assert doc["loo"]["power"] == 0.05
        assert "caveat" in doc["loo"]

    def test_loo_shift_detected(self, scenario_file, capsys):
        rc, out, _ = run(capsys, "decision", str(scenario_file), "--budget", "4",
                         "--penalty", "5", "--perturb", "shift",
                         "--perturb-value", "5.0")
        assert rc == 0
        doc = json.loads(out)
        assert doc["loo"]["power"] > 0.99

    def test_bad_penalty_exits_2(self, scenario_file, capsys):
        rc, _, err = run(capsys, "decision", str(scenario_file), "--budget", "2",
                         "--penalty", "1.0")
        assert rc == 2
        assert "exceed 1" in err

    def test_missing_file_exits_2(self, capsys, tmp_path):
        rc, _, err = run(capsys, "decision", str(tmp_path / "nope.csv"),
                         "--budget", "1", "--penalty", "2")
        assert rc == 2
        assert "cannot read" in err
