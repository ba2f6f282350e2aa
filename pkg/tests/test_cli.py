"""Command-line surface: subcommands, exit codes, file outputs."""

import json
import os
from pathlib import Path

import pytest

from bftlab.cli import main
from bftlab.scenario import Scenario
from bftlab.simnet import Trace

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.setenv("BFTLAB_OUT_DIR", str(tmp_path))
    return tmp_path


class TestRun:
    def test_run_writes_trace_and_report(self, out, capsys):
        code = main(["run", "--scenario", str(SCENARIOS / "destiny_smoke.toml"), "--seed", "3"])
        assert code == 0
        traces = list(out.glob("*.trace.jsonl"))
        reports = list(out.glob("*.report.json"))
        assert len(traces) == 1 and len(reports) == 1
        report = json.loads(reports[0].read_text())
        assert report["protocol"] == "destiny"
        assert report["batches"] == 15
        assert "committed" in capsys.readouterr().out

    def test_adhoc_flags_and_overrides(self, out):
        code = main([
            "run", "--protocol", "dqpbft", "--n", "4", "--seed", "1",
            "--set", "workload.requests_per_client=2",
            "--set", "config.payload_bytes=16",
        ])
        assert code == 0

    def test_bad_scenario_exits_3(self, out):
        code = main(["run", "--protocol", "destiny", "--n", "2", "--seed", "0"])
        assert code == 3

    def test_missing_file_exits_3(self, out):
        code = main(["run", "--scenario", "/nonexistent.toml"])
        assert code == 3

    def test_invalid_adversary_budget_exits_3(self, out, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text(
            '[config]\nprotocol = "destiny"\nn_replicas = 3\n'
            "[[adversary]]\nat = 1.0\nkind = \"crash\"\nreplica = 0\n"
            "[[adversary]]\nat = 2.0\nkind = \"crash\"\nreplica = 1\n"
        )
        assert main(["run", "--scenario", str(bad)]) == 3


class TestSweep:
    def test_sweep_emits_columnar_data(self, out):
        code = main([
            "sweep", "--protocol", "destiny", "--n", "3", "--seed", "2",
            "--param", "config.batch_size", "--values", "1,4",
            "--set", "workload.requests_per_client=2",
        ])
        assert code == 0
        data = (out / "sweep.tsv").read_text().strip().splitlines()
        assert data[0].startswith("config.batch_size\t")
        assert len(data) == 3


class TestModel:
    def test_model_table_and_file(self, out, capsys):
        code = main(["model", "--n-values", "4,7", "--payload-kib", "5"])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "7098.2" in stdout  # pbft row at N=4
        table = (out / "model.tsv").read_text().splitlines()
        assert table[0].split("\t") == [
            "n", "protocol", "f", "throughput", "messages", "t_primary", "t_cmax",
        ]
        assert len(table) == 1 + 8


class TestCompareAndCheck:
    def test_compare_ratio_within_expected_band(self, out, capsys):
        assert main([
            "run", "--scenario", str(SCENARIOS / "destiny_smoke.toml"), "--seed", "4",
        ]) == 0
        trace = next(out.glob("*.trace.jsonl"))
        assert main(["compare", "--trace", str(trace)]) == 0
        stdout = capsys.readouterr().out
        ratio = float(stdout.rsplit(None, 1)[-1])
        assert 1.0 <= ratio <= 1.3

    def test_compare_pbft_ratio_exactly_one(self, out, capsys):
        assert main([
            "run", "--protocol", "pbft", "--n", "4", "--seed", "2",
            "--set", "workload.requests_per_client=2",
            "--set", "config.payload_bytes=16",
        ]) == 0
        trace = next(out.glob("run-pbft-*.trace.jsonl"))
        assert main(["compare", "--trace", str(trace)]) == 0
        stdout = capsys.readouterr().out
        ratio = float(stdout.rsplit(None, 1)[-1])
        assert ratio == 1.0  # protocol traffic only, client messages excluded

    def test_check_clean_trace_exits_0(self, out):
        main(["run", "--scenario", str(SCENARIOS / "destiny_smoke.toml"), "--seed", "5"])
        trace = next(out.glob("*.trace.jsonl"))
        assert main(["check", "--trace", str(trace)]) == 0

    def test_check_tampered_trace_exits_2(self, out):
        main(["run", "--scenario", str(SCENARIOS / "destiny_smoke.toml"), "--seed", "6"])
        path = next(out.glob("*.trace.jsonl"))
        trace = Trace.load(path)
        execs = [r for r in trace.records if r["type"] == "exec"]
        forged = dict(execs[0])
        forged["replica"] = (forged["replica"] + 1) % 3
        forged["result"] = "0badbadbadbadbad"
        trace.records.append(forged)
        trace.write(path)
        assert main(["check", "--trace", str(path)]) == 2


class TestScenarioFiles:
    def test_toml_roundtrip_preserves_content_hash(self, tmp_path):
        scenario = Scenario.from_toml(SCENARIOS / "destiny_smoke.toml")
        again = Scenario.from_dict(scenario.to_dict(), label=scenario.label)
        assert scenario.content_hash() == again.content_hash()

    def test_failover_scenario_parses_with_actions(self):
        scenario = Scenario.from_toml(SCENARIOS / "failover_case1.toml")
        kinds = [a.kind for a in scenario.adversary]
        assert kinds == ["crash", "restart"]
