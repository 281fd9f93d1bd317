# ABOUTME: Tests for the selforg-sim command line: run, replay, validate and demo-theorem1.
# ABOUTME: Commands run through main(argv) and are checked by exit code and printed result record.

import json
import logging
from pathlib import Path

import pytest
import yaml

from selforg_sim.__main__ import EXIT_BELOW_EXPECTED, EXIT_ERROR, EXIT_OK, main
from selforg_sim.demons import ChurnEvent, ChurnSchedule, DemonClass, write_schedule
from selforg_sim.model import ActionKind

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture(autouse=True)
def reset_root_logger():
    root = logging.getLogger()
    saved = list(root.handlers)
    yield
    for handler in list(root.handlers):
        if handler not in saved:
            root.removeHandler(handler)
            handler.close()


def write_scenario(tmp_path, name="ring", **overrides):
    raw = {
        "protocol": "LSA",
        "demon": {"class": "Bounded", "bound": 0},
        "criterion": "proximity",
        "initial_nodes": 5,
        "horizon": 300,
        "seed": 11,
        "protocol_params": {"topology": "ring"},
    }
    raw.update(overrides)
    path = tmp_path / f"{name}.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def run_cli(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    return exc.value.code


def results(capsys):
    """Printed command results; log lines carry a level and are skipped."""
    out = []
    for line in capsys.readouterr().out.splitlines():
        try:
            record = json.loads(line)
        except json.JSONDecodeError:
            continue
        if isinstance(record, dict) and "level" not in record:
            out.append(record)
    return out


class TestRun:
    def test_run_writes_outputs(self, tmp_path, capsys):
        scenario = write_scenario(tmp_path)
        assert run_cli(["run", str(scenario), str(tmp_path / "out")]) == EXIT_OK
        record = results(capsys)[-1]
        assert record["scenario"] == "ring"
        assert record["class"] == "Strong"
        assert (tmp_path / "out" / "trace.jsonl").exists()
        assert (tmp_path / "out" / "metrics.prom").exists()

    def test_expect_met(self, tmp_path):
        scenario = write_scenario(tmp_path)
        assert run_cli(["run", str(scenario), str(tmp_path / "out"), "--expect", "Strong"]) == EXIT_OK

    def test_expect_not_met(self, tmp_path):
        scenario = write_scenario(tmp_path, demon={"class": "Adversarial"}, horizon=150)
        code = run_cli(["run", str(scenario), str(tmp_path / "out"), "--expect", "Self"])
        assert code == EXIT_BELOW_EXPECTED

    def test_query_kernel_scenario_is_strong(self, tmp_path, capsys):
        scenario = SCENARIOS / "query-kernel.yaml"
        assert run_cli(["run", str(scenario), str(tmp_path / "out"), "--expect", "Strong"]) == EXIT_OK
        record = results(capsys)[-1]
        assert record["class"] == "Strong"
        assert record["demon_promise_kept"] is True

    def test_records_format(self, tmp_path):
        scenario = write_scenario(tmp_path)
        assert run_cli(["run", str(scenario), str(tmp_path / "out"), "--format", "records"]) == EXIT_OK
        assert not (tmp_path / "out" / "summary.csv").exists()

    def test_missing_scenario(self, tmp_path):
        assert run_cli(["run", str(tmp_path / "nope.yaml"), str(tmp_path / "out")]) == EXIT_ERROR

    def test_schema_error(self, tmp_path):
        scenario = write_scenario(tmp_path, colour="blue")
        assert run_cli(["run", str(scenario), str(tmp_path / "out")]) == EXIT_ERROR

    def test_infeasible_query_initiator(self, tmp_path):
        scenario = write_scenario(
            tmp_path,
            protocol="OneShotQuery",
            criterion="query",
            initial_nodes=3,
            protocol_params={"initiator": 7},
        )
        assert run_cli(["run", str(scenario), str(tmp_path / "out")]) == EXIT_ERROR

    def test_command_is_required(self):
        assert run_cli([]) == 2


class TestReplay:
    def make_trace(self, tmp_path):
        scenario = write_scenario(tmp_path, demon={"class": "Bounded", "bound": 2})
        assert run_cli(["run", str(scenario), str(tmp_path / "out")]) == EXIT_OK
        return tmp_path / "out" / "trace.jsonl"

    def test_replay_verifies(self, tmp_path, capsys):
        trace = self.make_trace(tmp_path)
        capsys.readouterr()
        assert run_cli(["replay", str(trace)]) == EXIT_OK
        record = results(capsys)[-1]
        assert record["trace"] == str(trace)
        lines = trace.read_text().splitlines()
        actions = sum(1 for line in lines if '"type":"action"' in line)
        assert record["verified_hashes"] == actions

    def test_replay_writes_report(self, tmp_path):
        trace = self.make_trace(tmp_path)
        assert run_cli(["replay", str(trace), "--out", str(tmp_path / "again")]) == EXIT_OK
        assert (tmp_path / "again" / "report.jsonl").exists()
        assert (tmp_path / "again" / "summary.csv").exists()

    def test_replay_matches_run_summary(self, tmp_path):
        trace = self.make_trace(tmp_path)
        run_cli(["replay", str(trace), "--out", str(tmp_path / "again")])
        original = (tmp_path / "out" / "summary.csv").read_text()
        assert (tmp_path / "again" / "summary.csv").read_text() == original

    def test_tampered_trace(self, tmp_path):
        trace = self.make_trace(tmp_path)
        lines = trace.read_text().splitlines()
        record = json.loads(lines[1])
        record["post_state_hash"] = "f" * 64
        lines[1] = json.dumps(record)
        trace.write_text("\n".join(lines) + "\n")
        assert run_cli(["replay", str(trace)]) == EXIT_ERROR

    def test_missing_trace(self, tmp_path):
        assert run_cli(["replay", str(tmp_path / "trace.jsonl")]) == EXIT_ERROR


class TestValidate:
    def test_valid_schedule(self, tmp_path, capsys):
        scenario = write_scenario(tmp_path, demon={"class": "Bounded", "bound": 2})
        schedule = tmp_path / "schedule.jsonl"
        write_schedule(
            ChurnSchedule(DemonClass.BOUNDED, (ChurnEvent(5, ActionKind.CONNECT, 6),), 2),
            schedule,
        )
        assert run_cli(["validate", str(schedule), str(scenario)]) == EXIT_OK
        assert results(capsys)[-1]["valid"]

    def test_schedule_over_bound(self, tmp_path, capsys):
        scenario = write_scenario(tmp_path, demon={"class": "Bounded", "bound": 1})
        schedule = tmp_path / "schedule.jsonl"
        events = (ChurnEvent(5, ActionKind.CONNECT, 6), ChurnEvent(10, ActionKind.DISCONNECT, 2))
        write_schedule(ChurnSchedule(DemonClass.BOUNDED, events, 1), schedule)
        assert run_cli(["validate", str(schedule), str(scenario)]) == EXIT_BELOW_EXPECTED
        record = results(capsys)[-1]
        assert not record["valid"]
        assert "exceed the bound of 1" in record["problems"][0]

    def test_run_schedule_validates(self, tmp_path):
        scenario = write_scenario(tmp_path, demon={"class": "Bounded", "bound": 3})
        run_cli(["run", str(scenario), str(tmp_path / "out")])
        assert run_cli(["validate", str(tmp_path / "out" / "schedule.jsonl"), str(scenario)]) == EXIT_OK


class TestDemo:
    def test_demo_diverges(self, tmp_path, capsys):
        assert run_cli(["demo-theorem1", "--horizon", "200", "--out", str(tmp_path)]) == EXIT_OK
        record = results(capsys)[-1]
        assert record["diverged"]
        assert record["stable_configurations"] == 0
        assert record["converged_without_churn"]
        assert record["liveness_witness"]["horizon"] == record["actions"]
