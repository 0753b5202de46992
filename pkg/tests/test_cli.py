"""End-to-end tests of the command-line entry point."""

import json

import pytest

from erlang_reward_checker.config import settings
from erlang_reward_checker.main import EX_USAGE, run_cli

INVALID_MODEL = """dtmc v1
state s reward=1
state done reward=0 absorbing
trans s s p=0.5
trans s done p=0.3
initial s
"""


def run(capsys, *argv: str) -> tuple[int, dict]:
    code = run_cli(list(argv))
    out = capsys.readouterr().out
    return code, json.loads(out) if out.strip() else {}


def run_failing(capsys, *argv: str) -> tuple[int, str]:
    code = run_cli(list(argv))
    captured = capsys.readouterr()
    assert not captured.out
    return code, captured.err


class TestCommands:
    def test_moments(self, capsys):
        code, report = run(capsys, "moments", "bundled:geometric", "--k", "2")
        assert code == 0
        assert report["payload"]["raw"] == pytest.approx([2.0, 6.0])
        assert report["model_digest"].startswith("sha256:")
        assert "T_moments" in report["timings"]

    def test_validate(self, capsys):
        code, report = run(capsys, "validate", "bundled:uav")
        assert code == 0
        assert report["payload"]["valid"] is True
        assert report["payload"]["absorbing"] == ["landed"]

    def test_validate_reports_issues(self, capsys, tmp_path):
        path = tmp_path / "bad.dtmc"
        path.write_text(INVALID_MODEL, encoding="utf-8")
        code, report = run(capsys, "validate", str(path))
        assert code == 1
        assert report["payload"]["valid"] is False
        assert report["payload"]["issues"]

    def test_check_degenerate(self, capsys):
        code, report = run(capsys, "check", "bundled:deterministic", "--property", "P[X <= 4] >= 0.9")
        assert code == 0
        assert report["payload"]["verdict"]["method"] == "degenerate"

    def test_check_by_bound(self, capsys):
        code, report = run(capsys, "check", "bundled:geometric", "--property", "P[X <= 5] >= 0.5")
        assert code == 0
        assert report["payload"]["verdict"]["method"] == "cantelli(2)"

    def test_check_fails(self, capsys):
        code, report = run(
            capsys, "check", "bundled:geometric", "--property", "P[X <= 1] >= 0.9", "--restarts", "2"
        )
        assert code == 1
        assert report["payload"]["verdict"]["method"] == "fitted_cdf"

    def test_check_bound_only(self, capsys):
        code, report = run(
            capsys, "check", "bundled:geometric", "--property", "P[X <= 5] >= 0.9", "--bound-only"
        )
        assert code == 2
        assert report["payload"]["verdict"]["decision"] == "undetermined_by_bound"

    def test_fit_simulate_compare(self, capsys, tmp_path):
        mixture = tmp_path / "mixture.json"
        samples = tmp_path / "samples.csv"
        code, report = run(
            capsys, "fit", "bundled:geometric", "--restarts", "2", "--out", str(mixture)
        )
        assert code == 0
        assert "wall_time" not in report["payload"]["fit"]
        code, report = run(
            capsys, "simulate", "bundled:geometric", "--runs", "2000", "--out", str(samples)
        )
        assert code == 0
        assert report["payload"]["samples"]["count"] == 2000
        code, report = run(capsys, "compare", "--mixture", str(mixture), "--samples", str(samples))
        assert code == 0
        assert 0.0 <= report["payload"]["ks"] <= 1.0
        assert report["payload"]["samples"] == 2000

    def test_grid(self, capsys):
        code, report = run(
            capsys,
            "grid",
            "bundled:geometric",
            "--k-range",
            "3",
            "--n-range",
            "3..4",
            "--restarts",
            "1",
        )
        assert code == 0
        assert [(c["k"], c["n"]) for c in report["payload"]["grid"]] == [(3, 3), (3, 4)]
        assert "K3/n4/exponential:3/T_opt" in report["timings"]

    def test_reports_repeat_without_timings(self, capsys):
        argv = ("check", "bundled:geometric", "--property", "P[X <= 1] >= 0.9")
        _, first = run(capsys, *argv, "--threads", "1")
        _, second = run(capsys, *argv, "--threads", "8")
        first.pop("timings")
        second.pop("timings")
        assert json.dumps(first, sort_keys=True) == json.dumps(second, sort_keys=True)
        assert "threads" not in first["command"]

    def test_samples_repeat_across_workers(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setattr(settings, "sim_block_size", 500)
        outputs = []
        for threads in ("1", "8"):
            out = tmp_path / f"samples-{threads}.csv"
            argv = ("simulate", "bundled:geometric", "--runs", "4000", "--seed", "3")
            code, _ = run(capsys, *argv, "--threads", threads, "--out", str(out))
            assert code == 0
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1]


class TestUsageErrors:
    def test_bad_property(self, capsys):
        code, err = run_failing(capsys, "check", "bundled:geometric", "--property", "P[X < 5] >= 0.9")
        assert code == EX_USAGE
        assert "Invalid property" in err

    def test_missing_file(self, capsys, tmp_path):
        code, _ = run_failing(capsys, "moments", str(tmp_path / "missing.dtmc"))
        assert code == EX_USAGE

    def test_unknown_command(self, capsys):
        code, _ = run_failing(capsys, "frobnicate")
        assert code == EX_USAGE

    def test_compare_needs_inputs(self, capsys):
        code, err = run_failing(capsys, "compare", "--samples", "x.csv")
        assert code == EX_USAGE
        assert "needs a model" in err
