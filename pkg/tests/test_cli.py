import json
import subprocess
import sys
from pathlib import Path

import pytest
from click.testing import CliRunner

from metatrend.cli import cli

RUNNER = CliRunner()


def make_fixture(tmp_path: Path, days=300, stocks=2, meta_steps=3) -> Path:
    """Tiny deterministic universe plus a fast config; returns config path."""
    data_dir = tmp_path / "data"
    result = RUNNER.invoke(cli, [
        "synth", "--out", str(data_dir), "--stocks", str(stocks),
        "--days", str(days), "--pattern", "deterministic", "--seed", "3",
    ])
    assert result.exit_code == 0, result.output
    from metatrend.synth import business_days, SynthSpec
    from datetime import date
    dates = business_days(date(2015, 1, 1), days)
    config = {
        "seed": 3,
        "data": {"universe": str(data_dir / "universe.json")},
        "mode": "meta-ind",
        "model": {"arch": "fcn", "scale_divisor": 16, "tcn_levels": 4},
        "train": {
            "alpha": 1e-3, "beta": 1e-3, "gamma": 1e-3,
            "meta_steps": meta_steps, "inner_epochs": 1, "finetune_epochs": 2,
        },
        "periods": {
            "meta_train_start": "2015-01-01",
            "eval_start": "2015-01-01",
            "eval_end": dates[-1].isoformat(),
        },
    }
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config))
    return config_path


def invoke(args):
    result = RUNNER.invoke(cli, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


def test_synth_emit_config_round_trips(tmp_path):
    out = tmp_path / "fixture"
    invoke(["synth", "--out", str(out), "--stocks", "2", "--days", "60",
            "--emit-config"])
    assert (out / "universe.json").exists()
    assert (out / "SYN00.csv").exists()
    from metatrend.config import load_config
    cfg, _ = load_config(out / "config.json")
    assert cfg.scale.divisor == 8


def test_label_then_dataset_pipeline(tmp_path):
    config = make_fixture(tmp_path)
    outdir = tmp_path / "out"
    invoke(["label", "-c", str(config), "-o", str(outdir)])
    labels = outdir / "labels" / "labels_SYN00.csv"
    assert labels.exists()
    first = labels.read_text().splitlines()[0]
    assert first.startswith("# config_hash=")
    invoke(["features", "-c", str(config), "-o", str(outdir)])
    invoke(["dataset", "-c", str(config), "-o", str(outdir)])
    assert (outdir / "datasets" / "SYN00.bin").exists()


def test_dataset_before_label_names_producer(tmp_path):
    config = make_fixture(tmp_path)
    outdir = tmp_path / "out"
    result = RUNNER.invoke(cli, ["dataset", "-c", str(config), "-o", str(outdir)])
    assert result.exit_code != 0
    assert "label" in str(result.exception)


def test_evaluate_before_finetune_names_producer(tmp_path):
    config = make_fixture(tmp_path)
    outdir = tmp_path / "out"
    result = RUNNER.invoke(cli, ["evaluate", "-c", str(config), "-o", str(outdir)])
    assert result.exit_code != 0
    assert "finetune" in str(result.exception)


def test_sigma_ratio_outputs(tmp_path):
    config = make_fixture(tmp_path)
    outdir = tmp_path / "out"
    invoke(["sigma-ratio", "-c", str(config), "-o", str(outdir)])
    payload = json.loads((outdir / "sigma_ratio.json").read_text())
    assert "config_hash" in payload
    years = payload["years"]
    assert years
    for summary in years.values():
        assert set(summary) == {"min", "q1", "median", "q3", "max", "count"}
        assert summary["min"] <= summary["q1"] <= summary["median"]
        assert summary["median"] <= summary["q3"] <= summary["max"]
    assert (outdir / "figures" / "sigma_ratio.png").exists()


def test_run_all_smoke_and_artifacts(tmp_path):
    config = make_fixture(tmp_path)
    outdir = tmp_path / "out"
    invoke(["run-all", "-c", str(config), "-o", str(outdir)])
    for artifact in [
        "labels/labels_SYN00.csv",
        "features/features_SYN01.csv",
        "datasets/SYN00.json",
        "phi.params",
        "meta_loss.csv",
        "predictions_meta-ind-fcn.csv",
        "manifest.json",
        "metrics.json",
        "metrics_comparison.csv",
        "equity_meta-ind-fcn.csv",
        "trades_meta-ind-fcn.csv",
        "backtest_comparison.csv",
        "figures/meta_loss.png",
        "figures/equity.png",
        "run.log",
    ]:
        assert (outdir / artifact).exists(), artifact
    metrics = json.loads((outdir / "metrics.json").read_text())
    run = metrics["runs"]["meta-ind-fcn"]
    assert set(run) == {"four_level", "two_level"}
    manifest = json.loads((outdir / "manifest.json").read_text())
    assert manifest["runs"]["meta-ind-fcn"]["mode"] == "meta-ind"
    assert manifest["runs"]["meta-ind-fcn"]["windows"]


def test_run_all_deterministic_reruns(tmp_path):
    config = make_fixture(tmp_path, days=300, meta_steps=2)
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    invoke(["run-all", "-c", str(config), "-o", str(out_a), "--threads", "1"])
    invoke(["run-all", "-c", str(config), "-o", str(out_b), "--threads", "1"])
    for name in ("metrics.json", "equity_meta-ind-fcn.csv",
                 "predictions_meta-ind-fcn.csv", "meta_loss.csv"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name


def test_threaded_run_matches_serial(tmp_path):
    config = make_fixture(tmp_path, days=300, meta_steps=2)
    out_a = tmp_path / "serial"
    out_b = tmp_path / "threaded"
    invoke(["run-all", "-c", str(config), "-o", str(out_a), "--threads", "1"])
    invoke(["run-all", "-c", str(config), "-o", str(out_b), "--threads", "4"])
    assert (out_a / "metrics.json").read_bytes() == (out_b / "metrics.json").read_bytes()


def test_finetune_mode_override_creates_second_run(tmp_path):
    config = make_fixture(tmp_path)
    outdir = tmp_path / "out"
    invoke(["run-all", "-c", str(config), "-o", str(outdir)])
    invoke(["finetune", "-c", str(config), "-o", str(outdir), "--mode", "ind"])
    assert (outdir / "predictions_ind-fcn.csv").exists()
    invoke(["evaluate", "-c", str(config), "-o", str(outdir)])
    metrics = json.loads((outdir / "metrics.json").read_text())
    assert set(metrics["runs"]) == {"meta-ind-fcn", "ind-fcn"}
    manifest = json.loads((outdir / "manifest.json").read_text())
    assert manifest["runs"]["ind-fcn"]["initializer"] == "random"


def test_cli_error_record_is_machine_readable(tmp_path):
    bad_config = tmp_path / "bad.json"
    bad_config.write_text(json.dumps({"unknown_key": 1}))
    proc = subprocess.run(
        [sys.executable, "-m", "metatrend.cli", "label", "-c", str(bad_config),
         "-o", str(tmp_path / "out")],
        capture_output=True, text=True,
    )
    assert proc.returncode != 0
    record = json.loads(proc.stderr.strip().splitlines()[-1])
    assert record["error"] == "ConfigError"
    assert "unknown_key" in record["message"]


@pytest.mark.parametrize("command", [
    "synth", "label", "sigma-ratio", "features", "dataset", "meta-train",
    "finetune", "evaluate", "backtest", "run-all",
])
def test_every_subcommand_has_help(command):
    result = RUNNER.invoke(cli, [command, "--help"])
    assert result.exit_code == 0
    assert "--help" in result.output or "Usage" in result.output
