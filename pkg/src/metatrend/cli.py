"""Command-line pipeline: every stage of the workflow as one subcommand.

Ordering of stages: label -> features -> dataset -> meta-train -> finetune
-> evaluate -> backtest, with `run-all` chaining them for the configured
mode/arch pair and `synth` generating desk-scale fixture universes. Each
stage validates the config hash of its inputs and writes its outputs
atomically, so re-running a stage with the same inputs is a no-op
(byte-identical files).
"""

import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import date
from pathlib import Path

import click
import numpy as np

from metatrend import backtest as bt
from metatrend import reports
from metatrend.config import RunConfig, fixture_config_dict, load_config
from metatrend.errors import ArtifactMissingError, PipelineError
from metatrend.finetune import (
    finetune_individual,
    finetune_universal,
    predict,
    read_predictions_csv,
    sliding_windows,
    write_predictions_csv,
)
from metatrend.indicators import feature_matrix, read_features_csv, write_features_csv
from metatrend.ioutil import read_json, write_csv, write_json
from metatrend.labeling import (
    label_series,
    read_labels_csv,
    sigma_ratio_series,
    write_labels_csv,
    yearly_quartiles,
)
from metatrend.market_data import Universe, load_manifest
from metatrend.meta import meta_train
from metatrend.metrics import evaluate_records, per_month_breakdown
from metatrend.nn.network import build_model, load_params, save_params
from metatrend.synth import PATTERNS, SynthSpec, synth_generate
from metatrend.tensor import build_dataset, load_dataset, save_dataset
from metatrend.timeutil import DateRange, add_months

logger = logging.getLogger(__name__)


def _setup_logging(outdir: Path) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    root = logging.getLogger("metatrend")
    root.setLevel(logging.INFO)
    root.handlers.clear()
    file_handler = logging.FileHandler(outdir / "run.log")
    file_handler.setFormatter(
        logging.Formatter("%(asctime)s %(levelname)s %(name)s %(message)s")
    )
    root.addHandler(file_handler)
    stream = logging.StreamHandler(sys.stderr)
    stream.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    root.addHandler(stream)


def _executor(threads: int):
    return ThreadPoolExecutor(max_workers=threads) if threads > 1 else None


def _map(executor, fn, items):
    if executor is None:
        return [fn(item) for item in items]
    return list(executor.map(fn, items))


class Workspace:
    """Paths of every artifact inside one output directory."""

    def __init__(self, outdir: Path, cfg: RunConfig, chash: str):
        self.outdir = Path(outdir)
        self.cfg = cfg
        self.hash = chash
        self.labels_dir = self.outdir / "labels"
        self.features_dir = self.outdir / "features"
        self.datasets_dir = self.outdir / "datasets"
        self.figures_dir = self.outdir / "figures"
        self.phi_path = self.outdir / "phi.params"
        self.manifest_path = self.outdir / "manifest.json"

    def labels_csv(self, sid: str) -> Path:
        return self.labels_dir / f"labels_{sid}.csv"

    def features_csv(self, sid: str) -> Path:
        return self.features_dir / f"features_{sid}.csv"

    def dataset_stem(self, sid: str) -> Path:
        return self.datasets_dir / sid

    def predictions_csv(self, run: str) -> Path:
        return self.outdir / f"predictions_{run}.csv"

    def universe(self) -> Universe:
        return load_manifest(self.cfg.universe)


def step_label(ws: Workspace, universe: Universe, executor=None) -> None:
    def one(sid: str):
        labels = label_series(universe.series[sid], ws.cfg.labeling)
        write_labels_csv(labels, ws.labels_csv(sid), config_hash=ws.hash)
        return sid, len(labels)

    for sid, count in _map(executor, one, universe.stock_ids):
        logger.info("labeled %s: %d days", sid, count)


def step_sigma_ratio(ws: Workspace, universe: Universe) -> Path:
    pooled: dict[int, list[float]] = {}
    for sid in universe.stock_ids:
        for day, ratio in sigma_ratio_series(universe.series[sid], ws.cfg.labeling):
            pooled.setdefault(day.year, []).append(ratio)
    flat = [(date(year, 1, 1), r) for year, rs in pooled.items() for r in rs]
    summary = yearly_quartiles(flat)
    out = ws.outdir / "sigma_ratio.json"
    write_json(out, {"years": {str(y): q for y, q in summary.items()}},
               config_hash=ws.hash)
    reports.sigma_ratio_figure(pooled, ws.figures_dir / "sigma_ratio.png")
    return out


def step_features(ws: Workspace, universe: Universe, executor=None) -> None:
    def one(sid: str):
        fm = feature_matrix(universe.series[sid], ws.cfg.indicators)
        write_features_csv(fm, ws.features_csv(sid), config_hash=ws.hash)
        return sid

    for sid in _map(executor, one, universe.stock_ids):
        logger.info("features written for %s", sid)


def step_dataset(ws: Workspace, universe: Universe, executor=None) -> None:
    def one(sid: str):
        labels = read_labels_csv(ws.labels_csv(sid), sid, expect_hash=ws.hash)
        fm = read_features_csv(ws.features_csv(sid), sid, expect_hash=ws.hash)
        ds = build_dataset(fm, labels, None, ws.cfg.normalization)
        save_dataset(ds, ws.dataset_stem(sid), config_hash=ws.hash)
        return sid, len(ds)

    for sid, count in _map(executor, one, universe.stock_ids):
        logger.info("dataset %s: %d examples", sid, count)


def _load_datasets(ws: Workspace, universe: Universe) -> dict:
    datasets = {}
    for sid in universe.stock_ids:
        stem = ws.dataset_stem(sid)
        if not stem.with_suffix(".json").exists():
            raise ArtifactMissingError(stem.with_suffix(".json"), "dataset")
        datasets[sid] = load_dataset(stem, expect_hash=ws.hash)
    return datasets


def step_meta_train(ws: Workspace, universe: Universe, executor=None) -> Path:
    datasets = _load_datasets(ws, universe)
    start = ws.cfg.periods.meta_train_start
    support_range = DateRange(start, add_months(start, 12))
    query_range = DateRange(add_months(start, 12), add_months(start, 13))
    pools = {sid: ds.slice_range(support_range) for sid, ds in datasets.items()}
    queries = {sid: ds.slice_range(query_range) for sid, ds in datasets.items()}
    phi = build_model(ws.cfg.arch, ws.cfg.scale, ws.cfg.seed)
    state = meta_train(pools, queries, ws.cfg.train, phi, ws.cfg.seed, executor)
    save_params(state.phi, ws.phi_path, config_hash=ws.hash)
    write_csv(
        ws.outdir / "meta_loss.csv",
        ["step", "lr", "meta_loss"],
        [(s, repr(lr), repr(loss)) for s, lr, loss in state.loss_log],
        config_hash=ws.hash,
    )
    reports.meta_loss_figure(state.loss_log, ws.figures_dir / "meta_loss.png")
    logger.info("meta-training done: %d steps, final loss %.6f",
                state.step, state.loss_log[-1][2] if state.loss_log else float("nan"))
    return ws.phi_path


def step_finetune(ws: Workspace, universe: Universe, executor=None) -> Path:
    cfg = ws.cfg
    datasets = _load_datasets(ws, universe)
    splits = sliding_windows(cfg.periods.eval_start, cfg.periods.eval_end)
    if cfg.uses_meta:
        init = load_params(ws.phi_path, arch=cfg.arch, expect_hash=ws.hash)
    else:
        init = build_model(cfg.arch, cfg.scale, cfg.seed)
    if cfg.mode.endswith("ind"):
        stock_ids = sorted(datasets)

        def one(sid: str):
            return finetune_individual(init, splits, datasets[sid], cfg.train, cfg.seed)

        records = []
        for recs in _map(executor, one, stock_ids):
            records.extend(recs)
    else:
        records = finetune_universal(init, splits, datasets, cfg.train, cfg.seed)
    if not records:
        raise PipelineError("fine-tuning produced no predictions")
    run = cfg.run_name
    out = ws.predictions_csv(run)
    write_predictions_csv(records, out, config_hash=ws.hash)
    manifest = {"runs": {}}
    if ws.manifest_path.exists():
        manifest = read_json(ws.manifest_path)
        manifest.pop("config_hash", None)
        manifest.setdefault("runs", {})
    manifest["runs"][run] = {
        "mode": cfg.mode,
        "arch": cfg.arch,
        "seed": cfg.seed,
        "initializer": "phi.params" if cfg.uses_meta else "random",
        "records": len(records),
        "windows": [
            {"train": str(s.train_range), "test": str(s.test_range)} for s in splits
        ],
    }
    write_json(ws.manifest_path, manifest, config_hash=ws.hash)
    logger.info("finetune %s: %d prediction records over %d windows",
                run, len(records), len(splits))
    return out


def _find_prediction_runs(ws: Workspace) -> dict[str, Path]:
    files = sorted(ws.outdir.glob("predictions_*.csv"))
    if not files:
        raise ArtifactMissingError(ws.outdir / "predictions_<run>.csv", "finetune")
    return {f.stem.removeprefix("predictions_"): f for f in files}


def step_evaluate(ws: Workspace, per_month: bool = False) -> Path:
    runs = _find_prediction_runs(ws)
    payload = {"runs": {}}
    comparison_rows = []
    for run, path in runs.items():
        records = read_predictions_csv(path, expect_hash=ws.hash)
        blocks = evaluate_records(records)
        if per_month:
            blocks["per_month"] = per_month_breakdown(records)
        payload["runs"][run] = blocks
        for level in ("four_level", "two_level"):
            block = blocks[level]
            comparison_rows.append((
                run, level,
                f"{block['regular_accuracy']:.6f}",
                f"{block['balanced_accuracy']:.6f}",
                f"{block['weighted_f1']:.6f}",
                f"{block['precision'].get('rise', 0.0):.6f}",
            ))
    out = ws.outdir / "metrics.json"
    write_json(out, payload, config_hash=ws.hash)
    write_csv(
        ws.outdir / "metrics_comparison.csv",
        ["run", "level", "regular_accuracy", "balanced_accuracy", "weighted_f1", "rise_precision"],
        comparison_rows,
        config_hash=ws.hash,
    )
    reports.metrics_figure(payload["runs"], ws.figures_dir / "metrics_comparison.png")
    logger.info("evaluated %d runs", len(runs))
    return out


def step_backtest(ws: Workspace, universe: Universe) -> Path:
    runs = _find_prediction_runs(ws)
    curves = {}
    comparison_rows = []
    for run, path in runs.items():
        records = read_predictions_csv(path, expect_hash=ws.hash)
        curve, trades = bt.run_backtest(records, universe, ws.cfg.backtest)
        curves[run] = curve
        bt.write_equity_csv(curve, ws.outdir / f"equity_{run}.csv", config_hash=ws.hash)
        bt.write_trades_csv(trades, ws.outdir / f"trades_{run}.csv", config_hash=ws.hash)
        comparison_rows.append((
            run,
            repr(bt.cumulative_return(curve)),
            repr(curve.final),
            json.dumps({str(y): round(r, 6) for y, r in bt.yearly_returns(curve).items()}),
        ))
        logger.info("backtest %s: cumulative return %.4f", run, bt.cumulative_return(curve))
    write_csv(
        ws.outdir / "backtest_comparison.csv",
        ["run", "cumulative_return", "final_value", "yearly_returns"],
        comparison_rows,
        config_hash=ws.hash,
    )
    reports.equity_figure(curves, ws.figures_dir / "equity.png")
    return ws.outdir / "backtest_comparison.csv"


def _workspace(config: str, outdir: str) -> Workspace:
    cfg, chash = load_config(config)
    ws = Workspace(Path(outdir), cfg, chash)
    _setup_logging(ws.outdir)
    logger.info("config %s hash %s", config, chash)
    return ws


_config_opt = click.option("--config", "-c", required=True,
                           type=click.Path(exists=False), help="Run config JSON file.")
_outdir_opt = click.option("--outdir", "-o", default="out", show_default=True,
                           help="Directory for every artifact of this run.")
_threads_opt = click.option("--threads", default=1, show_default=True,
                            help="Worker threads for per-stock stages (1 = fully serial).")


@click.group()
def cli():
    """Meta-learned stock trend prediction pipeline."""


@cli.command()
@click.option("--out", required=True, help="Directory for the generated universe.")
@click.option("--stocks", default=4, show_default=True)
@click.option("--days", default=540, show_default=True)
@click.option("--pattern", default="deterministic", show_default=True,
              type=click.Choice(PATTERNS))
@click.option("--seed", default=0, show_default=True)
@click.option("--emit-config", is_flag=True,
              help="Also write a ready-to-run config.json next to the data.")
@click.option("--mode", default="meta-ind", show_default=True)
@click.option("--arch", default="fcn", show_default=True)
def synth(out, stocks, days, pattern, seed, emit_config, mode, arch):
    """Generate a synthetic universe (CSV files + universe.json)."""
    spec = SynthSpec(stocks=stocks, days=days, pattern=pattern)
    manifest = synth_generate(out, spec, seed)
    click.echo(f"wrote {manifest}")
    if emit_config:
        from metatrend.synth import business_days
        dates = business_days(spec.start_date, spec.days)
        cfg = fixture_config_dict("universe.json", dates[0], dates[-1],
                                  mode=mode, arch=arch, seed=seed)
        cfg_path = Path(out) / "config.json"
        cfg_path.write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
        click.echo(f"wrote {cfg_path}")


@cli.command()
@_config_opt
@_outdir_opt
@_threads_opt
def label(config, outdir, threads):
    """Slope-detection labels per stock (labels_<stock>.csv)."""
    ws = _workspace(config, outdir)
    step_label(ws, ws.universe(), _executor(threads))


@cli.command(name="sigma-ratio")
@_config_opt
@_outdir_opt
def sigma_ratio(config, outdir):
    """Per-year quartiles of sigma/close (sigma_ratio.json + box plot)."""
    ws = _workspace(config, outdir)
    out = step_sigma_ratio(ws, ws.universe())
    click.echo(f"wrote {out}")


@cli.command()
@_config_opt
@_outdir_opt
@_threads_opt
def features(config, outdir, threads):
    """15-feature matrices per stock (features_<stock>.csv)."""
    ws = _workspace(config, outdir)
    step_features(ws, ws.universe(), _executor(threads))


@cli.command()
@_config_opt
@_outdir_opt
@_threads_opt
def dataset(config, outdir, threads):
    """Labeled tensor datasets per stock (needs label + features)."""
    ws = _workspace(config, outdir)
    step_dataset(ws, ws.universe(), _executor(threads))


@cli.command(name="meta-train")
@_config_opt
@_outdir_opt
@_threads_opt
def meta_train_cmd(config, outdir, threads):
    """Episodic pre-training of the shared initializer (phi.params)."""
    ws = _workspace(config, outdir)
    out = step_meta_train(ws, ws.universe(), _executor(threads))
    click.echo(f"wrote {out}")


@cli.command()
@_config_opt
@_outdir_opt
@_threads_opt
@click.option("--mode", default=None, help="Override the config mode for this run.")
@click.option("--arch", default=None, help="Override the config architecture.")
def finetune(config, outdir, threads, mode, arch):
    """Walk-forward fine-tuning and predictions (predictions_<run>.csv)."""
    ws = _workspace(config, outdir)
    if mode or arch:
        from dataclasses import replace
        ws.cfg = replace(ws.cfg, mode=mode or ws.cfg.mode, arch=arch or ws.cfg.arch)
    out = step_finetune(ws, ws.universe(), _executor(threads))
    click.echo(f"wrote {out}")


@cli.command()
@_config_opt
@_outdir_opt
@click.option("--per-month", is_flag=True, help="Add a per-month metric breakdown.")
def evaluate(config, outdir, per_month):
    """Classification metrics for every predictions file (metrics.json)."""
    ws = _workspace(config, outdir)
    out = step_evaluate(ws, per_month=per_month)
    click.echo(f"wrote {out}")


@cli.command(name="backtest")
@_config_opt
@_outdir_opt
def backtest_cmd(config, outdir):
    """Signal backtest per run (equity_<run>.csv, trades_<run>.csv)."""
    ws = _workspace(config, outdir)
    out = step_backtest(ws, ws.universe())
    click.echo(f"wrote {out}")


@cli.command(name="run-all")
@_config_opt
@_outdir_opt
@_threads_opt
def run_all(config, outdir, threads):
    """The whole pipeline for the configured mode/arch pair."""
    ws = _workspace(config, outdir)
    executor = _executor(threads)
    universe = ws.universe()
    step_label(ws, universe, executor)
    step_features(ws, universe, executor)
    step_dataset(ws, universe, executor)
    if ws.cfg.uses_meta:
        step_meta_train(ws, universe, executor)
    step_finetune(ws, universe, executor)
    step_evaluate(ws)
    step_backtest(ws, universe)
    click.echo(f"pipeline complete: {ws.outdir}")


def main():
    try:
        cli(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code or 1)
    except click.exceptions.Abort:
        sys.exit(130)
    except PipelineError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
