"""Declarative run configuration.

One JSON file drives the whole pipeline. Unknown keys are rejected with
their path; everything has a shipped default matching the published
hyperparameters. The config hash (sha256 of the fully resolved config) is
stamped into every artifact so mixed-configuration runs fail fast.
"""

import hashlib
import json
import os
from dataclasses import dataclass
from datetime import date
from pathlib import Path

from metatrend.backtest import BacktestConfig
from metatrend.errors import ConfigError
from metatrend.indicators import IndicatorConfig
from metatrend.labeling import LabelingConfig, TrendLabel
from metatrend.meta import TrainConfig
from metatrend.nn.network import ARCHS, ScaleConfig
from metatrend.tensor import NORM_POLICIES

SEED_ENV_VAR = "METATREND_SEED"

MODES = ("ind", "uni", "meta-ind", "meta-uni")


@dataclass(frozen=True)
class PeriodsConfig:
    """Explicit calendar boundaries for meta-training and meta-testing.

    The meta support pool spans the 12 months from ``meta_train_start``; the
    query set is the month after that. Sliding evaluation windows cover
    [eval_start, eval_end] with the first 12 months reserved as history.
    """

    meta_train_start: date
    eval_start: date
    eval_end: date

    def __post_init__(self):
        if self.eval_end <= self.eval_start:
            raise ConfigError("eval_end must be after eval_start")


@dataclass(frozen=True)
class RunConfig:
    seed: int
    universe: str
    labeling: LabelingConfig
    indicators: IndicatorConfig
    normalization: str
    train: TrainConfig
    arch: str
    scale: ScaleConfig
    mode: str
    periods: PeriodsConfig
    backtest: BacktestConfig

    def __post_init__(self):
        if self.normalization not in NORM_POLICIES:
            raise ConfigError(f"normalization must be one of {NORM_POLICIES}")
        if self.arch not in ARCHS:
            raise ConfigError(f"arch must be one of {ARCHS}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")

    @property
    def run_name(self) -> str:
        return f"{self.mode}-{self.arch}"

    @property
    def uses_meta(self) -> bool:
        return self.mode.startswith("meta-")


_DEFAULTS = {
    "seed": 0,
    "data": {"universe": "universe.json"},
    "labeling": {"k": 3, "window_aggregate": "mean"},
    "indicators": {
        "atr_period": 14, "ema_period": 20, "mom_fast": 6, "mom_slow": 12,
        "ma_fast": 5, "ma_slow": 10, "cci_period": 20, "macd_fast": 12,
        "macd_slow": 26, "smi_period": 14, "smi_smooth": 3, "roc_period": 12,
        "willr_period": 14,
    },
    "normalization": "zscore",
    "train": {
        "alpha": 1e-4, "beta": 1e-4, "gamma": 1e-4,
        "meta_steps": 100, "inner_epochs": 5, "finetune_epochs": 50,
        "inner_batch_size": 16, "finetune_batch_size": 32,
        "support_per_class": 20, "meta_grad": "first_order",
        "reset_per_window": False,
    },
    "model": {"arch": "fcn", "scale_divisor": 1, "tcn_levels": 4},
    "mode": "meta-ind",
    "periods": {
        "meta_train_start": None,  # required
        "eval_start": None,        # required
        "eval_end": None,          # required
    },
    "backtest": {
        "initial_capital": 1.0,
        "buy_signals": ["rise"],
        "sell_signals": ["rise_plus", "fall", "fall_plus"],
    },
}


def _merge(defaults: dict, given: dict, path: str = "") -> dict:
    out = {}
    for key, default in defaults.items():
        key_path = f"{path}.{key}" if path else key
        if key in given:
            value = given[key]
            if isinstance(default, dict) and default and not isinstance(value, dict):
                raise ConfigError(f"config key {key_path} must be an object")
            if isinstance(default, dict) and default:
                out[key] = _merge(default, value, key_path)
            else:
                out[key] = value
        else:
            out[key] = dict(default) if isinstance(default, dict) else default
    unknown = set(given) - set(defaults)
    if unknown:
        key_path = f"{path}.{sorted(unknown)[0]}" if path else sorted(unknown)[0]
        raise ConfigError(f"unknown config key: {key_path}")
    return out


def _parse_date(raw, key: str) -> date:
    if raw is None:
        raise ConfigError(f"config key periods.{key} is required")
    try:
        return date.fromisoformat(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"periods.{key}: bad date {raw!r}") from exc


def _labels_from_names(names, key: str) -> frozenset:
    try:
        return frozenset(TrendLabel.from_csv_name(n) for n in names)
    except ValueError as exc:
        raise ConfigError(f"backtest.{key}: {exc}") from exc


def resolve_config(raw: dict, base_dir: Path | None = None) -> tuple[RunConfig, dict]:
    """Validate a raw config dict; returns (RunConfig, resolved plain dict).

    The resolved dict has every default applied and the effective seed (after
    any environment override), and is what the config hash covers.
    """
    merged = _merge(_DEFAULTS, raw)
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            merged["seed"] = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer") from exc
    try:
        labeling = LabelingConfig(
            k=merged["labeling"]["k"],
            window_aggregate=merged["labeling"]["window_aggregate"],
        )
        indicators = IndicatorConfig(**merged["indicators"])
        train = TrainConfig(**merged["train"])
        scale = ScaleConfig(
            divisor=merged["model"]["scale_divisor"],
            tcn_levels=merged["model"]["tcn_levels"],
        )
        periods = PeriodsConfig(
            meta_train_start=_parse_date(merged["periods"]["meta_train_start"], "meta_train_start"),
            eval_start=_parse_date(merged["periods"]["eval_start"], "eval_start"),
            eval_end=_parse_date(merged["periods"]["eval_end"], "eval_end"),
        )
        backtest = BacktestConfig(
            initial_capital=merged["backtest"]["initial_capital"],
            buy_signals=_labels_from_names(merged["backtest"]["buy_signals"], "buy_signals"),
            sell_signals=_labels_from_names(merged["backtest"]["sell_signals"], "sell_signals"),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    universe = merged["data"]["universe"]
    if base_dir is not None and not Path(universe).is_absolute():
        universe = str((base_dir / universe).resolve())
    cfg = RunConfig(
        seed=merged["seed"],
        universe=universe,
        labeling=labeling,
        indicators=indicators,
        normalization=merged["normalization"],
        train=train,
        arch=merged["model"]["arch"],
        scale=scale,
        mode=merged["mode"],
        periods=periods,
        backtest=backtest,
    )
    return cfg, merged


def load_config(path: str | Path) -> tuple[RunConfig, str]:
    """Load, validate, and hash a config file; returns (config, hash)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    cfg, resolved = resolve_config(raw, base_dir=path.parent)
    return cfg, config_hash(resolved)


def config_hash(resolved: dict) -> str:
    """Hash of the resolved config, excluding mode and arch.

    Run-scoped artifact names (predictions_<mode>-<arch>.csv and friends)
    already encode those two fields, so excluding them lets every Table-III
    combination share one artifact directory for the cross-run comparison
    outputs; any other config change still invalidates existing artifacts.
    The parameter-file header guards phi.params against arch mixups.
    """
    hashed = {k: v for k, v in resolved.items() if k != "mode"}
    hashed["model"] = {k: v for k, v in resolved["model"].items() if k != "arch"}
    canonical = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def fixture_config_dict(universe_path: str, first_day: date, last_day: date,
                        mode: str = "meta-ind", arch: str = "fcn",
                        seed: int = 0, desk_scale: bool = True) -> dict:
    """A ready-to-run config for a generated universe: meta-training on the
    first year, evaluation windows over the whole span. Desk scale divides
    widths by 8 and raises the learning rates tenfold."""
    cfg = {
        "seed": seed,
        "data": {"universe": universe_path},
        "mode": mode,
        "model": {"arch": arch, "scale_divisor": 8 if desk_scale else 1, "tcn_levels": 4},
        "periods": {
            "meta_train_start": date(first_day.year, first_day.month, 1).isoformat(),
            "eval_start": date(first_day.year, first_day.month, 1).isoformat(),
            "eval_end": last_day.isoformat(),
        },
    }
    if desk_scale:
        cfg["train"] = {"alpha": 1e-3, "beta": 1e-3, "gamma": 1e-3}
    return cfg
