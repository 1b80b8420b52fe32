import json
from datetime import date

import pytest

from metatrend.config import (
    SEED_ENV_VAR,
    config_hash,
    fixture_config_dict,
    load_config,
    resolve_config,
)
from metatrend.errors import ConfigError
from metatrend.labeling import TrendLabel

MINIMAL = {
    "periods": {
        "meta_train_start": "2015-01-01",
        "eval_start": "2015-01-01",
        "eval_end": "2016-12-31",
    }
}


def write_config(tmp_path, payload):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload))
    return path


def test_shipped_defaults_match_published_settings(tmp_path):
    cfg, chash = load_config(write_config(tmp_path, MINIMAL))
    assert cfg.train.alpha == 1e-4
    assert cfg.train.beta == 1e-4
    assert cfg.train.gamma == 1e-4
    assert cfg.train.meta_steps == 100
    assert cfg.train.inner_epochs == 5
    assert cfg.train.finetune_epochs == 50
    assert cfg.train.support_per_class == 20
    assert cfg.labeling.k == 3
    assert cfg.normalization == "zscore"
    # class-balanced sampling arithmetic at full scale
    per_stock = cfg.train.support_per_class * 4
    assert per_stock == 80
    assert per_stock * 500 == 40_000
    assert len(chash) == 16


def test_unknown_keys_rejected_with_path(tmp_path):
    bad = dict(MINIMAL)
    bad["trainn"] = {}
    with pytest.raises(ConfigError, match="unknown config key: trainn"):
        load_config(write_config(tmp_path, bad))
    nested = {**MINIMAL, "train": {"alhpa": 1.0}}
    with pytest.raises(ConfigError, match="train.alhpa"):
        load_config(write_config(tmp_path, nested))


def test_missing_required_period(tmp_path):
    with pytest.raises(ConfigError, match="periods.meta_train_start"):
        load_config(write_config(tmp_path, {"periods": {
            "eval_start": "2015-01-01", "eval_end": "2016-01-31"}}))


def test_invalid_values(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, {**MINIMAL, "mode": "hybrid"}))
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, {**MINIMAL, "model": {"arch": "gru"}}))
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, {**MINIMAL, "train": {"alpha": -1.0}}))
    with pytest.raises(ConfigError, match="bad date"):
        load_config(write_config(tmp_path, {"periods": {
            "meta_train_start": "soon", "eval_start": "2015-01-01",
            "eval_end": "2016-01-31"}}))
    with pytest.raises(ConfigError, match="invalid JSON"):
        path = tmp_path / "broken.json"
        path.write_text("{nope")
        load_config(path)
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.json")


def test_backtest_signal_parsing(tmp_path):
    payload = {**MINIMAL, "backtest": {"buy_signals": ["rise", "rise_plus"],
                                       "sell_signals": ["fall", "fall_plus"]}}
    cfg, _ = load_config(write_config(tmp_path, payload))
    assert cfg.backtest.buy_signals == frozenset({TrendLabel.RISE, TrendLabel.RISE_PLUS})
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, {**MINIMAL, "backtest": {
            "buy_signals": ["up"]}}))


def test_hash_excludes_mode_and_arch_only(tmp_path):
    _, base = load_config(write_config(tmp_path, MINIMAL))
    _, mode_changed = load_config(write_config(tmp_path, {**MINIMAL, "mode": "uni"}))
    _, arch_changed = load_config(
        write_config(tmp_path, {**MINIMAL, "model": {"arch": "tcn"}})
    )
    _, seed_changed = load_config(write_config(tmp_path, {**MINIMAL, "seed": 99}))
    _, k_changed = load_config(
        write_config(tmp_path, {**MINIMAL, "labeling": {"k": 4}})
    )
    assert base == mode_changed == arch_changed
    assert base != seed_changed
    assert base != k_changed


def test_env_seed_override(tmp_path, monkeypatch):
    monkeypatch.setenv(SEED_ENV_VAR, "1234")
    cfg, chash = load_config(write_config(tmp_path, MINIMAL))
    assert cfg.seed == 1234
    monkeypatch.setenv(SEED_ENV_VAR, "999")
    cfg2, chash2 = load_config(write_config(tmp_path, MINIMAL))
    assert cfg2.seed == 999
    assert chash != chash2
    monkeypatch.setenv(SEED_ENV_VAR, "lots")
    with pytest.raises(ConfigError, match="integer"):
        load_config(write_config(tmp_path, MINIMAL))


def test_universe_path_resolved_relative_to_config(tmp_path):
    payload = {**MINIMAL, "data": {"universe": "universe.json"}}
    cfg, _ = load_config(write_config(tmp_path, payload))
    assert cfg.universe == str((tmp_path / "universe.json").resolve())


def test_fixture_config_is_loadable(tmp_path):
    payload = fixture_config_dict("universe.json", date(2015, 1, 1), date(2017, 2, 1))
    cfg, _ = load_config(write_config(tmp_path, payload))
    assert cfg.scale.divisor == 8
    assert cfg.train.alpha == pytest.approx(1e-3)
    assert cfg.train.meta_steps == 100  # defaults still the published values
    assert cfg.periods.eval_end == date(2017, 2, 1)


def test_run_name_and_meta_flag(tmp_path):
    cfg, _ = load_config(write_config(tmp_path, {**MINIMAL, "mode": "meta-uni",
                                                 "model": {"arch": "resnet"}}))
    assert cfg.run_name == "meta-uni-resnet"
    assert cfg.uses_meta
    cfg2, _ = resolve_config({**MINIMAL, "mode": "ind"})
    assert not cfg2.uses_meta
    assert cfg2.run_name == "ind-fcn"
