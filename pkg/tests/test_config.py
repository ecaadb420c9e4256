"""Run configuration: published defaults, round trip, env seed override."""

import numpy as np
import pytest

from racoln.config import (RunConfig, load_config, parse_config, save_config,
                           serialize_config)
from racoln.errors import InvalidArgument

PUBLISHED_DEFAULTS = {
    "d_emb": 128,
    "enc_hidden": 500,
    "cln_dim": 200,
    "dec_hidden": 700,
    "lr": 0.0005,
    "lambda_self": 0.5,
    "lambda_cycle": 0.5,
    "lambda_content": 1.0,
    "lambda_style": 1.0,
}


def test_defaults_match_published_values():
    cfg = RunConfig()
    for key, value in PUBLISHED_DEFAULTS.items():
        assert getattr(cfg, key) == value, key
    assert cfg.tau == 1.0
    assert cfg.batch_size == 64
    assert cfg.max_len == 32
    assert cfg.min_freq == 2


def test_round_trip_identity():
    cfg = RunConfig(data_dir="/tmp/x", seed=17, lr=0.00123, tau=0.05,
                    no_stylizer=True, precision="float32",
                    lambda_cycle=0.0625)
    assert parse_config(serialize_config(cfg)) == cfg


def test_round_trip_via_file(tmp_path):
    cfg = RunConfig(epochs=3, batch_size=16)
    path = tmp_path / "run.ini"
    save_config(cfg, path)
    assert load_config(path) == cfg


def test_unknown_key_rejected():
    with pytest.raises(InvalidArgument):
        parse_config("[model]\nwidth = 3\n")


def test_bad_values_rejected():
    with pytest.raises(InvalidArgument):
        parse_config("[model]\nd_emb = soon\n")
    with pytest.raises(InvalidArgument):
        RunConfig(d_emb=0)
    with pytest.raises(InvalidArgument):
        RunConfig(lambda_style=-1)
    with pytest.raises(InvalidArgument):
        RunConfig(precision="float16")


def test_env_seed_override(tmp_path, monkeypatch):
    path = tmp_path / "run.ini"
    save_config(RunConfig(seed=1), path)
    monkeypatch.setenv("RACOLN_SEED", "99")
    assert load_config(path).seed == 99
    monkeypatch.setenv("RACOLN_SEED", "boom")
    with pytest.raises(InvalidArgument):
        load_config(path)


def test_cli_override_beats_file(tmp_path):
    path = tmp_path / "run.ini"
    save_config(RunConfig(seed=1), path)
    assert load_config(path, {"seed": 5}).seed == 5
    assert load_config(path, {"seed": None}).seed == 1


def test_effective_lambdas_ablation():
    cfg = RunConfig(no_content_loss=True)
    assert cfg.effective_lambdas() == (0.5, 0.5, 0.0, 1.0)
    cfg = RunConfig()
    assert cfg.effective_lambdas() == (0.5, 0.5, 1.0, 1.0)


def test_dtype_mapping():
    assert RunConfig(precision="float32").dtype == np.float32
    assert RunConfig().dtype == np.float64
