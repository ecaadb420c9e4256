"""Run configuration: defaults, INI-style parse/serialize, seeding.

Model-size and optimizer defaults are the published full-scale settings;
desk-scale runs override them via a config file.  ``RACOLN_SEED`` in the
environment overrides the seed wherever a config is loaded.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import InvalidArgument

SEED_ENV_VAR = "RACOLN_SEED"

# field name -> config section
_SECTIONS = {
    "data_dir": "paths", "ckpt_dir": "paths", "out_dir": "paths",
    "d_emb": "model", "enc_hidden": "model", "cln_dim": "model",
    "dec_hidden": "model", "tau": "model", "max_len": "model",
    "min_freq": "model", "precision": "model",
    "lr": "training", "lambda_self": "training", "lambda_cycle": "training",
    "lambda_content": "training", "lambda_style": "training",
    "batch_size": "training", "epochs": "training", "seed": "training",
    "pretrain_epochs": "training", "pretrain_patience": "training",
    "grad_clip": "training", "log_every": "training",
    "detach_content": "training",
    "no_reverse_attention": "ablation", "no_stylizer": "ablation",
    "no_content_loss": "ablation",
}


@dataclass
class RunConfig:
    # paths
    data_dir: str = "data"
    ckpt_dir: str = "checkpoints"
    out_dir: str = "outputs"
    # model dimensions (published full-scale defaults)
    d_emb: int = 128
    enc_hidden: int = 500        # per direction; content vector is 2x this
    cln_dim: int = 200
    dec_hidden: int = 700
    tau: float = 1.0
    max_len: int = 32
    min_freq: int = 2
    precision: str = "float64"
    # optimization
    lr: float = 0.0005
    lambda_self: float = 0.5
    lambda_cycle: float = 0.5
    lambda_content: float = 1.0
    lambda_style: float = 1.0
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0
    pretrain_epochs: int = 10
    pretrain_patience: int = 3
    grad_clip: float = 5.0
    log_every: int = 10
    detach_content: bool = False
    # ablations
    no_reverse_attention: bool = False
    no_stylizer: bool = False
    no_content_loss: bool = False

    def __post_init__(self):
        for name in ("d_emb", "enc_hidden", "cln_dim", "dec_hidden", "batch_size",
                     "max_len", "min_freq", "epochs"):
            if getattr(self, name) <= 0:
                raise InvalidArgument(f"config {name} must be positive")
        for name in ("lambda_self", "lambda_cycle", "lambda_content", "lambda_style"):
            if getattr(self, name) < 0:
                raise InvalidArgument(f"config {name} must be non-negative")
        if self.tau <= 0:
            raise InvalidArgument("config tau must be positive")
        if self.precision not in ("float32", "float64"):
            raise InvalidArgument(f"unknown precision {self.precision!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    def effective_lambdas(self) -> tuple[float, float, float, float]:
        """Loss weights after ablation flags (no_content_loss zeroes lambda 3)."""
        l3 = 0.0 if self.no_content_loss else self.lambda_content
        return (self.lambda_self, self.lambda_cycle, l3, self.lambda_style)

    def replaced(self, **updates) -> "RunConfig":
        base = {f.name: getattr(self, f.name) for f in fields(RunConfig)}
        base.update(updates)
        return RunConfig(**base)


def serialize_config(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser()
    for f in fields(RunConfig):
        section = _SECTIONS[f.name]
        if not parser.has_section(section):
            parser.add_section(section)
        value = getattr(cfg, f.name)
        parser.set(section, f.name, repr(value) if isinstance(value, float) else str(value))
    out = []
    for section in parser.sections():
        out.append(f"[{section}]")
        for key, value in parser.items(section):
            out.append(f"{key} = {value}")
        out.append("")
    return "\n".join(out)


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise InvalidArgument(f"bad config syntax: {e}") from e
    values = {}
    known = {f.name: f for f in fields(RunConfig)}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key not in known:
                raise InvalidArgument(f"unknown config key {key!r}")
            ftype = known[key].type
            if not isinstance(ftype, str):
                ftype = ftype.__name__
            try:
                if ftype == "bool":
                    values[key] = raw.strip().lower() in ("1", "true", "yes", "on")
                elif ftype == "int":
                    values[key] = int(raw)
                elif ftype == "float":
                    values[key] = float(raw)
                else:
                    values[key] = raw.strip()
            except ValueError as e:
                raise InvalidArgument(f"bad value for {key}: {raw!r}") from e
    return RunConfig(**values)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read a config file, apply CLI overrides, then the seed env var."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise InvalidArgument(f"cannot read config {path}: {e}") from e
    cfg = parse_config(text)
    if overrides:
        cfg = cfg.replaced(**{k: v for k, v in overrides.items() if v is not None})
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            cfg = cfg.replaced(seed=int(env_seed))
        except ValueError as e:
            raise InvalidArgument(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}") from e
    return cfg


def save_config(cfg: RunConfig, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_config(cfg), encoding="utf-8")
