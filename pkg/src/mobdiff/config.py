"""Run configuration: a single versioned JSON file, schema-validated with
errors that name the offending field."""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .city import CityGenConfig
from .denoiser import DenoiserConfig
from .diffusion import EdmConfig
from .epr import EprParams, default_home_profile
from .errors import ConfigError
from .pipeline import DiffusionConfig, GenerateConfig, RunConfig, TrainConfig

CONFIG_VERSION = 1

_SECTIONS = {
    "city": CityGenConfig,
    "diffusion": DiffusionConfig,
    "denoiser": DenoiserConfig,
    "edm": EdmConfig,
    "train": TrainConfig,
    "generate": GenerateConfig,
}


def _build_section(name: str, cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"config.{name}: expected an object, got {type(data).__name__}")
    import dataclasses

    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"config.{name}.{key}: unknown field (known: {sorted(known)})")
    kwargs = dict(data)
    if cls is DenoiserConfig and "channel_mult" in kwargs:
        kwargs["channel_mult"] = tuple(kwargs["channel_mult"])
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"config.{name}: {e}") from e


def _build_epr(data: dict) -> EprParams:
    if not isinstance(data, dict):
        raise ConfigError("config.epr: expected an object")
    known = {"n_omega", "beta1", "beta2", "rho", "gamma", "home_profile"}
    for key in data:
        if key not in known:
            raise ConfigError(f"config.epr.{key}: unknown field (known: {sorted(known)})")
    kwargs = dict(data)
    if "home_profile" in kwargs:
        kwargs["home_profile"] = np.asarray(kwargs["home_profile"], dtype=np.float64)
    try:
        return EprParams(**kwargs)
    except ValueError as e:
        raise ConfigError(f"config.epr: {e}") from e


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be an object")
    version = doc.get("config_version")
    if version != CONFIG_VERSION:
        raise ConfigError(
            f"config.config_version: expected {CONFIG_VERSION}, got {version!r}"
        )
    known = {"config_version", "seed", "n_train", "n_holdout", "epr"} | set(_SECTIONS)
    for key in doc:
        if key not in known:
            raise ConfigError(f"config.{key}: unknown section (known: {sorted(known)})")
    cfg = RunConfig()
    for field_name in ("seed", "n_train", "n_holdout"):
        if field_name in doc:
            value = doc[field_name]
            if not isinstance(value, int) or value < 0:
                raise ConfigError(f"config.{field_name}: expected a non-negative integer")
            setattr(cfg, field_name, value)
    for name, cls in _SECTIONS.items():
        if name in doc:
            setattr(cfg, name, _build_section(name, cls, doc[name]))
    if "epr" in doc:
        cfg.epr = _build_epr(doc["epr"])
    # denoiser trajectory length must match the EPR home profile length
    if cfg.epr.home_profile.shape[0] != cfg.denoiser.traj_len:
        cfg.epr = EprParams(
            n_omega=cfg.epr.n_omega,
            beta1=cfg.epr.beta1,
            beta2=cfg.epr.beta2,
            home_profile=default_home_profile(cfg.denoiser.traj_len),
            rho=cfg.epr.rho,
            gamma=cfg.epr.gamma,
        )
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    return {
        "config_version": CONFIG_VERSION,
        "seed": cfg.seed,
        "n_train": cfg.n_train,
        "n_holdout": cfg.n_holdout,
        "city": cfg.city.to_json(),
        "epr": cfg.epr.to_json(),
        "diffusion": {
            "k_train": cfg.diffusion.k_train,
            "beta_min": cfg.diffusion.beta_min,
            "beta_max": cfg.diffusion.beta_max,
            "n_sample_steps": cfg.diffusion.n_sample_steps,
        },
        "denoiser": cfg.denoiser.to_json(),
        "edm": {
            "sigma_data": cfg.edm.sigma_data,
            "p_mean": cfg.edm.p_mean,
            "p_std": cfg.edm.p_std,
        },
        "train": {
            "epochs": cfg.train.epochs,
            "batch_size": cfg.train.batch_size,
            "learning_rate": cfg.train.learning_rate,
            "weight_decay": cfg.train.weight_decay,
            "optimizer": cfg.train.optimizer,
            "momentum": cfg.train.momentum,
            "patience": cfg.train.patience,
            "holdout_eval_size": cfg.train.holdout_eval_size,
        },
        "generate": {
            "n": cfg.generate.n,
            "ablation": cfg.generate.ablation,
            "guidance": cfg.generate.guidance,
            "chunk": cfg.generate.chunk,
        },
    }


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e
    cfg = config_from_dict(doc)
    seed_env = os.environ.get("MOBDIFF_SEED")
    if seed_env is not None:
        try:
            cfg.seed = int(seed_env)
        except ValueError:
            raise ConfigError(f"MOBDIFF_SEED: expected an integer, got {seed_env!r}")
    return cfg
