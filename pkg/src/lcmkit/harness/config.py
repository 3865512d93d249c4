"""Flat ``key: value`` run configuration (YAML syntax, dotted keys)."""

from __future__ import annotations

import numpy as np
import yaml

from ..lcm import DistillConfig
from ..nn import Arch
from ..schedule import NoiseSchedule, make_schedule
from ..teacher import TeacherConfig

REQUIRED = (
    "schedule.N", "schedule.beta_start", "schedule.beta_end", "schedule.sigma_data",
    "schedule.kappa", "model.blocks", "model.width", "model.heads", "model.ffn",
    "model.use_rope", "model.use_rmsnorm", "model.use_swiglu", "teacher.lr",
    "teacher.steps", "teacher.batch", "teacher.p_uncond", "distill.k", "distill.omega_min",
    "distill.omega_max", "distill.mu", "distill.eta", "distill.lr", "distill.steps",
    "sample.steps", "sample.omega", "data.name", "seed",
)

OPTIONAL = {
    "dtype": "float32",
    "teacher.weight_decay": 0.01,
    "distill.batch": 64,
    "distill.omega_per_item": False,
    "distill.weight_decay": 0.01,
    "eval.count": 2000,
    "sweep.eval_every": 500,
    "sweep.teacher_steps": 50,
    "log_every": 1000,
}

DEFAULTS = {
    "schedule.N": 1000,
    "schedule.beta_start": 1e-4,
    "schedule.beta_end": 0.02,
    "schedule.sigma_data": 0.5,
    "schedule.kappa": 10.0,
    "model.blocks": 2,
    "model.width": 64,
    "model.heads": 4,
    "model.ffn": 128,
    "model.use_rope": True,
    "model.use_rmsnorm": True,
    "model.use_swiglu": True,
    "teacher.lr": 9.6e-5,
    "teacher.steps": 20000,
    "teacher.batch": 64,
    "teacher.p_uncond": 0.1,
    "distill.k": 20,
    "distill.omega_min": 4.0,
    "distill.omega_max": 12.0,
    "distill.mu": 0.95,
    "distill.eta": 0.5,
    "distill.lr": 9.6e-5,
    "distill.steps": 5000,
    "sample.steps": 2,
    "sample.omega": 5.0,
    "data.name": "rings2d",
    "seed": 0,
}


class ConfigError(ValueError):
    pass


def _flatten(tree: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, name + "."))
        else:
            flat[name] = value
    return flat


def validate(raw: dict) -> dict:
    flat = _flatten(raw)
    missing = [k for k in REQUIRED if k not in flat]
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(missing)}")
    unknown = sorted(set(flat) - set(REQUIRED) - set(OPTIONAL))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = dict(OPTIONAL)
    cfg.update(flat)
    return cfg


def load_config(path) -> dict:
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a key-value mapping")
    return validate(raw)


def default_config(**overrides) -> dict:
    cfg = dict(DEFAULTS)
    cfg.update(overrides)
    return validate(cfg)


def dtype_of(cfg: dict):
    return np.dtype(cfg["dtype"])


def schedule_from(cfg: dict) -> NoiseSchedule:
    return make_schedule(
        int(cfg["schedule.N"]), float(cfg["schedule.beta_start"]), float(cfg["schedule.beta_end"]),
        float(cfg["schedule.sigma_data"]), float(cfg["schedule.kappa"]),
    )


def arch_from(cfg: dict, dataset) -> Arch:
    return Arch(
        data_dim=dataset.data_dim,
        seq_len=dataset.seq_len,
        width=int(cfg["model.width"]),
        blocks=int(cfg["model.blocks"]),
        heads=int(cfg["model.heads"]),
        ffn=int(cfg["model.ffn"]),
        num_classes=dataset.num_classes,
        max_t=int(cfg["schedule.N"]),
        use_rope=bool(cfg["model.use_rope"]),
        use_rmsnorm=bool(cfg["model.use_rmsnorm"]),
        use_swiglu=bool(cfg["model.use_swiglu"]),
    )


def teacher_config(cfg: dict) -> TeacherConfig:
    return TeacherConfig(
        lr=float(cfg["teacher.lr"]),
        steps=int(cfg["teacher.steps"]),
        batch=int(cfg["teacher.batch"]),
        p_uncond=float(cfg["teacher.p_uncond"]),
        weight_decay=float(cfg["teacher.weight_decay"]),
        log_every=int(cfg["log_every"]),
    )


def distill_config(cfg: dict) -> DistillConfig:
    return DistillConfig(
        k=int(cfg["distill.k"]),
        omega_min=float(cfg["distill.omega_min"]),
        omega_max=float(cfg["distill.omega_max"]),
        mu=float(cfg["distill.mu"]),
        eta=float(cfg["distill.eta"]),
        lr=float(cfg["distill.lr"]),
        steps=int(cfg["distill.steps"]),
        batch=int(cfg["distill.batch"]),
        omega_per_item=bool(cfg["distill.omega_per_item"]),
        weight_decay=float(cfg["distill.weight_decay"]),
        log_every=int(cfg["log_every"]),
    )
