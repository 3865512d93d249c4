"""Guided consistency distillation and multi-step consistency sampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .nn import DenoiserNet
from .schedule import NoiseSchedule, _coef, boundary_coeffs, perturb, sampling_grid
from .solver import k_step_estimate
from .teacher import AdamW, TeacherModel, TrainingDiverged
from .tensor import RngStream, Tensor

log = logging.getLogger(__name__)


@dataclass
class DistillConfig:
    k: int = 20
    omega_min: float = 4.0
    omega_max: float = 12.0
    mu: float = 0.95
    eta: float = 0.5
    lr: float = 9.6e-5
    steps: int = 5000
    batch: int = 64
    omega_per_item: bool = False
    weight_decay: float = 0.01
    log_every: int = 500


@dataclass
class ConsistencyModel:
    net: DenoiserNet
    ema_net: DenoiserNet
    schedule: NoiseSchedule
    k: int = 20
    omega_range: tuple[float, float] = (4.0, 12.0)
    mu: float = 0.95
    eta: float = 0.5
    losses: list = field(default_factory=list)
    optimizer: Optional[AdamW] = field(default=None, repr=False)

    def __post_init__(self):
        if not 1 <= self.k < self.schedule.N:
            raise ValueError(f"k must satisfy 1 <= k < N={self.schedule.N}, got {self.k}")
        lo, hi = self.omega_range
        if lo > hi:
            raise ValueError(f"omega range is empty: [{lo}, {hi}]")
        if not 0 <= self.mu < 1:
            raise ValueError(f"EMA rate must lie in [0, 1), got {self.mu}")
        if self.eta <= 0:
            raise ValueError(f"Huber threshold must be positive, got {self.eta}")
        shapes = {k: v.shape for k, v in self.net.params.items()}
        if shapes != {k: v.shape for k, v in self.ema_net.params.items()}:
            raise ValueError("student and EMA networks have different parameters")
        for p in self.ema_net.parameters():
            p.requires_grad = False

    @classmethod
    def from_teacher(cls, teacher: TeacherModel, config: DistillConfig) -> "ConsistencyModel":
        student = teacher.net.clone()
        ema = teacher.net.clone()
        return cls(
            student, ema, teacher.schedule, config.k,
            (config.omega_min, config.omega_max), config.mu, config.eta,
        )

    def hyperparams(self) -> dict:
        return {
            "k": self.k,
            "omega_min": self.omega_range[0],
            "omega_max": self.omega_range[1],
            "mu": self.mu,
            "eta": self.eta,
        }


def consistency_fn(model: ConsistencyModel, which: str, z, c, omega, t) -> Tensor:
    """c_skip(t) z + c_out(t) (z - sigma_t eps) / alpha_t with the chosen weights."""
    if which not in ("student", "ema"):
        raise ValueError(f"which must be 'student' or 'ema', got {which!r}")
    net = model.net if which == "student" else model.ema_net
    z = z.data if isinstance(z, Tensor) else np.asarray(z)
    sched = model.schedule
    t = np.asarray(t)
    if np.all(t == 0):
        sched._check_t(t)
        return Tensor(z.copy())
    c_skip, c_out = boundary_coeffs(sched, t)
    a, s = sched.alpha(t), sched.sigma(t)
    keep = _coef(np.asarray(c_skip) + np.asarray(c_out) / a, z)
    scale = _coef(-np.asarray(c_out) * np.asarray(s) / a, z)
    eps = net(z, t, c, omega)
    return eps * scale + keep * z.astype(eps.dtype, copy=False)


def huber(a, b, eta: float) -> Tensor:
    """Mean of 0.5 r^2 for |r| <= eta, eta (|r| - eta / 2) otherwise, r = a - b."""
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    a, b = T.as_tensor(a), T.as_tensor(b)
    if a.shape != b.shape:
        raise T.ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    r = a.data - b.data
    ar = np.abs(r)
    quad = ar <= eta
    vals = np.where(quad, 0.5 * r * r, eta * (ar - 0.5 * eta))
    n = max(r.size, 1)

    def bw(g):
        dr = np.where(quad, r, eta * np.sign(r)) * (g / n)
        return dr, -dr

    return T.from_op(np.asarray(vals.mean()), (a, b), bw)


def ema_update(model: ConsistencyModel, mu: float | None = None) -> None:
    """theta_ema <- mu * theta_ema + (1 - mu) * theta, outside any graph."""
    mu = model.mu if mu is None else mu
    if not 0 <= mu < 1:
        raise ValueError(f"EMA rate must lie in [0, 1), got {mu}")
    for name, target in model.ema_net.params.items():
        source = model.net.params[name].data
        target.data = (mu * target.data + (1.0 - mu) * source).astype(target.dtype, copy=False)
        target.grad = None


def distill_loss(model: ConsistencyModel, teacher: TeacherModel, z0, c, stream: RngStream,
                 omega_per_item: bool = False) -> Tensor:
    """One draw of the k-step guided consistency loss (graph attached to the student)."""
    z0 = np.asarray(z0.data if isinstance(z0, Tensor) else z0, dtype=model.net.dtype)
    c = np.asarray(c)
    B = len(z0)
    if B == 0:
        raise ValueError("distillation batch is empty")
    N, k = model.schedule.N, model.k
    n = stream.integers(1, N - k, (B,))
    lo, hi = model.omega_range
    omega = lo + (hi - lo) * stream.uniform((B,) if omega_per_item else (1,))
    if not omega_per_item:
        omega = float(omega[0])
    noise = stream.normal(z0.shape).astype(z0.dtype)
    z_src = perturb(model.schedule, z0, n + k, noise)
    with T.no_grad():
        z_dst = k_step_estimate(model.schedule, teacher.eps_fn(), z_src, n + k, n, c, omega)
        target = consistency_fn(model, "ema", z_dst, c, omega, n)
    pred = consistency_fn(model, "student", z_src, c, omega, n + k)
    return huber(pred, target.data, model.eta)


def distill_step(model: ConsistencyModel, teacher: TeacherModel, z0, c, stream: RngStream,
                 omega_per_item: bool = False) -> float:
    """Loss, one optimizer step on the student, then the EMA update."""
    if model.optimizer is None:
        model.optimizer = AdamW(model.net.parameters())
    loss = distill_loss(model, teacher, z0, c, stream, omega_per_item)
    value = loss.item()
    if not np.isfinite(value):
        raise TrainingDiverged(f"distillation loss became {value} at step {len(model.losses)}")
    model.losses.append(value)
    model.optimizer.step(T.grad(loss, model.net.parameters()))
    ema_update(model)
    return value


def distill(teacher: TeacherModel, dataset, config: DistillConfig, stream: RngStream,
            callback: Callable[[int, ConsistencyModel], None] | None = None,
            every: int = 0) -> ConsistencyModel:
    """Run guided consistency distillation from ``teacher``.

    ``callback(step, model)`` fires after every ``every`` optimizer steps.
    """
    model = ConsistencyModel.from_teacher(teacher, config)
    model.optimizer = AdamW(model.net.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    data_stream = stream.split("data")
    step_stream = stream.split("steps")
    for step in range(config.steps):
        labels = data_stream.integers(0, dataset.num_classes - 1, (config.batch,))
        z0 = dataset.sample(labels, data_stream)
        distill_step(model, teacher, z0, labels, step_stream, config.omega_per_item)
        if config.log_every and (step + 1) % config.log_every == 0:
            log.info("distill step %d loss %.6f", step + 1, np.mean(model.losses[-config.log_every:]))
        if callback is not None and every and (step + 1) % every == 0:
            callback(step + 1, model)
    return model


def lcm_sample(model: ConsistencyModel, steps: int, omega: float, c, count: int,
               stream: RngStream, stats: dict | None = None, which: str = "ema") -> np.ndarray:
    """Multi-step consistency sampling: map noise at N, then re-noise and map again.

    Exactly ``steps`` network evaluations per sample; guidance enters only
    through the omega embedding.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    arch = model.net.arch
    shape = (count, arch.seq_len, arch.data_dim)
    if count == 0:
        if stats is not None:
            stats["nfe"] = 0
        return np.zeros(shape, dtype=model.net.dtype)
    labels = np.broadcast_to(np.asarray(c), (count,))
    grid = sampling_grid(model.schedule, steps)
    dtype = model.net.dtype
    z = stream.normal(shape).astype(dtype)
    nfe = 0
    with T.no_grad():
        for i, tau in enumerate(grid):
            if i:
                z = perturb(model.schedule, z, int(tau), stream.normal(shape).astype(dtype))
            z = consistency_fn(model, which, z, labels, omega, int(tau)).data
            nfe += 1
    if stats is not None:
        stats["nfe"] = nfe
    return z
