"""Epsilon-prediction diffusion teacher with condition dropout and DDIM sampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import DenoiserNet
from .schedule import NoiseSchedule, perturb, sampling_grid
from .solver import ddim_integrate
from .tensor import RngStream, Tensor

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


class AdamW:
    """Adam moments with decoupled weight decay."""

    def __init__(self, params, lr=9.6e-5, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads) -> None:
        b1, b2 = self.betas
        self.step_count += 1
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g is None:
                g = np.zeros_like(p.data)
            g = g.astype(p.data.dtype, copy=False)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data * (1.0 - self.lr * self.weight_decay) - self.lr * update).astype(
                p.data.dtype, copy=False
            )


@dataclass
class TeacherConfig:
    lr: float = 9.6e-5
    steps: int = 20000
    batch: int = 64
    p_uncond: float = 0.1
    weight_decay: float = 0.01
    log_every: int = 1000


@dataclass
class TeacherModel:
    net: DenoiserNet
    schedule: NoiseSchedule
    losses: list = field(default_factory=list)

    def eps_fn(self, counter: list | None = None):
        """Solver-facing predictor; ``c=None`` selects the unconditional token."""
        net = self.net

        def eps(z, t, c):
            B = z.shape[0]
            labels = np.full(B, net.unconditional) if c is None else np.broadcast_to(c, (B,))
            if counter is not None:
                counter[0] += 1
            with T.no_grad():
                return net(z, t, labels, 0.0).data.astype(z.dtype, copy=False)

        return eps


def epsilon_loss(teacher: TeacherModel, z0, t, noise, c) -> Tensor:
    """Mean squared error between predicted and true noise."""
    z0 = z0.data if isinstance(z0, Tensor) else np.asarray(z0)
    noise = noise.data if isinstance(noise, Tensor) else np.asarray(noise)
    z_t = perturb(teacher.schedule, z0, t, noise)
    pred = teacher.net(z_t, t, c, 0.0)
    diff = pred - noise.astype(pred.dtype, copy=False)
    return T.mean(diff * diff)


def drop_labels(labels: np.ndarray, p_uncond: float, uncond: int, stream: RngStream) -> np.ndarray:
    mask = stream.uniform(labels.shape) < p_uncond
    return np.where(mask, uncond, labels)


def train_teacher(dataset, schedule: NoiseSchedule, net: DenoiserNet, config: TeacherConfig,
                  stream: RngStream) -> TeacherModel:
    """Fit ``net`` as an epsilon predictor on ``dataset``; returns the trained teacher.

    Each step draws a class-balanced-in-expectation batch, replaces labels by
    the unconditional token with probability ``p_uncond``, samples t uniformly
    from [1, N] and takes one AdamW step on the epsilon loss.
    """
    teacher = TeacherModel(net, schedule)
    opt = AdamW(net.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    data_stream = stream.split("data")
    step_stream = stream.split("steps")
    params = net.parameters()
    for step in range(config.steps):
        labels = data_stream.integers(0, dataset.num_classes - 1, (config.batch,))
        z0 = dataset.sample(labels, data_stream).astype(net.dtype)
        cond = drop_labels(labels, config.p_uncond, net.unconditional, step_stream)
        t = step_stream.integers(1, schedule.N, (config.batch,))
        noise = step_stream.normal(z0.shape).astype(net.dtype)
        loss = epsilon_loss(teacher, z0, t, noise, cond)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(f"teacher loss became {value} at step {step}")
        teacher.losses.append(value)
        opt.step(T.grad(loss, params))
        if config.log_every and (step + 1) % config.log_every == 0:
            recent = np.mean(teacher.losses[-config.log_every:])
            log.info("teacher step %d loss %.5f", step + 1, recent)
    return teacher


def ddim_sample(teacher: TeacherModel, steps: int, omega: float, c, count: int,
                stream: RngStream, stats: dict | None = None) -> np.ndarray:
    """Guided DDIM from pure noise over ``sampling_grid(steps)`` down to t=0.

    ``stats['nfe']`` receives the number of network evaluations per sample:
    ``steps`` without guidance, ``2 * steps`` with it.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    arch = teacher.net.arch
    shape = (count, arch.seq_len, arch.data_dim)
    counter = [0]
    if count == 0:
        if stats is not None:
            stats["nfe"] = 0
        return np.zeros(shape, dtype=teacher.net.dtype)
    z = stream.normal(shape).astype(teacher.net.dtype)
    labels = np.broadcast_to(np.asarray(c), (count,))
    grid = sampling_grid(teacher.schedule, steps)
    out = ddim_integrate(teacher.schedule, teacher.eps_fn(counter), z, grid, labels, omega)
    if stats is not None:
        stats["nfe"] = counter[0]
    return out
