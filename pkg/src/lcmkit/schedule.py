"""Discrete variance-preserving noise schedule and consistency boundary terms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class NoiseSchedule:
    N: int
    beta_start: float
    beta_end: float
    sigma_data: float
    kappa: float
    beta: np.ndarray = field(repr=False, compare=False)
    alpha_bar: np.ndarray = field(repr=False, compare=False)

    def _check_t(self, t) -> np.ndarray:
        t = np.asarray(t)
        if t.dtype.kind not in "iu":
            if not np.all(t == np.round(t)):
                raise ValueError(f"timesteps must be integers, got {t}")
            t = t.astype(np.int64)
        if np.any(t < 0) or np.any(t > self.N):
            raise ValueError(f"timestep out of range [0, {self.N}]: {t}")
        return t

    def alpha(self, t):
        """Signal scale sqrt(alpha_bar[t]); scalar in, float out."""
        out = np.sqrt(self.alpha_bar[self._check_t(t)])
        return float(out) if np.ndim(out) == 0 else out

    def sigma(self, t):
        out = np.sqrt(1.0 - self.alpha_bar[self._check_t(t)])
        return float(out) if np.ndim(out) == 0 else out

    def params(self) -> dict:
        return {
            "N": self.N,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
            "sigma_data": self.sigma_data,
            "kappa": self.kappa,
        }


def make_schedule(
    N: int = 1000,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    sigma_data: float = 0.5,
    kappa: float = 10.0,
) -> NoiseSchedule:
    """Linear-in-beta VP schedule with cumulative products alpha_bar[0..N]."""
    N = int(N)
    if N < 2:
        raise ValueError(f"schedule needs N >= 2, got {N}")
    if not (0 < beta_start <= beta_end < 1):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.linspace(beta_start, beta_end, N, dtype=np.float64)
    if sigma_data <= 0 or kappa <= 0:
        raise ValueError("sigma_data and kappa must be positive")
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - beta)])
    beta.setflags(write=False)
    alpha_bar.setflags(write=False)
    return NoiseSchedule(
        N, float(beta_start), float(beta_end), float(sigma_data), float(kappa), beta, alpha_bar
    )


def _coef(values, like: np.ndarray):
    """Reshape a per-item coefficient so it broadcasts over trailing axes."""
    v = np.asarray(values, dtype=like.dtype)
    if v.ndim == 0:
        return v
    return v.reshape(v.shape + (1,) * (like.ndim - v.ndim))


def perturb(schedule: NoiseSchedule, z0, t, noise):
    """alpha(t) * z0 + sigma(t) * noise; ``t`` may be a scalar or one index per item."""
    z0 = z0.data if isinstance(z0, Tensor) else np.asarray(z0)
    noise = noise.data if isinstance(noise, Tensor) else np.asarray(noise)
    if z0.shape != noise.shape:
        raise ShapeError(f"shape mismatch: {z0.shape} vs {noise.shape}")
    t = schedule._check_t(t)
    if np.ndim(t) == 0 and t == 0:
        return z0.copy()
    a = _coef(schedule.alpha(t), z0)
    s = _coef(schedule.sigma(t), z0)
    return a * z0 + s * noise


def boundary_coeffs(schedule: NoiseSchedule, t):
    """(c_skip, c_out) with c_skip(0) = 1 and c_out(0) = 0 exactly."""
    t = schedule._check_t(t)
    u = t.astype(np.float64) / schedule.kappa
    sd2 = schedule.sigma_data**2
    c_skip = sd2 / (u * u + sd2)
    c_out = schedule.sigma_data * u / np.sqrt(u * u + sd2)
    if np.ndim(c_skip) == 0:
        return float(c_skip), float(c_out)
    return c_skip, c_out


def sampling_grid(schedule: NoiseSchedule, steps: int) -> np.ndarray:
    """``steps`` evenly spaced indices on [1, N], starting at N, strictly decreasing."""
    steps = int(steps)
    if not 1 <= steps <= schedule.N:
        raise ValueError(f"steps must lie in [1, {schedule.N}], got {steps}")
    stride = schedule.N / steps
    grid = np.array(
        [math.floor(schedule.N - i * stride + 0.5) for i in range(steps)], dtype=np.int64
    )
    return grid
