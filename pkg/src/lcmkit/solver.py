"""DDIM solver increments, classifier-free guidance, and Gaussian oracles.

Noise predictors are plain callables ``eps_fn(z, t, c) -> ndarray`` where
``c=None`` selects the unconditional branch. Everything here works on numpy
arrays and never records gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .schedule import NoiseSchedule, _coef, make_schedule, sampling_grid
from .tensor import RngStream, ShapeError, Tensor

EpsFn = Callable[[np.ndarray, np.ndarray, Optional[np.ndarray]], np.ndarray]


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def ddim_increment(
    schedule: NoiseSchedule, z_t, t_src, t_dst, eps_hat, allow_equal: bool = False
) -> np.ndarray:
    """Increment ``z_hat(t_dst) - z_t`` of one deterministic DDIM step.

    The clean estimate ``(z_t - sigma(t_src) eps_hat) / alpha(t_src)`` is
    re-noised to ``t_dst`` with the same ``eps_hat``. ``t_src``/``t_dst`` may
    be scalars or one index per batch item.
    """
    z_t, eps_hat = _arr(z_t), _arr(eps_hat)
    if z_t.shape != eps_hat.shape:
        raise ShapeError(f"shape mismatch: {z_t.shape} vs {eps_hat.shape}")
    t_src = schedule._check_t(t_src)
    t_dst = schedule._check_t(t_dst)
    if allow_equal:
        if np.any(t_dst > t_src):
            raise ValueError(f"t_dst must not exceed t_src, got {t_dst} > {t_src}")
    elif np.any(t_dst >= t_src):
        raise ValueError(f"t_dst must be below t_src, got {t_dst} >= {t_src}")
    a_s = _coef(schedule.alpha(t_src), z_t)
    s_s = _coef(schedule.sigma(t_src), z_t)
    a_d = _coef(schedule.alpha(t_dst), z_t)
    s_d = _coef(schedule.sigma(t_dst), z_t)
    z0_hat = (z_t - s_s * eps_hat) / a_s
    return a_d * z0_hat + s_d * eps_hat - z_t


def cfg_increment(delta_cond, delta_uncond, omega) -> np.ndarray:
    """(1 + omega) * delta_cond - omega * delta_uncond.

    Evaluated as ``delta_cond + omega * (delta_cond - delta_uncond)`` so equal
    branches cancel exactly.
    """
    delta_cond, delta_uncond = _arr(delta_cond), _arr(delta_uncond)
    if delta_cond.shape != delta_uncond.shape:
        raise ShapeError(f"shape mismatch: {delta_cond.shape} vs {delta_uncond.shape}")
    w = _coef(omega, delta_cond)
    return delta_cond + w * (delta_cond - delta_uncond)


def k_step_estimate(
    schedule: NoiseSchedule, eps_fn: EpsFn, z, t_src, t_dst, c, omega
) -> np.ndarray:
    """Guided one-skip estimate of the trajectory point at ``t_dst``.

    With ``omega == 0`` the unconditional branch is not evaluated.
    """
    z = _arr(z)
    eps_c = eps_fn(z, t_src, c)
    delta_c = ddim_increment(schedule, z, t_src, t_dst, eps_c)
    if np.all(np.asarray(omega) == 0):
        return z + delta_c
    eps_u = eps_fn(z, t_src, None)
    delta_u = ddim_increment(schedule, z, t_src, t_dst, eps_u)
    return z + cfg_increment(delta_c, delta_u, omega)


def ddim_integrate(
    schedule: NoiseSchedule, eps_fn: EpsFn, z, grid, c=None, omega=0.0
) -> np.ndarray:
    """Run guided DDIM along ``grid`` (strictly decreasing) and finish at t=0."""
    z = _arr(z)
    points = list(int(t) for t in grid)
    if points[-1] != 0:
        points.append(0)
    for src, dst in zip(points[:-1], points[1:]):
        z = k_step_estimate(schedule, eps_fn, z, src, dst, c, omega)
    return z


# ---------------------------------------------------------------- oracles
@dataclass(frozen=True)
class GaussianWorld:
    """Isotropic Gaussian data N(mean, std^2 I); std=0 is a point mass."""

    mean: np.ndarray
    std: float

    def __post_init__(self):
        if self.std < 0:
            raise ValueError(f"std must be nonnegative, got {self.std}")
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))

    def eps_fn(self, schedule: NoiseSchedule) -> EpsFn:
        return lambda z, t, c: optimal_eps(self, schedule, z, t)


def optimal_eps(world: GaussianWorld, schedule: NoiseSchedule, x, t) -> np.ndarray:
    """Exact minimiser of the epsilon-prediction loss under ``world``.

    eps*(x, t) = sigma_t (x - alpha_t m) / (alpha_t^2 s^2 + sigma_t^2)
    """
    x = _arr(x)
    a = _coef(schedule.alpha(t), x)
    s = _coef(schedule.sigma(t), x)
    var = a * a * world.std**2 + s * s
    if np.any(var == 0):
        raise ValueError("optimal eps is undefined at t=0 for a point-mass world")
    return s * (x - a * world.mean) / var


def pf_ode_point(world: GaussianWorld, schedule: NoiseSchedule, x0, t) -> np.ndarray:
    """Point at time ``t`` on the probability-flow trajectory that starts at ``x0``."""
    if world.std == 0:
        raise ValueError("a point-mass world has a single trajectory origin")
    x0 = _arr(x0)
    a = _coef(schedule.alpha(t), x0)
    s = _coef(schedule.sigma(t), x0)
    return a * world.mean + np.sqrt(a * a * world.std**2 + s * s) / world.std * (x0 - world.mean)


def pf_ode_endpoint(world: GaussianWorld, schedule: NoiseSchedule, x_t, t) -> np.ndarray:
    """Origin (t=0) of the probability-flow trajectory passing through ``x_t`` at ``t``."""
    x_t = _arr(x_t)
    a = _coef(schedule.alpha(t), x_t)
    s = _coef(schedule.sigma(t), x_t)
    scale = world.std / np.sqrt(a * a * world.std**2 + s * s)
    return world.mean + scale * (x_t - a * world.mean)


def _rel(x, ref) -> float:
    return float(np.linalg.norm(x - ref) / np.linalg.norm(ref))


LADDER_STEPS = (8, 16, 32, 64, 128, 256)


def endpoint_error_ladder(
    schedule: NoiseSchedule, world: GaussianWorld, x_T: np.ndarray, steps=LADDER_STEPS
) -> list[float]:
    """Relative DDIM endpoint error with exact eps* for each uniform step count."""
    exact = pf_ode_endpoint(world, schedule, x_T, schedule.N)
    eps_fn = world.eps_fn(schedule)
    return [
        _rel(ddim_integrate(schedule, eps_fn, x_T, sampling_grid(schedule, n)), exact)
        for n in steps
    ]


def oracle_check(seed: int = 0) -> list[tuple[str, bool, str]]:
    """Solver validation against closed-form Gaussian worlds.

    Returns ``(name, passed, detail)`` triples.
    """
    schedule = make_schedule()
    stream = RngStream(seed)
    results = []

    m = np.array([0.7, -1.2, 0.3, 2.0])
    delta_world = GaussianWorld(m, 0.0)
    worst = 0.0
    for t in (1, 10, 250, 500, 999, schedule.N):
        x = schedule.alpha(t) * m + schedule.sigma(t) * stream.normal(m.shape)
        eps = optimal_eps(delta_world, schedule, x, t)
        z0 = x + ddim_increment(schedule, x, t, 0, eps)
        worst = max(worst, float(np.max(np.abs(z0 - m))))
    results.append(("delta-data one-step recovery", worst <= 1e-10, f"max abs err {worst:.3e}"))

    world = GaussianWorld(m, 0.5)
    x_T = schedule.alpha(schedule.N) * m + schedule.sigma(schedule.N) * stream.normal((64, 4))
    errs = endpoint_error_ladder(schedule, world, x_T)
    monotone = all(b < a for a, b in zip(errs, errs[1:]))
    detail = ", ".join(f"{n}:{e:.2e}" for n, e in zip(LADDER_STEPS, errs))
    results.append(("gaussian-world error decreases with steps", monotone, detail))
    results.append(("gaussian-world 256-step error <= 1e-2", errs[-1] <= 1e-2, f"{errs[-1]:.3e}"))
    return results
