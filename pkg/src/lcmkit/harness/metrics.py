"""Closed-form distribution distances used in place of FAD/CLAP at toy scale."""

from __future__ import annotations

import numpy as np


def _psd_sqrt(cov: np.ndarray, name: str) -> np.ndarray:
    w, v = np.linalg.eigh(cov)
    tol = 1e-10 * max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.min(initial=0.0) < -tol:
        raise ValueError(f"{name} is not positive semidefinite (min eigenvalue {w.min():.3e})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def gaussian_w2(m1, cov1, m2, cov2) -> float:
    """Squared 2-Wasserstein (Frechet) distance between two Gaussians."""
    m1, m2 = np.atleast_1d(np.asarray(m1, float)), np.atleast_1d(np.asarray(m2, float))
    cov1, cov2 = np.atleast_2d(np.asarray(cov1, float)), np.atleast_2d(np.asarray(cov2, float))
    for name, c in (("cov1", cov1), ("cov2", cov2)):
        if c.shape != (m1.size, m1.size) or not np.allclose(c, c.T, atol=1e-12):
            raise ValueError(f"{name} must be a symmetric {m1.size}x{m1.size} matrix")
    if np.array_equal(m1, m2) and np.array_equal(cov1, cov2):
        return 0.0
    root2 = _psd_sqrt(cov2, "cov2")
    _psd_sqrt(cov1, "cov1")
    middle = root2 @ cov1 @ root2
    w = np.linalg.eigvalsh(0.5 * (middle + middle.T))
    cross = np.sqrt(np.clip(w, 0.0, None)).sum()
    diff = m1 - m2
    return float(max(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * cross, 0.0))


def empirical_frechet(samples_a, samples_b) -> float:
    """gaussian_w2 between the empirical mean/covariance of two sample sets."""
    a = np.asarray(samples_a, float).reshape(len(samples_a), -1)
    b = np.asarray(samples_b, float).reshape(len(samples_b), -1)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("empirical_frechet needs at least two samples per set")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"sample dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    cov_a = np.atleast_2d(np.cov(a, rowvar=False))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False))
    return gaussian_w2(a.mean(axis=0), cov_a, b.mean(axis=0), cov_b)


def per_class_fidelity(samples, labels, dataset) -> float:
    """Mean Euclidean distance from each sample to its class template."""
    labels = np.asarray(labels, dtype=np.int64)
    if np.any(labels < 0) or np.any(labels >= dataset.num_classes):
        raise ValueError(f"unknown class label in {np.unique(labels)}")
    x = np.asarray(samples, float).reshape(len(labels), -1)
    centers = dataset.templates().reshape(dataset.num_classes, -1)[labels]
    return float(np.linalg.norm(x - centers, axis=1).mean())


def noise_floor(dataset, count: int = 2000, seed: int = 0, pairs: int = 5) -> float:
    """Mean Frechet distance between independent reference draws of equal size."""
    vals = []
    for i in range(pairs):
        a, _ = dataset.draw(count, seed=10_000 + 2 * i + seed * 1000)
        b, _ = dataset.draw(count, seed=10_001 + 2 * i + seed * 1000)
        vals.append(empirical_frechet(a, b))
    return float(np.mean(vals))
