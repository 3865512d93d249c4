"""Synthetic class-conditional datasets standing in for audio latents."""

from __future__ import annotations

import numpy as np

from ..tensor import RngStream


class ToyDataset:
    name: str
    num_classes: int
    seq_len: int
    data_dim: int

    def templates(self) -> np.ndarray:
        """Noise-free per-class item, shape (num_classes, L, D)."""
        raise NotImplementedError

    def noise_std(self) -> float:
        raise NotImplementedError

    def sample(self, labels, stream: RngStream) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        if np.any(labels < 0) or np.any(labels >= self.num_classes):
            raise ValueError(f"unknown class in {labels}")
        base = self.templates()[labels]
        return base + self.noise_std() * stream.normal(base.shape)

    def generate(self, c: int, stream: RngStream) -> np.ndarray:
        """One item of class ``c``, shape (L, D)."""
        return self.sample(np.array([c]), stream)[0]

    def balanced_labels(self, count: int) -> np.ndarray:
        return np.arange(count) % self.num_classes

    def draw(self, count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
        """Class-balanced reference draw of ``count`` items."""
        labels = self.balanced_labels(count)
        return self.sample(labels, RngStream(seed).split(f"{self.name}-draw")), labels


class Rings2D(ToyDataset):
    """Eight isotropic Gaussians (std 0.1) on the unit circle."""

    name = "rings2d"
    num_classes = 8
    seq_len = 1
    data_dim = 2

    def templates(self):
        ang = 2 * np.pi * np.arange(self.num_classes) / self.num_classes
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)[:, None, :]

    def noise_std(self):
        return 0.1


class SeqToy(ToyDataset):
    """Four sinusoid classes over 16 positions and 4 phase-shifted channels."""

    name = "seqtoy"
    num_classes = 4
    seq_len = 16
    data_dim = 4

    def templates(self):
        p = np.arange(self.seq_len)[None, :, None]
        c = np.arange(self.num_classes)[:, None, None]
        phase = 2 * np.pi * np.arange(self.data_dim)[None, None, :] / self.data_dim
        return np.sin(2 * np.pi * (c + 1) * p / self.seq_len + phase)

    def noise_std(self):
        return 0.05


DATASETS = {"rings2d": Rings2D, "seqtoy": SeqToy}


def get_dataset(name: str) -> ToyDataset:
    try:
        return DATASETS[name]()
    except KeyError:
        raise ValueError(f"unknown dataset {name!r}; choose from {sorted(DATASETS)}") from None
