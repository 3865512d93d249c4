"""Glue between configs, training, sampling and evaluation."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from ..lcm import ConsistencyModel, distill, lcm_sample
from ..nn import DenoiserNet
from ..teacher import TeacherModel, ddim_sample, train_teacher
from ..tensor import RngStream
from . import config as C
from .checkpoint import atomic_write
from .data import get_dataset
from .metrics import empirical_frechet, noise_floor, per_class_fidelity

REFERENCE_SEED = 1


@dataclass
class EvalReport:
    metrics: dict
    count: int
    seed: int
    nfe: int
    wall_clock_per_sample: float

    def __post_init__(self):
        values = list(self.metrics.values()) + [self.wall_clock_per_sample]
        if not all(math.isfinite(float(v)) for v in values):
            raise ValueError(f"non-finite value in report: {self.metrics}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def root_stream(cfg: dict) -> RngStream:
    return RngStream(int(cfg["seed"]))


def build_teacher(cfg: dict) -> TeacherModel:
    dataset = get_dataset(cfg["data.name"])
    schedule = C.schedule_from(cfg)
    root = root_stream(cfg).split("teacher")
    net = DenoiserNet(C.arch_from(cfg, dataset), root.split("init"), dtype=C.dtype_of(cfg))
    return train_teacher(dataset, schedule, net, C.teacher_config(cfg), root.split("train"))


def build_student(teacher: TeacherModel, cfg: dict, callback=None, every: int = 0) -> ConsistencyModel:
    dataset = get_dataset(cfg["data.name"])
    stream = root_stream(cfg).split("distill")
    return distill(teacher, dataset, C.distill_config(cfg), stream, callback, every)


def cond_labels(cond, count: int, num_classes: int) -> np.ndarray:
    """``"all"`` gives class-balanced labels; an integer fixes one class."""
    if str(cond) == "all":
        return np.arange(count) % num_classes
    c = int(cond)
    if not 0 <= c < num_classes:
        raise ValueError(f"class {c} outside [0, {num_classes})")
    return np.full(count, c)


def generate(model, steps: int, omega: float, labels, seed: int, timing: bool = True):
    """Samples, NFE per sample and wall-clock per sample from either model kind."""
    stream = RngStream(seed).split("sample")
    stats = {}
    start = time.perf_counter()
    if isinstance(model, ConsistencyModel):
        x = lcm_sample(model, steps, omega, labels, len(labels), stream, stats)
    elif isinstance(model, TeacherModel):
        x = ddim_sample(model, steps, omega, labels, len(labels), stream, stats)
    else:
        raise TypeError(f"cannot sample from {type(model).__name__}")
    elapsed = time.perf_counter() - start
    wall = elapsed / max(len(labels), 1) if timing else 0.0
    return x, stats["nfe"], wall


def evaluate(samples, labels, dataset, seed: int = 0, nfe: int = 0, wall: float = 0.0) -> EvalReport:
    """Frechet distance to a fresh reference draw of equal size, plus fidelity."""
    samples = np.asarray(samples, float)
    ref, _ = dataset.draw(len(samples), seed=REFERENCE_SEED)
    metrics = {
        "empirical_frechet": empirical_frechet(samples, ref),
        "per_class_fidelity": per_class_fidelity(samples, labels, dataset),
        "noise_floor": noise_floor(dataset, count=len(samples)),
    }
    return EvalReport(metrics, len(samples), seed, int(nfe), float(wall))


def samples_to_csv(samples, labels) -> str:
    flat = np.asarray(samples).reshape(len(labels), -1)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["class"] + [f"dim{i}" for i in range(flat.shape[1])])
    for c, row in zip(labels, flat):
        writer.writerow([int(c)] + [format(float(v), ".9g") for v in row])
    return buf.getvalue()


def read_samples_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "class":
        raise ValueError(f"{path}: expected a 'class,dim0,...' header")
    body = np.array(rows[1:], dtype=float).reshape(len(rows) - 1, len(rows[0]))
    return body[:, 1:], body[:, 0].astype(np.int64)


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        raise ValueError("no rows to write")
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: format(v, ".9g") if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def write_text(path, text: str) -> None:
    atomic_write(path, text.encode("utf-8"))
