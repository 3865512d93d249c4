"""Hyperparameter sweeps over k, guidance scale and sampling steps."""

from __future__ import annotations

import logging

from .data import get_dataset
from .pipeline import build_student, build_teacher, cond_labels, evaluate, generate

log = logging.getLogger(__name__)

KINDS = ("k", "omega", "steps")
OMEGA_STEPS = (1, 2, 4, 8)


def parse_grid(text: str, kind: str) -> list:
    if kind not in KINDS:
        raise ValueError(f"unknown sweep kind {kind!r}; choose from {KINDS}")
    cast = float if kind == "omega" else int
    try:
        grid = [cast(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ValueError(f"bad {kind} grid {text!r}") from None
    if not grid:
        raise ValueError("empty sweep grid")
    if kind != "omega" and min(grid) < 1:
        raise ValueError(f"{kind} grid values must be >= 1, got {grid}")
    return grid


def _score(model, steps, omega, cfg, dataset, timing=False):
    count = int(cfg["eval.count"])
    labels = cond_labels("all", count, dataset.num_classes)
    seed = int(cfg["seed"])
    x, nfe, wall = generate(model, steps, omega, labels, seed, timing)
    report = evaluate(x, labels, dataset, seed, nfe, wall)
    return report


def teacher_threshold(teacher, cfg, dataset) -> float:
    """Twice the teacher's Frechet distance at ``sweep.teacher_steps`` DDIM steps."""
    r = _score(teacher, int(cfg["sweep.teacher_steps"]), float(cfg["sample.omega"]), cfg, dataset)
    return 2.0 * r.metrics["empirical_frechet"]


def run_sweep(kind: str, grid, base_config: dict, teacher=None, model=None,
              timing: bool = True) -> list[dict]:
    """CSV-ready rows for one sweep; trains whatever is not supplied."""
    grid = parse_grid(",".join(map(str, grid)), kind)
    cfg = dict(base_config)
    dataset = get_dataset(cfg["data.name"])
    if teacher is None and (kind == "k" or model is None):
        teacher = build_teacher(cfg)
    omega = float(cfg["sample.omega"])
    rows = []

    if kind == "k":
        threshold = teacher_threshold(teacher, cfg, dataset)
        every = int(cfg["sweep.eval_every"])
        for k in grid:
            run = dict(cfg, **{"distill.k": k})
            hit = [-1]
            trace = []

            def checkpoint(step, m):
                r = _score(m, int(cfg["sample.steps"]), omega, run, dataset)
                fd = r.metrics["empirical_frechet"]
                if hit[0] < 0 and fd <= threshold:
                    hit[0] = step
                trace.append((step, fd, r.metrics["per_class_fidelity"]))
                log.info("k=%d step %d frechet %.5f", k, step, fd)

            build_student(teacher, run, checkpoint, every)
            for step, fd, fid in trace:
                rows.append({
                    "k": k, "iteration": step, "frechet": fd, "fidelity": fid,
                    "threshold": threshold, "iters_to_threshold": hit[0],
                })
        return rows

    if model is None:
        model = build_student(teacher, cfg)
    if kind == "omega":
        for w in grid:
            for steps in OMEGA_STEPS:
                r = _score(model, steps, w, cfg, dataset)
                rows.append({
                    "omega": w, "steps": steps, "nfe": r.nfe,
                    "frechet": r.metrics["empirical_frechet"],
                    "fidelity": r.metrics["per_class_fidelity"],
                })
    else:
        for steps in grid:
            r = _score(model, steps, omega, cfg, dataset, timing)
            rows.append({
                "steps": steps, "nfe": r.nfe,
                "frechet": r.metrics["empirical_frechet"],
                "fidelity": r.metrics["per_class_fidelity"],
                "wall_clock_per_sample": r.wall_clock_per_sample,
            })
    return rows
