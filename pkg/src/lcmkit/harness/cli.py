"""Command-line entry point: ``lcmkit <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from ..solver import oracle_check
from . import config as C
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import DATASETS, get_dataset
from .pipeline import (
    build_student, build_teacher, cond_labels, evaluate, generate, read_samples_csv,
    rows_to_csv, samples_to_csv, write_text,
)
from .sweep import KINDS, parse_grid, run_sweep

log = logging.getLogger("lcmkit")

TOGGLES = {"rope": "model.use_rope", "rmsnorm": "model.use_rmsnorm", "swiglu": "model.use_swiglu"}


def sidecar(path) -> str:
    return os.fspath(path) + ".json"


def cmd_train_teacher(args) -> int:
    cfg = C.load_config(args.config)
    teacher = build_teacher(cfg)
    save_checkpoint(teacher, args.out)
    print(f"teacher: {len(teacher.losses)} steps, final loss {teacher.losses[-1]:.6f} -> {args.out}")
    return 0


def cmd_distill(args) -> int:
    cfg = C.load_config(args.config)
    arch = C.arch_from(cfg, get_dataset(cfg["data.name"]))
    teacher = load_checkpoint(args.teacher, expect_arch=arch)
    if teacher.schedule.params() != C.schedule_from(cfg).params():
        raise CheckpointError("teacher schedule differs from the config's schedule")
    model = build_student(teacher, cfg)
    save_checkpoint(model, args.out)
    print(f"student: {len(model.losses)} steps, final loss {model.losses[-1]:.6f} -> {args.out}")
    return 0


def cmd_sample(args) -> int:
    model = load_checkpoint(args.model)
    labels = cond_labels(args.cond, args.count, model.net.arch.num_classes)
    x, nfe, wall = generate(model, args.steps, args.omega, labels, args.seed, not args.no_timing)
    write_text(args.out, samples_to_csv(x, labels))
    info = {"nfe": nfe, "wall_clock_per_sample": wall, "steps": args.steps,
            "omega": args.omega, "seed": args.seed, "count": args.count}
    write_text(sidecar(args.out), json.dumps(info, sort_keys=True, indent=2) + "\n")
    print(f"nfe={nfe} wall_clock_per_sample={wall:.6g}s -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    x, labels = read_samples_csv(args.samples)
    dataset = get_dataset(args.dataset)
    nfe, wall = 0, 0.0
    if os.path.exists(sidecar(args.samples)):
        with open(sidecar(args.samples)) as fh:
            info = json.load(fh)
        nfe, wall = info["nfe"], info["wall_clock_per_sample"]
    report = evaluate(x, labels, dataset, args.seed, nfe, wall)
    write_text(args.out, report.to_json())
    print(report.to_json(), end="")
    return 0


def cmd_sweep(args) -> int:
    cfg = C.load_config(args.config)
    grid = parse_grid(args.grid, args.kind)
    teacher = load_checkpoint(args.teacher) if args.teacher else None
    model = load_checkpoint(args.model) if args.model else None
    rows = run_sweep(args.kind, grid, cfg, teacher=teacher, model=model, timing=not args.no_timing)
    write_text(args.out, rows_to_csv(rows))
    print(f"{len(rows)} rows -> {args.out}")
    return 0


def cmd_oracle_check(args) -> int:
    ok = True
    for name, passed, detail in oracle_check(args.seed):
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
        ok &= passed
    return 0 if ok else 1


def cmd_ablate(args) -> int:
    cfg = C.load_config(args.config)
    if args.drop != "none":
        cfg[TOGGLES[args.drop]] = False
    dataset = get_dataset(cfg["data.name"])
    model = build_student(build_teacher(cfg), cfg)
    count = int(cfg["eval.count"])
    labels = cond_labels("all", count, dataset.num_classes)
    seed = int(cfg["seed"])
    x, nfe, wall = generate(model, int(cfg["sample.steps"]), float(cfg["sample.omega"]), labels,
                            seed, not args.no_timing)
    report = evaluate(x, labels, dataset, seed, nfe, wall)
    if args.out:
        write_text(args.out, report.to_json())
    print(f"ablation drop={args.drop}", file=sys.stderr)
    print(report.to_json(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lcmkit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-teacher", help="train the epsilon-prediction teacher")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("distill", help="guided consistency distillation from a teacher")
    p.add_argument("--teacher", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("sample", help="draw samples from a teacher or student checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--omega", type=float, required=True)
    p.add_argument("--cond", default="all", help="class index or 'all' (balanced)")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-timing", action="store_true", help="record wall-clock as 0 for byte-stable output")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score a sample CSV against the dataset")
    p.add_argument("--samples", required=True)
    p.add_argument("--dataset", required=True, choices=sorted(DATASETS))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="sweep k, omega or sampling steps")
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--grid", required=True, help="comma-separated values")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--teacher", help="reuse a teacher checkpoint instead of training one")
    p.add_argument("--model", help="reuse a student checkpoint (omega and steps sweeps)")
    p.add_argument("--no-timing", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle-check", help="validate the solver against Gaussian closed forms")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("ablate", help="train and score with one architecture toggle off")
    p.add_argument("--drop", required=True, choices=sorted(TOGGLES) + ["none"])
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--no-timing", action="store_true")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (C.ConfigError, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
