import csv
import json

import numpy as np
import pytest

from lcmkit.harness.checkpoint import load_checkpoint
from lcmkit.harness.cli import main
from lcmkit.harness.pipeline import EvalReport

from conftest import CONFIGS

SMOKE = str(CONFIGS / "smoke.yaml")


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["train-teacher", "--config", SMOKE, "--out", str(d / "t.ckpt")]) == 0
    assert main(["distill", "--teacher", str(d / "t.ckpt"), "--config", SMOKE,
                 "--out", str(d / "s.ckpt")]) == 0
    return d


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_checkpoints_load(trained):
    teacher = load_checkpoint(trained / "t.ckpt")
    student = load_checkpoint(trained / "s.ckpt")
    assert teacher.net.arch.width == 16 and student.k == 20


@pytest.mark.parametrize("model,steps,nfe", [("s", 2, 2), ("s", 1, 1), ("t", 5, 10)])
def test_sample_and_eval(trained, model, steps, nfe, capsys):
    out = trained / f"{model}{steps}.csv"
    assert main(["sample", "--model", str(trained / f"{model}.ckpt"), "--steps", str(steps),
                 "--omega", "5", "--cond", "all", "--count", "40", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "class,dim0,dim1" and len(lines) == 41
    info = json.loads((trained / f"{model}{steps}.csv.json").read_text())
    assert info["nfe"] == nfe and info["wall_clock_per_sample"] > 0
    report_path = trained / f"{model}{steps}.json"
    assert main(["eval", "--samples", str(out), "--dataset", "rings2d", "--out", str(report_path)]) == 0
    report = EvalReport.from_json(report_path.read_text())
    assert report.nfe == nfe and report.count == 40
    assert set(report.metrics) == {"empirical_frechet", "per_class_fidelity", "noise_floor"}
    assert all(np.isfinite(v) for v in report.metrics.values())


def test_sample_single_class(trained):
    out = trained / "one.csv"
    assert main(["sample", "--model", str(trained / "s.ckpt"), "--steps", "1", "--omega", "3",
                 "--cond", "6", "--count", "5", "--out", str(out), "--no-timing"]) == 0
    assert {r["class"] for r in read_csv(out)} == {"6"}
    assert json.loads((trained / "one.csv.json").read_text())["wall_clock_per_sample"] == 0.0


def test_steps_sweep_nfe_monotone(trained):
    out = trained / "steps.csv"
    assert main(["sweep", "--kind", "steps", "--grid", "1,2,4,8,16", "--config", SMOKE,
                 "--model", str(trained / "s.ckpt"), "--out", str(out)]) == 0
    rows = read_csv(out)
    assert [int(r["nfe"]) for r in rows] == [1, 2, 4, 8, 16]
    assert all(r[k] != "" for r in rows for k in r)


def test_omega_sweep_rows(trained):
    out = trained / "omega.csv"
    assert main(["sweep", "--kind", "omega", "--grid", "1,3,5", "--config", SMOKE,
                 "--model", str(trained / "s.ckpt"), "--out", str(out)]) == 0
    rows = read_csv(out)
    assert [(float(r["omega"]), int(r["steps"])) for r in rows] == [
        (w, s) for w in (1.0, 3.0, 5.0) for s in (1, 2, 4, 8)]
    assert all(int(r["nfe"]) == int(r["steps"]) for r in rows)


def test_k_sweep_rows(trained):
    out = trained / "k.csv"
    assert main(["sweep", "--kind", "k", "--grid", "1,20", "--config", SMOKE,
                 "--teacher", str(trained / "t.ckpt"), "--out", str(out)]) == 0
    rows = read_csv(out)
    assert [(int(r["k"]), int(r["iteration"])) for r in rows] == [(1, 50), (1, 100), (20, 50), (20, 100)]
    for r in rows:
        hit = int(r["iters_to_threshold"])
        assert hit == -1 or hit in (50, 100)
        assert float(r["threshold"]) > 0


def test_oracle_check_passes(capsys):
    assert main(["oracle-check"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out and all(line.startswith("PASS") for line in out)


def test_ablate_emits_report(tmp_path, capsys):
    out = tmp_path / "ablate.json"
    assert main(["ablate", "--drop", "swiglu", "--config", SMOKE, "--out", str(out)]) == 0
    report = EvalReport.from_json(out.read_text())
    assert report.nfe == 2 and report.count == 200
    assert json.loads(capsys.readouterr().out) == json.loads(out.read_text())


def test_errors_exit_nonzero(trained, tmp_path, capsys):
    assert main(["sample", "--model", str(tmp_path / "none.ckpt"), "--steps", "1", "--omega", "1",
                 "--count", "2", "--out", str(tmp_path / "x.csv")]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: 0\n")
    assert main(["train-teacher", "--config", str(bad), "--out", str(tmp_path / "t.ckpt")]) == 2
    assert main(["sample", "--model", str(trained / "s.ckpt"), "--steps", "1", "--omega", "1",
                 "--cond", "9", "--count", "2", "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["distill", "--teacher", str(trained / "t.ckpt"),
                 "--config", str(CONFIGS / "rings2d.yaml"), "--out", str(tmp_path / "s.ckpt")]) == 2
    assert main(["sweep", "--kind", "steps", "--grid", "0,2", "--config", SMOKE,
                 "--out", str(tmp_path / "x.csv")]) == 2
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["ablate", "--drop", "attention", "--config", SMOKE])
