import csv
import json
import subprocess
import sys
import time
from importlib import resources

import pytest

from mdf.cli import EXIT_DIVERGED, EXIT_EXISTS, EXIT_INPUT, EXIT_OK, EXIT_USAGE, main
from mdf.io import load_checkpoint
from mdf.train import HISTORY_COLUMNS

SMOKE = str(resources.files("mdf") / "configs" / "smoke.json")


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--config", SMOKE, "--out", str(d / "data.mdfd")]) == EXIT_OK
    assert main(["train", "--config", SMOKE, "--dataset", str(d / "data.mdfd"),
                 "--out", str(d / "run")]) == EXIT_OK
    return d


def test_train_writes_every_artifact(workdir):
    run = workdir / "run"
    for name in ("checkpoint.mdfc", "history.csv", "summary.json", "manifest.json"):
        assert (run / name).is_file()
    with open(run / "history.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == HISTORY_COLUMNS and len(rows) == 3
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["seeds"] == {"data": 0, "init": 0, "train": 0}
    assert len(manifest["dataset_sha256"]) == 64
    summary = json.loads((run / "summary.json").read_text())
    assert summary["status"] == "ok" and summary["mode"] == "semi-supervised"


def test_existing_output_needs_force(workdir):
    args = ["train", "--config", SMOKE, "--dataset", str(workdir / "data.mdfd"),
            "--out", str(workdir / "run")]
    assert main(args) == EXIT_EXISTS
    assert main(["generate", "--config", SMOKE, "--out", str(workdir / "data.mdfd")]) == EXIT_EXISTS


def test_force_rerun_is_byte_identical(workdir):
    before = (workdir / "run" / "checkpoint.mdfc").read_bytes()
    history = (workdir / "run" / "history.csv").read_bytes()
    assert main(["train", "--config", SMOKE, "--dataset", str(workdir / "data.mdfd"),
                 "--out", str(workdir / "run"), "--force"]) == EXIT_OK
    assert (workdir / "run" / "checkpoint.mdfc").read_bytes() == before
    assert (workdir / "run" / "history.csv").read_bytes() == history


def test_eval_twice_gives_identical_json(workdir):
    args = ["eval", "--checkpoint", str(workdir / "run" / "checkpoint.mdfc"),
            "--dataset", str(workdir / "data.mdfd"), "--split", "test", "--fuse"]
    assert main(args + ["--out", str(workdir / "e1")]) == EXIT_OK
    assert main(args + ["--out", str(workdir / "e2")]) == EXIT_OK
    a = (workdir / "e1" / "metrics_test.json").read_bytes()
    assert a == (workdir / "e2" / "metrics_test.json").read_bytes()
    assert main(args + ["--out", str(workdir / "e1")]) == EXIT_EXISTS
    report = json.loads(a)
    assert set(report["heads"]) == {"eo", "sar", "fused"}
    header = (workdir / "e1" / "confusion_test.csv").read_text().splitlines()[0]
    assert header == "head,true_class," + ",".join(f"pred_{j}" for j in range(10))


def test_eval_fusion_matches_the_training_summary(workdir):
    out = workdir / "ev"
    assert main(["eval", "--checkpoint", str(workdir / "run" / "checkpoint.mdfc"),
                 "--dataset", str(workdir / "data.mdfd"), "--split", "val", "--fuse",
                 "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "metrics_val.json").read_text())
    summary = json.loads((workdir / "run" / "summary.json").read_text())
    assert report["fusion"] == summary["fusion"]
    assert report["heads"]["sar"]["top1"] == summary["val_top1"]["sar"]


def test_corrupted_dataset_is_rejected(workdir, tmp_path):
    raw = bytearray((workdir / "data.mdfd").read_bytes())
    raw[1000] ^= 0x10
    bad = tmp_path / "bad.mdfd"
    bad.write_bytes(bytes(raw))
    (tmp_path / "bad.mdfd.json").write_text((workdir / "data.mdfd.json").read_text())
    assert main(["train", "--config", SMOKE, "--dataset", str(bad),
                 "--out", str(tmp_path / "r")]) == EXIT_INPUT


def test_dataset_version_mismatch_names_both(workdir, tmp_path, capsys):
    manifest = json.loads((workdir / "data.mdfd.json").read_text())
    raw = (workdir / "data.mdfd").read_bytes()
    (tmp_path / "d.mdfd").write_bytes(raw)
    manifest["format_version"] = 7
    (tmp_path / "d.mdfd.json").write_text(json.dumps(manifest))
    code = main(["eval", "--checkpoint", str(workdir / "run" / "checkpoint.mdfc"),
                 "--dataset", str(tmp_path / "d.mdfd"), "--out", str(tmp_path / "e")])
    assert code == EXIT_INPUT
    assert "version" in capsys.readouterr().err


def test_bad_config_is_a_usage_error(workdir, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"format_version": 1, "train": {"epochz": 3}}')
    assert main(["train", "--config", str(cfg), "--dataset", str(workdir / "data.mdfd"),
                 "--out", str(tmp_path / "r")]) == EXIT_USAGE
    assert "epochz" in capsys.readouterr().err


def test_bad_log_level(workdir, tmp_path, monkeypatch):
    monkeypatch.setenv("MDF_LOG", "loud")
    assert main(["generate", "--config", SMOKE, "--out", str(tmp_path / "d")]) == EXIT_USAGE


def test_divergence_exit_code(workdir, tmp_path, monkeypatch):
    from mdf import train as train_mod
    from mdf.numcore import NonFiniteError

    def boom(*a, **k):
        raise NonFiniteError("forced")

    monkeypatch.setattr(train_mod.nc, "value_and_grad", boom)
    out = tmp_path / "r"
    assert main(["train", "--config", SMOKE, "--dataset", str(workdir / "data.mdfd"),
                 "--out", str(out)]) == EXIT_DIVERGED
    assert json.loads((out / "summary.json").read_text())["status"] == "diverged"


def test_degenerate_ablation_matches_train_and_eval(workdir, tmp_path):
    cfg = json.loads(open(SMOKE).read())
    cfg["ablation"] = {"seeds": 1, "rows": ["twin_semi_supervised"]}
    cpath = tmp_path / "abl.json"
    cpath.write_text(json.dumps(cfg))
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(cpath), "--dataset", str(workdir / "data.mdfd"),
                 "--out", str(out)]) == EXIT_OK
    with open(out / "ablation.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["row"] for r in rows] == ["twin_semi_supervised"] and rows[0]["seeds"] == "1"
    cell, _ = load_checkpoint(out / "cells" / "twin_semi_supervised" / "seed0" / "checkpoint.mdfc")
    run, _ = load_checkpoint(workdir / "run" / "checkpoint.mdfc")
    for a, b in zip(cell.parameters(), run.parameters()):
        assert a.tobytes() == b.tobytes()
    ev = tmp_path / "ev"
    main(["eval", "--checkpoint", str(workdir / "run" / "checkpoint.mdfc"),
          "--dataset", str(workdir / "data.mdfd"), "--fuse", "--out", str(ev)])
    report = json.loads((ev / "metrics_test.json").read_text())
    assert float(rows[0]["sar_mean"]) == pytest.approx(report["heads"]["sar"]["top1"], abs=1e-6)
    assert float(rows[0]["fused_mean"]) == pytest.approx(report["heads"]["fused"]["top1"], abs=1e-6)


def test_ablation_usage_errors(workdir, tmp_path):
    assert main(["ablate", "--config", SMOKE, "--dataset", str(workdir / "data.mdfd"),
                 "--out", str(tmp_path / "a"), "--seeds", "0"]) == EXIT_USAGE
    with pytest.raises(SystemExit):
        main(["ablate", "--dataset", "x"])


def test_smoke_run_as_a_subprocess(tmp_path):
    t0 = time.perf_counter()
    env_cmd = [sys.executable, "-m", "mdf"]
    data = tmp_path / "d.mdfd"
    subprocess.run(env_cmd + ["generate", "--config", SMOKE, "--out", str(data)], check=True)
    r = subprocess.run(env_cmd + ["train", "--config", SMOKE, "--dataset", str(data),
                                  "--out", str(tmp_path / "run")], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "epoch 1" in r.stderr
    assert time.perf_counter() - t0 < 60
