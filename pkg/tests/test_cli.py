import json
import os
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from clickmask.cli import run
from clickmask.service import _pad_to_multiple
from clickmask.trainer import load_checkpoint


# ----------------------------------------------------------- usage errors

def test_no_command_prints_help_and_exits_2(capsys):
    assert run([]) == 2
    assert "train" in capsys.readouterr().out


def test_unknown_flag_and_subcommand(capsys):
    assert run(["synth", "--nope", "x"]) == 2
    assert run(["frobnicate"]) == 2


def test_missing_required_setting(capsys):
    assert run(["synth"]) == 2  # no --out
    assert "out" in capsys.readouterr().err


def test_unknown_and_malformed_keys(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("bogus_key = 3\n")
    assert run(["synth", "--out", str(tmp_path / "d"), "--config", str(cfg)]) == 2
    assert run(["synth", "--out", str(tmp_path / "d"), "--set", "bogus=1"]) == 2
    assert run(["synth", "--out", str(tmp_path / "d"), "--set", "count=abc"]) == 2
    assert run(["synth", "--out", str(tmp_path / "d"), "--set", "whoops"]) == 2


def test_precedence_file_then_set_then_flag(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("count = 2  # comment\ncanvas = 28\n")
    out = tmp_path / "d"
    code = run(["synth", "--out", str(out), "--config", str(cfg),
                "--set", "count=3", "--count", "4"])
    assert code == 0
    printed = capsys.readouterr().out
    assert "config synth.count = 4" in printed  # flag beat --set beat file
    assert "config synth.canvas = 28" in printed
    with open(out / "manifest.tsv") as fh:
        rows = [l for l in fh if l.strip() and not l.startswith("#")]
    assert len(rows) == 4


def test_synth_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(["synth", "--out", str(out), "--seed", "7",
                    "--count", "5", "--canvas", "28"]) == 0
    for rel in sorted(os.listdir(a / "images")):
        assert (a / "images" / rel).read_bytes() == (b / "images" / rel).read_bytes()
    assert (a / "manifest.tsv").read_bytes() == (b / "manifest.tsv").read_bytes()


def test_console_script_smoke():
    proc = subprocess.run([sys.executable, "-m", "clickmask.cli"],
                          capture_output=True, text=True)
    assert proc.returncode == 2


# -------------------------------------------------------------- workflows

@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth a tiny dataset and train one toy epoch over it, once."""
    root = tmp_path_factory.mktemp("flow")
    data = root / "data"
    runs = root / "runs"
    assert run(["synth", "--out", str(data), "--count", "3",
                "--seed", "1", "--canvas", "112"]) == 0
    assert run(["train", "--data", str(data), "--out", str(runs),
                "--model", "toy", "--epochs", "1", "--epoch-size", "2",
                "--batch-size", "1", "--iterative-rounds", "1",
                "--max-initial-clicks", "2", "--lr-decay-epochs", ""]) == 0
    return {"root": root, "data": data,
            "checkpoint": runs / "ckpt-001.npz", "runs": runs}


def test_train_outputs(workspace):
    assert workspace["checkpoint"].exists()
    curve = (workspace["runs"] / "curve.jsonl").read_text().strip().split("\n")
    assert len(curve) == 2
    for line in curve:
        rec = json.loads(line)
        assert np.isfinite(rec["loss"])


def test_eval_writes_reports(workspace, capsys):
    out = workspace["root"] / "eval"
    code = run(["eval", "--checkpoint", str(workspace["checkpoint"]),
                "--data", str(workspace["data"]),
                "--thresholds", "0.5", "--click-cap", "2",
                "--out", str(out)])
    assert code == 0
    printed = capsys.readouterr().out
    assert "overall" in printed
    summary = json.loads((out / "summary.json").read_text())
    assert summary["click_cap"] == 2
    records = [json.loads(l) for l in
               (out / "records.jsonl").read_text().strip().split("\n")]
    assert len(records) == 3
    assert all(len(r["ious"]) == 2 for r in records)


def test_eval_flags_skipped_samples(workspace, tmp_path, capsys):
    import shutil
    broken = tmp_path / "broken"
    shutil.copytree(workspace["data"], broken)
    victim = sorted(os.listdir(broken / "images"))[0]
    os.remove(broken / "images" / victim)
    out = tmp_path / "eval"
    code = run(["eval", "--checkpoint", str(workspace["checkpoint"]),
                "--data", str(broken), "--thresholds", "0.5",
                "--click-cap", "1", "--out", str(out)])
    assert code == 1  # a skipped sample is a nonzero-exit condition
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["skipped"]) == 1
    assert "missing image file" in summary["skipped"][0]["reason"]


def test_simulate_dumps_session_records(workspace, tmp_path):
    out = tmp_path / "sim.jsonl"
    code = run(["simulate", "--checkpoint", str(workspace["checkpoint"]),
                "--data", str(workspace["data"]), "--cap", "2",
                "--out", str(out)])
    assert code == 0
    records = [json.loads(l) for l in out.read_text().strip().split("\n")]
    assert len(records) == 6  # 3 samples x 2 clicks
    for rec in records:
        assert rec["label"] in "+-"
        assert 0.0 <= rec["iou"] <= 1.0
    # determinism: a second run produces byte-identical records
    out2 = tmp_path / "sim2.jsonl"
    assert run(["simulate", "--checkpoint", str(workspace["checkpoint"]),
                "--data", str(workspace["data"]), "--cap", "2",
                "--out", str(out2)]) == 0
    assert out.read_bytes() == out2.read_bytes()


def test_simulate_replays_click_log(workspace, tmp_path):
    data = workspace["data"]
    with open(data / "manifest.tsv") as fh:
        first = next(l for l in fh if l.strip() and not l.startswith("#"))
    image_rel = first.split("\t")[0]
    image_path = data / image_rel

    log = {"clicks": [{"i": 30, "j": 40, "positive": True},
                      {"i": 80, "j": 90, "positive": False},
                      {"i": 55, "j": 60, "positive": True}]}
    log_path = tmp_path / "clicks.json"
    log_path.write_text(json.dumps(log))
    mask_path = tmp_path / "final.png"
    records_path = tmp_path / "replay.jsonl"
    code = run(["simulate", "--checkpoint", str(workspace["checkpoint"]),
                "--replay", str(log_path), "--image", str(image_path),
                "--mask-out", str(mask_path), "--out", str(records_path)])
    assert code == 0
    got = (np.asarray(Image.open(mask_path)) >= 128).astype(np.uint8)

    # oracle: drive the restored model directly through the same protocol
    from clickmask.clicksim import Click
    model = load_checkpoint(workspace["checkpoint"]).model
    image = np.asarray(Image.open(image_path).convert("RGB"),
                       dtype=np.float32) / 255.0
    padded = _pad_to_multiple(image, 28)
    taps = model.encode(padded[None])
    mask = np.zeros(padded.shape[:2], dtype=np.uint8)
    clicks = [Click(c["i"], c["j"], c["positive"]) for c in log["clicks"]]
    for k in range(len(clicks)):
        mask = model.predict(taps, clicks[: k + 1], mask)
    assert np.array_equal(got, mask[:112, :112])

    records = [json.loads(l) for l in records_path.read_text().strip().split("\n")]
    assert [r["step"] for r in records] == [1, 2, 3]
    assert "iou" not in records[0]  # no reference attached


def test_simulate_requires_a_mode(workspace, capsys):
    assert run(["simulate", "--checkpoint", str(workspace["checkpoint"])]) == 1
    assert "simulate needs" in capsys.readouterr().err


def test_serve_dry_run(workspace, capsys):
    assert run(["serve", "--checkpoint", str(workspace["checkpoint"]),
                "--dry-run", "true"]) == 0
    assert "dry run" in capsys.readouterr().out


def test_domain_errors_exit_1(tmp_path, capsys):
    assert run(["train", "--data", str(tmp_path / "absent"),
                "--out", str(tmp_path / "runs")]) == 1
    assert run(["eval", "--checkpoint", str(tmp_path / "none.npz"),
                "--data", str(tmp_path)]) == 1
