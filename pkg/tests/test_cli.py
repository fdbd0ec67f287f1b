from __future__ import annotations

import json
import os
import subprocess
import sys

import jsonschema
import pytest

from videocap import metrics
from videocap.cli import main

TINY = {"epochs": 3, "d_k": 4, "d_v": 4, "d_graph": 6, "width": 8, "ff": 8, "depth": 1}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data"), "--videos", "4", "--frames", "5", "--seed", "1"]) == 0
    (root / "cfg.json").write_text(json.dumps(TINY))
    assert main(["train", "--data", str(root / "data"), "--config", str(root / "cfg.json"), "--out", str(root / "ckpt")]) == 0
    return root


def files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


def test_synth_counts_and_determinism(workspace, tmp_path):
    names = sorted(files(workspace / "data"))
    assert names == ["captions.jsonl"] + [f"vid{k:04d}.vft" for k in range(4)]
    assert main(["synth", "--out", str(tmp_path), "--videos", "4", "--frames", "5", "--seed", "1"]) == 0
    assert files(tmp_path) == files(workspace / "data")


def test_synth_twenty_videos(tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--videos", "20", "--frames", "8"]) == 0
    assert len(list(tmp_path.glob("*.vft"))) == 20 and (tmp_path / "captions.jsonl").is_file()


def test_synth_unwritable_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["synth", "--out", str(blocker / "sub"), "--videos", "1"]) == 2


def test_usage_errors():
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--bogus"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--out", "x", "--pattern", "zigzag"])
    assert exc.value.code == 1


def test_train_is_deterministic_and_logs_config(workspace, tmp_path):
    out = tmp_path / "again"
    assert main(["train", "--data", str(workspace / "data"), "--config", str(workspace / "cfg.json"), "--out", str(out)]) == 0
    assert files(out) == files(workspace / "ckpt")
    header = (out / "train_log.csv").read_text().splitlines()[0]
    echoed = json.loads(header[len("# config: "):])
    assert echoed["epochs"] == 3 and echoed["lr"] == 1e-3  # missing field defaulted


def test_ablation_runs_record_the_flag(workspace, tmp_path):
    out = tmp_path / "abl"
    args = ["train", "--data", str(workspace / "data"), "--config", str(workspace / "cfg.json"), "--out", str(out)]
    assert main(args + ["--ablate", "temporal"]) == 0
    assert '"disable_temporal": true' in (out / "train_log.csv").read_text().splitlines()[0]
    assert files(out)["teacher.vft"] != files(workspace / "ckpt")["teacher.vft"]


def test_checkpoint_every_writes_subdirs(workspace, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({**TINY, "epochs": 4, "checkpoint_every": 2}))
    out = tmp_path / "ck"
    assert main(["train", "--data", str(workspace / "data"), "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "epoch_0002" / "student.vft").is_file() and (out / "epoch_0004" / "teacher.vft").is_file()


def test_train_corrupt_bundle_names_file(workspace, tmp_path, capsys):
    data = tmp_path / "data"
    data.mkdir()
    for name, blob in files(workspace / "data").items():
        (data / name).write_bytes(blob)
    (data / "vid0002.vft").write_bytes(b"VFT1\x01\x00")
    assert main(["train", "--data", str(data), "--out", str(tmp_path / "o")]) == 2
    assert "vid0002.vft" in capsys.readouterr().err


def test_train_bad_config(workspace, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"learning_rate": 1}')
    assert main(["train", "--data", str(workspace / "data"), "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_caption_beam_one_and_determinism(workspace, capsys):
    args = ["caption", "--ckpt", str(workspace / "ckpt"), "--bundle", str(workspace / "data" / "vid0000.vft")]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert main(args + ["--beam", "1"]) == 0
    assert capsys.readouterr().out == first
    assert main(args) == 0
    assert capsys.readouterr().out == first
    assert first.count("\n") == 1


def test_caption_teacher_only_dir(workspace, tmp_path):
    for name in ("teacher.vft", "checkpoint.json"):
        (tmp_path / name).write_bytes((workspace / "ckpt" / name).read_bytes())
    assert main(["caption", "--ckpt", str(tmp_path), "--bundle", str(workspace / "data" / "vid0000.vft")]) == 2


def test_eval_identity_and_schema(workspace, tmp_path, capsys):
    refs = workspace / "data" / "captions.jsonl"
    cands = tmp_path / "c.jsonl"
    with cands.open("w") as fh:
        for line in refs.read_text().splitlines():
            rec = json.loads(line)
            fh.write(json.dumps({"video_id": rec["video_id"], "caption": rec["captions"][0]}) + "\n")
    assert main(["eval", "--candidates", str(cands), "--references", str(refs)]) == 0
    report = json.loads(capsys.readouterr().out)
    jsonschema.validate(report, metrics.REPORT_SCHEMA)
    assert report["bleu4"] == 1.0 and report["rouge_l"] == 1.0


def test_eval_empty_candidates(workspace, tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    refs = workspace / "data" / "captions.jsonl"
    assert main(["eval", "--candidates", str(tmp_path / "e.jsonl"), "--references", str(refs)]) == 2


@pytest.mark.parametrize("fmt", ["json", "dot"])
def test_graph_export(workspace, tmp_path, fmt):
    out = tmp_path / f"g.{fmt}"
    bundle = str(workspace / "data" / "vid0001.vft")
    assert main(["graph-export", "--bundle", bundle, "--format", fmt, "--out", str(out)]) == 0
    assert out.stat().st_size > 0
    assert main(["graph-export", "--bundle", bundle, "--format", fmt, "--ckpt", str(workspace / "ckpt"), "--out", str(out)]) == 0


def test_gradcheck_exit_codes():
    env = dict(os.environ)
    run = lambda extra_env: subprocess.run(  # noqa: E731
        [sys.executable, "-m", "videocap", "gradcheck", "--seed", "0", "--seeds", "1"],
        capture_output=True, text=True, env={**env, **extra_env},
    )
    ok = run({})
    assert ok.returncode == 0, ok.stdout + ok.stderr
    assert "PASS" in ok.stdout and "long.W_q" in ok.stdout  # per-parameter rows
    bad = run({"VIDEOCAP_GRADCHECK_CORRUPT": "1"})
    assert bad.returncode == 3 and "FAIL" in bad.stdout
