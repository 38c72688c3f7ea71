import io
import json

import numpy as np
import pytest
import torch

from reactgen.cli import build_parser, main
from reactgen.model import load_checkpoint
from reactgen.motion import load_pair

TINY = ["--dim", "16", "--layers", "1", "--heads", "2", "--ffn", "32", "--clip-len", "20",
        "--diffusion-steps", "50", "--batch-size", "4", "--log-every", "5"]


@pytest.fixture(autouse=True)
def cache(tmp_path, monkeypatch):
    monkeypatch.setenv("REGEN_CACHE", str(tmp_path / "cache"))


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth-data", "--out", str(root / "data"), "--classes", "2", "--pairs", "5", "--frames", "20"]) == 0
    assert main(["train", "--data", str(root / "data"), "--out", str(root / "run"), "--steps", "10",
                 "--ckpt-every", "5", *TINY]) == 0
    return root


def test_help_lists_defaults(capsys):
    parser = build_parser()[0]
    subparsers = next(a for a in parser._actions if a.dest == "command").choices
    for cmd in ("synth-data", "train", "sample", "evaluate", "annotate", "render"):
        flags = [a for a in subparsers[cmd]._actions if a.option_strings and a.dest != "help"]
        assert all("(default:" in a.help for a in flags), cmd
        assert main([cmd, "--help"]) == 0
        text = capsys.readouterr().out
        assert text.count("(default:") == len(flags) and "--seed" in text
    main(["train", "--help"])
    assert "(default: 5000)" in capsys.readouterr().out


def test_synth_data_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["synth-data", "--out", str(tmp_path / name), "--pairs", "2", "--frames", "10", "--seed", "4"]) == 0
    a = (tmp_path / "a" / "pairs" / "seq_00003.json").read_bytes()
    assert a == (tmp_path / "b" / "pairs" / "seq_00003.json").read_bytes()
    rec = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert rec["seed"] == 4 and rec["command"] == "synth-data"


def test_synth_data_default_counts(tmp_path):
    assert main(["synth-data", "--out", str(tmp_path), "--classes", "4", "--pairs", "50", "--frames", "60",
                 "--seed", "7"]) == 0
    assert len(list((tmp_path / "pairs").glob("*.json"))) == 200


def test_flag_errors_exit_2(tmp_path, capsys):
    assert main(["synth-data", "--out", str(tmp_path), "--frames", "0"]) == 2
    assert "--frames" in capsys.readouterr().err
    assert main(["synth-data"]) == 2
    assert main(["train", "--nope"]) == 2
    assert main(["train", "--data", "x", "--out", "y", "--setting", "offline", "--mask", "on"]) == 2


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"pairs": 1, "frames": 8, "classes": 3}))
    assert main(["synth-data", "--out", str(tmp_path / "d"), "--config", str(cfg), "--classes", "2"]) == 0
    index = json.loads((tmp_path / "d" / "index.json").read_text())
    assert len(index["class_names"]) == 2 and len(index["sequences"]) == 2
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["synth-data", "--out", str(tmp_path / "e"), "--config", str(cfg)]) == 2


def test_train_outputs(run):
    model, T, skel, extra = load_checkpoint(run / "run" / "checkpoint.pt")
    assert T == 50 and extra["step"] == 10 and model.cfg.mode == "online" and model.cfg.max_len == 20
    lines = (run / "run" / "train.log").read_text().splitlines()
    assert lines[-1].startswith("step=10 loss_all=") and "loss_inter=" in lines[-1]
    assert json.loads((run / "run" / "manifest.json").read_text())["final_losses"]["loss_dm"] > 0


def test_resume_matches_uninterrupted(run, tmp_path):
    data = str(run / "data")
    assert main(["train", "--data", data, "--out", str(tmp_path / "full"), "--steps", "10", *TINY]) == 0
    assert main(["train", "--data", data, "--out", str(tmp_path / "part"), "--steps", "4", *TINY]) == 0
    assert main(["train", "--data", data, "--out", str(tmp_path / "part"), "--steps", "10", *TINY,
                 "--resume", str(tmp_path / "part" / "checkpoint.pt")]) == 0
    a = load_checkpoint(tmp_path / "full" / "checkpoint.pt")[0].state_dict()
    b = load_checkpoint(tmp_path / "part" / "checkpoint.pt")[0].state_dict()
    for k in a:
        torch.testing.assert_close(a[k], b[k], rtol=0, atol=1e-6)


def test_sample_deterministic_and_manifest(run, tmp_path):
    args = ["sample", "--checkpoint", str(run / "run" / "checkpoint.pt"),
            "--actor", str(run / "data" / "pairs" / "seq_00000.json"), "--seed", "2"]
    assert main([*args, "--out", str(tmp_path / "a.json")]) == 0
    assert main([*args, "--out", str(tmp_path / "b.json")]) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert load_pair(tmp_path / "a.json").frames == 20
    assert (tmp_path / "a.manifest.json").exists()


def test_sample_artifact_errors(run, tmp_path):
    junk = tmp_path / "junk.pt"
    junk.write_text("not a checkpoint")
    actor = str(run / "data" / "pairs" / "seq_00000.json")
    assert main(["sample", "--checkpoint", str(junk), "--actor", actor, "--out", str(tmp_path / "o.json")]) == 3
    assert main(["sample", "--checkpoint", str(tmp_path / "none.pt"), "--actor", actor,
                 "--out", str(tmp_path / "o.json")]) == 1


def frames_jsonl(pair, n):
    a = pair.action
    return "".join(json.dumps({"pose": a.pose[i % a.frames].tolist(), "root_orient": a.root_orient[i % a.frames].tolist(),
                               "transl": a.transl[i % a.frames].tolist()}) + "\n" for i in range(n))


def test_stream_emits_one_frame_per_input(run, tmp_path, monkeypatch, capsys):
    pair = load_pair(run / "data" / "pairs" / "seq_00000.json")
    monkeypatch.setattr("sys.stdin", io.StringIO(frames_jsonl(pair, 60)))
    assert main(["sample", "--checkpoint", str(run / "run" / "checkpoint.pt"), "--stream", "--latency",
                 "--manifest", str(tmp_path / "m.json")]) == 0
    out = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert [r["frame"] for r in out] == list(range(60))
    assert all(len(r["pose"]) == 15 and r["latency_ms"] > 0 for r in out)
    assert json.loads((tmp_path / "m.json").read_text())["frames"] == 60


def test_stream_rejects_bad_frame(run, monkeypatch):
    monkeypatch.setattr("sys.stdin", io.StringIO('{"pose": [0]}\n'))
    assert main(["sample", "--checkpoint", str(run / "run" / "checkpoint.pt"), "--stream"]) == 4


def test_annotate_reports_every_bad_row(run, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("sequence_id,actor_index,reactor_index,label\n"
                   "seq_00000,0,1,0\nseq_00001,1,1,0\nseq_99999,0,1,0\nseq_00000,1,0,0\nseq_00002,x,1,0\n"
                   "seq_00003,0,1,7\n")
    assert main(["annotate", "--annotations", str(bad), "--data", str(run / "data")]) == 4
    report = (tmp_path / "bad.errors.txt").read_text().splitlines()
    assert [l.split(":")[0] for l in report] == ["row 3", "row 4", "row 5", "row 6", "row 7"]
    good = run / "data" / "annotations.csv"
    assert main(["annotate", "--annotations", str(good), "--data", str(run / "data"),
                 "--out", str(tmp_path / "n.csv")]) == 0
    assert (tmp_path / "n.csv").read_text() == good.read_text()


def test_evaluate_extractor_handling(run, tmp_path):
    base = ["evaluate", "--checkpoint", str(run / "run" / "checkpoint.pt"), "--data", str(run / "data"),
            "--repeats", "2", "--samples", "8", "--s-l", "2"]
    assert main([*base, "--out", str(tmp_path / "r0")]) == 3
    assert main([*base, "--out", str(tmp_path / "r1"), "--train-extractor", "--extractor-epochs", "1"]) == 0
    rep = json.loads((tmp_path / "r1" / "report.json").read_text())
    assert rep["fid"]["repeats"] == 2 and rep["settings"]["condition"] == "test"
    assert (tmp_path / "r1" / "report.csv").read_text().startswith("metric,mean,ci95,repeats")
    # the cached extractor is reused without --train-extractor
    assert main([*base, "--out", str(tmp_path / "r2"), "--extractor-epochs", "1"]) == 0
    assert json.loads((tmp_path / "r2" / "report.json").read_text())["fid"] == rep["fid"]


def test_render_command(run, tmp_path):
    assert main(["render", "--input", str(run / "data" / "pairs" / "seq_00001.json"), "--out", str(tmp_path / "f"),
                 "--size", "64"]) == 0
    assert len(list((tmp_path / "f").glob("frame_*.png"))) == 20
    assert main(["render", "--input", str(run / "data" / "pairs" / "seq_00001.json"), "--out", str(tmp_path / "g"),
                 "--skeleton", "smplx54"]) == 3
