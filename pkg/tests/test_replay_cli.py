import csv
import io
import json
import os

import numpy as np
import pytest

from hideseek import analysis as A
from hideseek import cli
from hideseek import env as E
from hideseek.replay import ReplayError, RolloutLog, read_replay, write_replay

BASIC = E.get_variant("basic")
TINY = ["--set", "buffer_size=40", "--set", "minibatch_size=20", "--set", "epochs=1",
        "--set", "checkpoint_every=1"]


def _small_log(n=3):
    return A.rollout(BASIC, 5, n, A.Policy(None, None, "random", np.random.default_rng(0)))


def test_replay_round_trip(tmp_path):
    lg = _small_log()
    path = write_replay(lg, tmp_path / "a.jsonl")
    back = read_replay(path, expect={"seed": 5, "variant": BASIC.to_dict()})
    assert back.header == lg.header and back.records == lg.records
    first = json.loads(path.read_text().splitlines()[0])
    assert first["type"] == "header"
    assert not list(tmp_path.glob("*.tmp"))


def test_replay_header_mismatch(tmp_path):
    path = write_replay(_small_log(), tmp_path / "a.jsonl")
    with pytest.raises(ReplayError, match="seed"):
        read_replay(path, expect={"seed": 6})


def test_replay_truncated_and_malformed(tmp_path):
    path = write_replay(_small_log(), tmp_path / "a.jsonl")
    text = path.read_text()
    (tmp_path / "t.jsonl").write_text(text[:-10])
    with pytest.raises(ReplayError, match=r":4: truncated"):
        read_replay(tmp_path / "t.jsonl")
    lines = text.splitlines(keepends=True)
    lines[2] = "{not json\n"
    (tmp_path / "m.jsonl").write_text("".join(lines))
    with pytest.raises(ReplayError, match=r":3: malformed"):
        read_replay(tmp_path / "m.jsonl")
    (tmp_path / "h.jsonl").write_text("".join(lines[1:]))
    with pytest.raises(ReplayError, match=r":1: first line"):
        read_replay(tmp_path / "h.jsonl")


def test_write_replay_needs_header_fields(tmp_path):
    with pytest.raises(ReplayError):
        write_replay(RolloutLog({"seed": 0}, []), tmp_path / "x.jsonl")


def run(argv, capsys):
    code = cli.dispatch(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_bad_flags_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.dispatch(["train", "--bogus"])
    assert exc.value.code == 2


def test_unknown_variant_machine_readable_error(tmp_path, capsys):
    code, _, err = run(["train", "--variant", "nosuch", "--out", str(tmp_path / "r")], capsys)
    assert code == 1
    msg = json.loads(err.strip())
    assert msg["error"] == "UnknownVariant" and len(err.strip().splitlines()) == 1


def test_cli_pipeline(tmp_path, capsys):
    run_dir = tmp_path / "run"
    code, out, _ = run(["train", "--variant", "basic", "--seed", "3", "--steps", "80",
                        "--out", str(run_dir), *TINY], capsys)
    assert code == 0
    assert (run_dir / "final" / "weights.bin").exists()
    assert (run_dir / "curve.csv").exists()
    man = json.loads((run_dir / "manifest.json").read_text())
    assert man["hyperparams"]["buffer_size"] == 40 and man["variant"]["name"] == "basic"

    code, out, _ = run(["eval", "--checkpoint", str(run_dir / "final"), "--episodes", "2",
                        "--seed", "7"], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["trained"]["n_episodes"] == 2 and rep["random"]["policy"] == "random"

    code, _, err = run(["eval", "--checkpoint", str(run_dir / "final"), "--episodes", "1",
                        "--variant", "slowerhider"], capsys)
    assert code == 1 and "AnalysisError" in err

    roll = tmp_path / "roll"
    code, out, _ = run(["rollout", "--checkpoint", str(run_dir / "final"), "--steps", "60",
                        "--policy", "greedy", "--features", "--out", str(roll)], capsys)
    assert code == 0
    assert np.loadtxt(roll / "features.csv", delimiter=",").shape == (60, 512)
    base = tmp_path / "base"
    code, _, _ = run(["rollout", "--policy", "random-init", "--steps", "60", "--out", str(base)], capsys)
    assert code == 0

    code, out, _ = run(["analyze", "--analysis", "transitions", "--log", str(roll / "rollout.jsonl")], capsys)
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["from", "to", "probability"] and len(rows) == 57

    rep_dir = tmp_path / "rep"
    code, out, _ = run(["analyze", "--analysis", "freq", "--log", str(roll / "rollout.jsonl"),
                        "--baseline-log", str(base / "rollout.jsonl"), "--min-steps", "10",
                        "--out", str(rep_dir)], capsys)
    assert code == 0
    assert (rep_dir / "freq.svg").read_bytes().startswith(b"<?xml")
    assert len(list(csv.reader(io.StringIO(out)))) == 9

    code, _, err = run(["analyze", "--analysis", "freq", "--log", str(roll / "rollout.jsonl"),
                        "--baseline-log", str(base / "rollout.jsonl")], capsys)
    assert code == 1 and "50000" in err

    code, out, _ = run(["analyze", "--analysis", "distance", "--log", str(roll / "rollout.jsonl")], capsys)
    assert code == 0 and out.startswith("step,mean_distance,episodes")

    code, out, _ = run(["replay-dump", "--log", str(roll / "rollout.jsonl")], capsys)
    assert code == 0 and len(out.splitlines()) == 61

    pts = tmp_path / "pts.csv"
    pts.write_text("x,y,label\n0,0,a\n1,1,b\n2,4,c\n3,9,d\n")
    code, out, _ = run(["analyze", "--analysis", "quadfit", "--points", str(pts)], capsys)
    a, b, c, res = (float(v) for v in out.splitlines()[1].split(","))
    assert abs(a - 1) < 1e-9 and abs(b) < 1e-9 and abs(c) < 1e-9


def test_cli_writes_only_under_out(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    before = set(os.listdir(tmp_path))
    code, _, _ = run(["render-debug", "--seed", "2", "--steps", "3", "--out", "imgs"], capsys)
    assert code == 0
    assert set(os.listdir(tmp_path)) - before == {"imgs"}
    assert (tmp_path / "imgs" / "hider.ppm").read_bytes().startswith(b"P6")
    code, _, _ = run(["analyze", "--analysis", "quadfit", "--points", "missing.csv"], capsys)
    assert code == 1
    assert set(os.listdir(tmp_path)) - before == {"imgs"}


def test_variant_override(tmp_path, capsys):
    code, _, _ = run(["rollout", "--policy", "random", "--steps", "5", "--variant", "basic",
                      "--override", "hider_speed=3", "--out", str(tmp_path)], capsys)
    assert code == 0
    head = read_replay(tmp_path / "rollout.jsonl").header
    assert head["variant"]["hider_speed"] == 3.0
    code, _, err = run(["rollout", "--policy", "random", "--steps", "5", "--override", "wings=2",
                        "--out", str(tmp_path)], capsys)
    assert code == 1
