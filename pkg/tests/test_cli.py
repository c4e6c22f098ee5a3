import csv
import json

import numpy as np
import pytest

from conftest import make_store
from vqasel.cli import main, parse_budget
from vqasel.core import load_feature_store, write_feature_store
from vqasel.metrics import correlations
from vqasel.ranker import load_checkpoint, score_pool
from vqasel.selection import top_k

SMALL = {"seed": 5, "synth": {"n_source": 150, "n_target": 200},
         "train": {"learning_rate": 0.2, "epochs": 2}, "bench": {"seeds": 2}}


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "run.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory, small_config):
    out = tmp_path_factory.mktemp("synth")
    assert main(["gen-synth", "--config", small_config, "--out", str(out)]) == 0
    return out


def _files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_budget_flag_parsing():
    assert parse_budget("40") == 40 and isinstance(parse_budget("40"), int)
    assert parse_budget("0.05") == 0.05 and parse_budget("5e-2") == 0.05


def test_gen_synth(tmp_path, small_config, synth_dir):
    assert main(["gen-synth", "--config", small_config, "--out", str(tmp_path)]) == 0
    assert _files(tmp_path) == _files(synth_dir)
    source = load_feature_store(synth_dir / "source", synth_dir / "source" / "scores.csv")
    target = load_feature_store(synth_dir / "target" / "manifest.json", synth_dir / "target" / "scores.csv")
    assert (len(source), len(target)) == (150, 200)
    assert all(r.mos is not None and r.base_pred is not None for r in target)
    meta = json.loads((synth_dir / "target" / "manifest.json").read_text())["meta"]
    assert meta["seed"] == 5 and meta["config"]["synth"]["n_target"] == 200 and meta["role"] == "target"
    other = tmp_path / "other"
    assert main(["gen-synth", "--config", small_config, "--seed", "6", "--out", str(other)]) == 0
    assert _files(other) != _files(synth_dir)


def test_train_ranker(tmp_path, small_config, synth_dir, capsys):
    ckpts = []
    for name in ("a.ckpt", "b.ckpt"):
        path = tmp_path / name
        assert main(["train-ranker", str(synth_dir / "source"), "--config", small_config,
                     "--out", str(path), "--pairs-out", str(tmp_path / f"{name}.pairs.csv")]) == 0
        ckpts.append(path)
    out = capsys.readouterr().out.splitlines()
    first, last = float(out[0].split()[-1]), float(out[1].split()[-1])
    assert out[0].startswith("epoch 1 loss") and out[1].startswith("epoch 2 loss")
    assert last <= first
    assert ckpts[0].read_bytes() == ckpts[1].read_bytes()
    side = json.loads((tmp_path / "a.ckpt.meta.json").read_text())
    assert side["seed"] == 5 and side["config"]["train"]["epochs"] == 2 and len(side["loss_history"]) == 2
    assert (tmp_path / "a.ckpt.pairs.csv").read_bytes() == (tmp_path / "b.ckpt.pairs.csv").read_bytes()


def test_train_ranker_default_fixture_loss_decreases(tmp_path, capsys):
    assert main(["gen-synth", "--out", str(tmp_path / "d")]) == 0
    assert main(["train-ranker", str(tmp_path / "d" / "source"), "--out", str(tmp_path / "g.ckpt")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert float(lines[-1].split()[-1]) <= float(lines[-2].split()[-1])


def test_train_ranker_refuses_missing_base_pred(tmp_path, synth_dir, capsys):
    scores = tmp_path / "mos_only.csv"
    rows = list(csv.DictReader((synth_dir / "source" / "scores.csv").open()))
    scores.write_text("id,mos\n" + "".join(f"{r['id']},{r['mos']}\n" for r in rows))
    rc = main(["train-ranker", str(synth_dir / "source"), "--scores", str(scores), "--out", str(tmp_path / "x")])
    assert rc != 0
    assert "base_pred" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


@pytest.fixture(scope="module")
def ckpt(tmp_path_factory, small_config, synth_dir):
    path = tmp_path_factory.mktemp("ck") / "g.ckpt"
    assert main(["train-ranker", str(synth_dir / "source"), "--config", small_config, "--out", str(path)]) == 0
    return path


def test_select_report_and_pairs(tmp_path, small_config, synth_dir, ckpt):
    args = ["select", str(synth_dir / "target"), "--ckpt", str(ckpt), "--config", small_config,
            "--budget", "12", "--lambda", "0.5"]
    for tag in ("a", "b"):
        assert main(args + ["--out", str(tmp_path / f"{tag}.json"), "--export-pairs", str(tmp_path / f"{tag}.csv")]) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    report = json.loads((tmp_path / "a.json").read_text())
    assert len(report["selected"]) == len(report["iterations"]) == 12
    assert report["config"]["lambda"] == 0.5 and report["config"]["seed"] == 5
    assert report["config"]["run"]["selection"]["budget"] == 12
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0] == "better_id,worse_id" and len(lines) - 1 <= 66
    assert json.loads((tmp_path / "a.csv.meta.json").read_text())["seed"] == 5


def test_select_lambda_zero_is_top_k(tmp_path, synth_dir, ckpt):
    out = tmp_path / "s.json"
    assert main(["select", str(synth_dir / "target"), "--ckpt", str(ckpt), "--lambda", "0",
                 "--budget", "0.05", "--out", str(out)]) == 0
    target = load_feature_store(synth_dir / "target")
    scores = score_pool(load_checkpoint(ckpt), target)
    assert json.loads(out.read_text())["selected"] == top_k(scores, 10)


def test_select_hand_fixture(tmp_path):
    store = make_store({"a": [[0.0]], "b": [[10.0]], "c": [[0.1]], "d": [[5.0]]})
    write_feature_store(store, tmp_path / "pool", write_scores=False)
    diff = tmp_path / "difficulty.csv"
    diff.write_text("id,difficulty\na,1.0\nb,0.9\nc,0.95\nd,0.2\n")
    out = tmp_path / "s.json"
    assert main(["select", str(tmp_path / "pool"), "--difficulty", str(diff), "--lambda", "1",
                 "--budget", "2", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["selected"] == ["a", "b"]


def test_select_dimension_mismatch(tmp_path, ckpt, capsys):
    store = make_store({"a": [[0.0, 1.0]], "b": [[1.0, 0.0]]})
    write_feature_store(store, tmp_path / "pool", write_scores=False)
    rc = main(["select", str(tmp_path / "pool"), "--ckpt", str(ckpt), "--budget", "1", "--out", str(tmp_path / "s.json")])
    assert rc == 1
    assert "dim" in capsys.readouterr().err


def _write_selection(path, ids):
    path.write_text(json.dumps({"config": {}, "selected": ids, "iterations": []}))


def test_eval(tmp_path, capsys):
    scores = tmp_path / "scores.csv"
    scores.write_text("id,mos,base_pred\na,1,1\nb,2,2\nc,4,4\nd,3,-3\ne,2,-2\nf,1,-1\n")
    sel = tmp_path / "sel.json"
    _write_selection(sel, ["a", "b", "c"])
    assert main(["eval", str(sel), "--scores", str(scores)]) == 0
    assert capsys.readouterr().out.split() == ["SRCC", "1.000000", "PLCC", "1.000000"]
    _write_selection(sel, ["d", "e", "f"])
    assert main(["eval", str(sel), "--scores", str(scores), "--out", str(tmp_path / "e.json")]) == 0
    assert "SRCC -1.000000" in capsys.readouterr().out
    _write_selection(sel, ["a", "b", "c", "d", "e"])
    assert main(["eval", str(sel), "--scores", str(scores), "--out", str(tmp_path / "e.json")]) == 0
    got = json.loads((tmp_path / "e.json").read_text())
    base, mos = [1, 2, 4, -3, -2], [1, 2, 4, 3, 2]
    assert (got["srcc"], got["plcc"]) == correlations(base, mos)
    _write_selection(sel, ["a", "zz"])
    assert main(["eval", str(sel), "--scores", str(scores)]) == 1


def test_gmad(tmp_path, synth_dir, capsys):
    tgt = synth_dir / "target" / "scores.csv"
    rows = list(csv.DictReader(tgt.open()))
    perfect = tmp_path / "perfect.csv"
    perfect.write_text("id,score\n" + "".join(f"{r['id']},{r['mos']}\n" for r in rows))
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / f"{tag}.json"
        assert main(["gmad", "--model", f"base={tgt}", "--model", f"perfect={perfect}",
                     "--model", f"twin={tgt}", "--mos", str(tgt), "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    report = json.loads(outs[0])
    assert set(report) == {"config", "pairs", "tournament"}
    t = report["tournament"]
    assert t["perfect"]["rank"] == 1
    assert t["base"] == t["twin"]
    assert main(["gmad", "--model", f"solo={tgt}", "--mos", str(tgt), "--out", str(tmp_path / "x.json")]) == 1
    assert main(["gmad", "--model", "nonsense", "--model", f"b={tgt}", "--mos", str(tgt),
                 "--out", str(tmp_path / "x.json")]) == 1


def test_bench(tmp_path, small_config, capsys):
    for tag in ("a", "b"):
        assert main(["bench", "--config", small_config, "--out", str(tmp_path / tag), "--lambda-sweep"]) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    report = json.loads((tmp_path / "a" / "bench_report.json").read_text())
    variants = {r["variant"] for r in report["rows"]}
    assert {"random", "topk_difficulty", "mds", "oracle_error"} <= variants
    assert {f"mds_lambda={g}" for g in ("0", "0.125", "0.25", "0.5")} <= variants
    assert report["config"]["seed"] == 5 and report["config"]["seeds"] == 2
    rows = list(csv.DictReader((tmp_path / "a" / "bench_report.csv").open()))
    assert len(rows) == len(report["rows"]) == 2 * 8
    assert "mds" in capsys.readouterr().out


def test_error_exit_codes(tmp_path, capsys):
    assert main(["gen-synth", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"selection": {"lambda": 0.1, "typo": 1}}')
    assert main(["bench", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "typo" in capsys.readouterr().err
    assert main(["select", str(tmp_path / "missing"), "--difficulty", "x.csv", "--out", "y"]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["select", "--lambda", "0.1"])
    assert exc.value.code != 0
    with pytest.raises(SystemExit) as exc:
        main(["train-ranker", "s", "--out", "x", "--loss", "hinge"])
    assert exc.value.code != 0


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "vqasel", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "gen-synth" in res.stdout
