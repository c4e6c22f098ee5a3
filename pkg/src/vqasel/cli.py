"""Command-line pipeline: gen-synth, train-ranker, select, eval, gmad, bench.

Every output embeds the effective run config and seed. JSON outputs carry it
under "config"; checkpoints and CSVs get a ``<file>.meta.json`` sidecar.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .bench import fit_toy_base, gen_synthetic, run_bench, with_base_predictions
from .config import ConfigError, RunConfig
from .core import SCORES_NAME, StoreError, load_feature_store, read_scores, write_feature_store
from .gmad import GmadError, gmad_tournament
from .metrics import correlations
from .ranker import (
    LossKind,
    load_checkpoint,
    make_pair_labels,
    save_checkpoint,
    score_pool,
    train_ranker,
    write_pair_labels,
)
from .selection import export_pair_labels, greedy_select, write_preference_pairs

log = logging.getLogger("vqasel")

SIDECAR_SUFFIX = ".meta.json"


def _jsonable(o: Any) -> Any:
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def dump_json(path: str | Path, obj: Any) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, default=_jsonable) + "\n")


def write_sidecar(path: str | Path, run: RunConfig, **extra: Any) -> None:
    dump_json(str(path) + SIDECAR_SUFFIX, {"config": run.to_dict(), "seed": run.seed, **extra})


def parse_budget(text: str) -> int | float:
    """'40' is a count, '0.05' or '5e-2' a fraction."""
    try:
        if any(c in text for c in ".eE"):
            return float(text)
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid budget {text!r}") from None


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _run_config(args: argparse.Namespace) -> RunConfig:
    run = RunConfig.load(args.config)
    if args.seed is not None:
        run.set_seed(args.seed)
    sel = run.selection
    if getattr(args, "lam", None) is not None:
        sel = replace(sel, lam=args.lam)
    if getattr(args, "budget", None) is not None:
        sel = replace(sel, budget=args.budget)
    if getattr(args, "normalize_terms", False):
        sel = replace(sel, normalize_terms=True)
    run.selection = sel
    if getattr(args, "loss", None) is not None:
        run.train = replace(run.train, loss_kind=LossKind(args.loss))
    if getattr(args, "seeds", None) is not None:
        if args.seeds < 1:
            raise ConfigError("--seeds must be positive")
        run.bench_seeds = args.seeds
    return run


def _load_store(path: str, scores: str | None):
    """Store at ``path``; scores default to the scores.csv next to the manifest."""
    p = Path(path)
    if scores is None:
        cand = (p if p.is_dir() else p.parent) / SCORES_NAME
        scores = str(cand) if cand.is_file() else None
    return load_feature_store(p, scores)


# ------------------------------------------------------------- commands


def cmd_gen_synth(args: argparse.Namespace) -> int:
    run = _run_config(args)
    source, target = gen_synthetic(run.synth)
    base = fit_toy_base(source, run.ridge_reg)
    out = Path(args.out)
    meta = {"config": run.to_dict(), "seed": run.seed}
    for name, store in (("source", source), ("target", target)):
        write_feature_store(with_base_predictions(store, base), out / name, meta={**meta, "role": name})
    print(f"wrote {len(source)} source and {len(target)} target records to {out}")
    return 0


def cmd_train_ranker(args: argparse.Namespace) -> int:
    run = _run_config(args)
    store = _load_store(args.store, args.scores)
    pairs = make_pair_labels(store, "auto", seed=run.seed)
    history: list[float] = []
    params = train_ranker(store, pairs, run.train, loss_history=history)
    save_checkpoint(params, args.out)
    write_sidecar(args.out, run, loss_history=history, num_pairs=len(pairs),
                  dim=params.dim, hidden=params.hidden)
    if args.pairs_out:
        write_pair_labels(args.pairs_out, pairs)
        write_sidecar(args.pairs_out, run)
    if history:
        print(f"epoch 1 loss {history[0]:.6f}")
        print(f"epoch {len(history)} loss {history[-1]:.6f}")
    else:
        print("no epochs run")
    return 0


def _read_difficulty(path: str) -> dict[str, float]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"id", "difficulty"} <= set(reader.fieldnames):
            raise StoreError(f"{path}: expected columns id,difficulty")
        out = {}
        for row in reader:
            try:
                out[row["id"]] = float(row["difficulty"])
            except ValueError:
                raise StoreError(f"{path}: bad difficulty for {row['id']!r}") from None
    return out


def cmd_select(args: argparse.Namespace) -> int:
    run = _run_config(args)
    store = _load_store(args.store, args.scores)
    if args.ckpt:
        scores = score_pool(load_checkpoint(args.ckpt), store, run.train.pooling)
    else:
        scores = _read_difficulty(args.difficulty)
    result = greedy_select(store, scores, run.selection)
    report = result.to_dict()
    report["config"] = {**result.config, "seed": run.seed, "run": run.to_dict()}
    dump_json(args.out, report)
    if args.export_pairs:
        pairs = export_pair_labels(result.selected, store)
        write_preference_pairs(args.export_pairs, pairs)
        write_sidecar(args.export_pairs, run)
        print(f"exported {len(pairs)} preference pairs to {args.export_pairs}")
    print(f"selected {len(result.selected)} of {len(store)} videos")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    report = json.loads(Path(args.selection).read_text())
    try:
        selected = report["selected"]
    except (KeyError, TypeError):
        raise ValueError(f"{args.selection}: not a selection report") from None
    mos, base = read_scores(args.scores)
    m, b = [], []
    for i in selected:
        if mos.get(i) is None or base.get(i) is None:
            raise StoreError(f"selected id {i!r} lacks mos or base_pred in {args.scores}")
        m.append(mos[i])
        b.append(base[i])
    srcc, plcc = correlations(b, m)
    print(f"SRCC {srcc:.6f}")
    print(f"PLCC {plcc:.6f}")
    if args.out:
        dump_json(args.out, {"config": report.get("config"), "n": len(selected), "srcc": srcc, "plcc": plcc})
    return 0


def _read_model(arg: str) -> tuple[str, dict[str, float]]:
    name, sep, path = arg.partition("=")
    if not sep or not name or not path:
        raise ValueError(f"--model expects NAME=PATH, got {arg!r}")
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        col = "score" if "score" in cols else "base_pred" if "base_pred" in cols else None
        if "id" not in cols or col is None:
            raise StoreError(f"{path}: expected columns id and score (or base_pred)")
        out = {}
        for row in reader:
            try:
                out[row["id"]] = float(row[col])
            except ValueError:
                raise StoreError(f"{path}: bad {col} for {row['id']!r}") from None
    return name, out


def cmd_gmad(args: argparse.Namespace) -> int:
    run = _run_config(args)
    models = dict(_read_model(s) for s in args.model)
    if len(models) != len(args.model):
        raise GmadError("duplicate model name")
    mos, _ = read_scores(args.mos)
    report = gmad_tournament(models, mos, run.gmad)
    out = report.to_dict()
    out["config"] = {**out["config"], "seed": run.seed, "run": run.to_dict()}
    dump_json(args.out, out)
    for name in sorted(report.wins, key=lambda n: (report.ranks[n], n)):
        print(f"{report.ranks[name]:>3}  {name}  wins={report.wins[name]:g}")
    return 0


_CSV_FIELDS = ("seed", "variant", "failure_srcc", "failure_plcc", "srcc_before", "srcc_after")


def cmd_bench(args: argparse.Namespace) -> int:
    run = _run_config(args)
    report = run_bench(run.bench_config(), lambda_sweep=args.lambda_sweep, loss_ablation=args.loss_ablation)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = report.to_dict()
    data["config"] = {**data["config"], "seed": run.seed, "run": run.to_dict()}
    dump_json(out / "bench_report.json", data)
    csv_path = out / "bench_report.csv"
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_CSV_FIELDS)
        for r in report.rows:
            w.writerow([r["seed"], r["variant"]] + [repr(float(r[k])) for k in _CSV_FIELDS[2:]])
    write_sidecar(csv_path, run)
    print(f"{'variant':<26}{'failure_srcc':>14}{'srcc_before':>13}{'srcc_after':>12}")
    for name, m in report.means().items():
        print(f"{name:<26}{m['failure_srcc']:>14.4f}{m['srcc_before']:>13.4f}{m['srcc_after']:>12.4f}")
    return 0


# --------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vqasel", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=_seed, help="global seed (overrides the config)")

    def selection_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--lambda", dest="lam", type=float, help="diversity weight")
        p.add_argument("--budget", type=parse_budget, help="count (int) or pool fraction (float)")
        p.add_argument("--normalize-terms", action="store_true", help="min-max scale both objective terms")

    loss_choices = [k.value for k in LossKind]

    p = sub.add_parser("gen-synth", parents=[common], help="write a synthetic source/target pair of stores")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train-ranker", parents=[common], help="train the difficulty scorer")
    p.add_argument("store", help="manifest.json or its directory")
    p.add_argument("--scores", help="scores CSV (default: scores.csv beside the manifest)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss", choices=loss_choices)
    p.add_argument("--pairs-out", help="also write the training pair labels")
    p.set_defaults(func=cmd_train_ranker)

    p = sub.add_parser("select", parents=[common], help="greedy hard-and-diverse selection")
    p.add_argument("store", help="manifest.json or its directory")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--ckpt", help="ranker checkpoint used to score the pool")
    src.add_argument("--difficulty", help="CSV id,difficulty with precomputed scores")
    p.add_argument("--scores", help="scores CSV (needed for --export-pairs)")
    p.add_argument("--out", required=True, help="selection report JSON")
    p.add_argument("--export-pairs", metavar="CSV", help="write preference pairs for the selection")
    selection_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("eval", help="SRCC/PLCC of base predictions on a selection")
    p.add_argument("selection", help="selection report JSON")
    p.add_argument("--scores", required=True, help="scores CSV with mos and base_pred")
    p.add_argument("--out", help="optional JSON result")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gmad", parents=[common], help="gMAD tournament between models")
    p.add_argument("--model", action="append", required=True, metavar="NAME=CSV",
                   help="model predictions (columns id,score or id,base_pred); repeat per model")
    p.add_argument("--mos", required=True, help="scores CSV with a mos column")
    p.add_argument("--out", required=True, help="report JSON")
    p.set_defaults(func=cmd_gmad)

    p = sub.add_parser("bench", parents=[common], help="synthetic benchmark over seeds")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seeds", type=int, help="number of seeds (overrides the config)")
    p.add_argument("--loss", choices=loss_choices)
    p.add_argument("--lambda-sweep", action="store_true", help="add one mds row per lambda in the grid")
    p.add_argument("--loss-ablation", action="store_true", help="add one mds row per ranker loss")
    selection_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, FloatingPointError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
