"""Desk-scale experiments: synthetic source/target pools with a planted domain
shift, a closed-form ridge stand-in for the base quality model, and the
failure-identification and active-fine-tuning protocols.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .core import FeatureStore, PoolingMethod, VideoRecord
from .metrics import correlations, srcc
from .ranker import LossKind, TrainConfig, make_pair_labels, score_pool, train_ranker
from .rng import stream
from .selection import SelectionConfig, SelectionResult, greedy_select, resolve_budget, top_k

log = logging.getLogger(__name__)

METHODS = ("random", "topk_difficulty", "mds", "oracle_error")
LAMBDA_GRID = (0.0, 0.125, 0.25, 0.5)


# ------------------------------------------------------------- synthetic


@dataclass
class SynthConfig:
    n_source: int = 1000
    n_target: int = 2000
    dim: int = 16
    frames: int = 4
    n_clusters: int = 10
    center_scale: float = 1.0
    cluster_spread: float = 0.5
    frame_noise: float = 0.3
    feature_scale: float = 0.2
    linear_scale: float = 1.0
    nonlinearity: float = 1.0
    hinge: float = 1.5
    hard_region_fraction: float = 0.3
    shift_scale: float = 3.0
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("n_source", "n_target", "dim", "frames"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if int(self.n_clusters) < 1:
            raise ValueError("n_clusters must be at least 1")
        if not 0.0 <= self.hard_region_fraction <= 1.0:
            raise ValueError("hard_region_fraction must lie in [0, 1]")
        if not self.feature_scale > 0:
            raise ValueError("feature_scale must be positive")
        for name in ("center_scale", "cluster_spread", "frame_noise", "noise_sigma", "shift_scale", "nonlinearity"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def n_hard(self) -> int:
        return int(round(self.hard_region_fraction * self.n_clusters))


@dataclass
class SynthWorld:
    """The planted generative parameters behind one synthetic draw."""

    centers: np.ndarray  # (K, d) source cluster means
    target_centers: np.ndarray  # (K, d)
    hard_clusters: np.ndarray  # indices of shifted clusters
    weights: np.ndarray  # (d,) linear quality trend
    hard_dir: np.ndarray  # (d,) unit vector, orthogonal to weights


def _world(cfg: SynthConfig) -> SynthWorld:
    rng = stream(cfg.seed, "synth", "world")
    d, K = cfg.dim, cfg.n_clusters
    centers = rng.normal(0.0, cfg.center_scale, size=(K, d))
    a = rng.normal(size=d)
    a /= np.linalg.norm(a)
    w = rng.normal(size=d)
    if d > 1:
        w -= (w @ a) * a
    w *= cfg.linear_scale / np.linalg.norm(w)
    hard = np.sort(rng.permutation(K)[: cfg.n_hard])
    target_centers = centers.copy()
    for c in hard:
        side = rng.normal(size=d)
        side -= (side @ a) * a
        side *= 0.5 * cfg.shift_scale / max(np.linalg.norm(side), 1e-12)
        sign = rng.choice((-1.0, 1.0))
        target_centers[c] += sign * cfg.shift_scale * rng.uniform(0.5, 1.5) * a + side
    return SynthWorld(centers, target_centers, hard, w, a)


def latent_quality(world: SynthWorld, cfg: SynthConfig, pooled: np.ndarray) -> np.ndarray:
    """Linear trend minus a hinge-squared penalty on |projection| onto the hidden hard direction.

    The penalty is zero for most of the source pool, so a linear model fit
    there never learns it. ``pooled`` is in generator units (before
    ``feature_scale``).
    """
    excess = np.maximum(np.abs(pooled @ world.hard_dir) - cfg.hinge, 0.0)
    return pooled @ world.weights - cfg.nonlinearity * excess**2


def mos_from_latent(q: np.ndarray) -> np.ndarray:
    """Bounded monotone map onto a [1, 5] opinion scale."""
    return 1.0 + 4.0 / (1.0 + np.exp(-q))


def _draw_pool(cfg: SynthConfig, world: SynthWorld, centers: np.ndarray, n: int, prefix: str) -> FeatureStore:
    rng = stream(cfg.seed, "synth", prefix)
    d, T = cfg.dim, cfg.frames
    labels = rng.integers(0, cfg.n_clusters, size=n)
    z = centers[labels] + cfg.cluster_spread * rng.normal(size=(n, d))
    frames = z[:, None, :] + cfg.frame_noise * rng.normal(size=(n, T, d))
    # features live on disk as float32; quality is computed from what the models will see
    frames = (cfg.feature_scale * frames).astype(np.float32).astype(np.float64)
    pooled = frames.mean(axis=1) / cfg.feature_scale
    q = latent_quality(world, cfg, pooled) + cfg.noise_sigma * rng.normal(size=n)
    mos = mos_from_latent(q)
    width = len(str(n - 1))
    recs = tuple(
        VideoRecord(f"{prefix}{i:0{width}d}", frames[i], mos=float(mos[i])) for i in range(n)
    )
    return FeatureStore(d, recs)


def gen_synthetic(cfg: SynthConfig) -> tuple[FeatureStore, FeatureStore]:
    """(source, target) stores with MOS; target clusters in the hard region are shifted."""
    world = _world(cfg)
    source = _draw_pool(cfg, world, world.centers, cfg.n_source, "s")
    target = _draw_pool(cfg, world, world.target_centers, cfg.n_target, "t")
    return source, target


# ------------------------------------------------------------ base model


@dataclass
class ToyBaseModel:
    weights: np.ndarray
    intercept: float
    reg: float
    pooling: PoolingMethod = PoolingMethod.MEAN


class SingularSystemError(ValueError):
    pass


def fit_toy_base(
    stores: FeatureStore | Sequence[FeatureStore],
    reg: float = 1.0,
    pooling: PoolingMethod | str = PoolingMethod.MEAN,
) -> ToyBaseModel:
    """Closed-form ridge on pooled features against MOS (intercept unpenalised)."""
    if isinstance(stores, FeatureStore):
        stores = [stores]
    pooling = PoolingMethod(pooling)
    X = np.concatenate([s.pooled(pooling) for s in stores])
    y = []
    for s in stores:
        for r in s:
            if r.mos is None:
                raise ValueError(f"record {r.id!r} has no mos")
            y.append(r.mos)
    y = np.asarray(y)
    if reg < 0:
        raise ValueError("reg must be nonnegative")
    xm, ym = X.mean(axis=0), y.mean()
    Xc = X - xm
    A = Xc.T @ Xc + reg * np.eye(X.shape[1])
    if reg == 0 and np.linalg.matrix_rank(A) < A.shape[0]:
        raise SingularSystemError("rank-deficient design with reg=0")
    w = np.linalg.solve(A, Xc.T @ (y - ym))
    return ToyBaseModel(w, float(ym - xm @ w), float(reg), pooling)


def predict_toy(model: ToyBaseModel, store: FeatureStore) -> dict[str, float]:
    pred = store.pooled(model.pooling) @ model.weights + model.intercept
    return {rid: float(v) for rid, v in zip(store.ids, pred)}


def with_base_predictions(store: FeatureStore, model: ToyBaseModel) -> FeatureStore:
    return store.with_scores(base_pred=predict_toy(model, store))


# -------------------------------------------------------- selection/eval


def baseline_select(
    method: str,
    store: FeatureStore,
    scores: Mapping[str, float] | None,
    budget: int | float,
    seed: int = 0,
) -> SelectionResult:
    """Comparison selectors: seeded uniform sampling, or difficulty-only greedy."""
    if method == "random":
        k = resolve_budget(budget, len(store))
        rng = stream(seed, "bench", "random_select")
        idx = rng.choice(len(store), size=k, replace=False)
        ids = store.ids
        return SelectionResult([ids[i] for i in idx], [], {"method": "random", "budget": budget, "seed": seed})
    if method == "topk_difficulty":
        if scores is None:
            raise ValueError("topk_difficulty needs difficulty scores")
        return greedy_select(store, scores, SelectionConfig(lam=0.0, budget=budget))
    raise ValueError(f"unknown baseline {method!r}")


def eval_failure_identification(
    selected: Sequence[str],
    base_pred: Mapping[str, float],
    mos: Mapping[str, float],
) -> tuple[float, float]:
    """SRCC/PLCC of base predictions against MOS on the selected subset (lower = harder subset)."""
    if len(selected) < 2:
        raise ValueError("need at least two selected items")
    a = [base_pred[i] for i in selected]
    b = [mos[i] for i in selected]
    return correlations(a, b)


def split_target(target: FeatureStore, test_fraction: float, seed: int) -> tuple[FeatureStore, FeatureStore]:
    """Seeded split into (unlabelled pool, held-out test)."""
    n = len(target)
    n_test = int(round(test_fraction * n))
    if not 2 <= n_test < n:
        raise ValueError("test split must leave at least two test items and a nonempty pool")
    perm = stream(seed, "bench", "split").permutation(n)
    ids = target.ids
    test_idx = np.sort(perm[:n_test])
    pool_idx = np.sort(perm[n_test:])
    return target.subset(ids[i] for i in pool_idx), target.subset(ids[i] for i in test_idx)


def finetune_srcc(
    source: FeatureStore,
    labelled: FeatureStore | None,
    test: FeatureStore,
    reg: float,
) -> float:
    """Refit on source (+ newly labelled target items) and score SRCC on the test split."""
    stores = [source] if labelled is None or len(labelled) == 0 else [source, labelled]
    model = fit_toy_base(stores, reg)
    pred = predict_toy(model, test)
    return srcc([pred[i] for i in test.ids], [test[i].mos for i in test.ids])


# ----------------------------------------------------------------- bench


@dataclass
class BenchConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=0.2))
    lam: float = 0.25
    budget: float = 0.05
    normalize_terms: bool = False
    ridge_reg: float = 1.0
    test_fraction: float = 0.25
    seeds: int = 10
    base_seed: int = 0


@dataclass
class SeedContext:
    seed: int
    source: FeatureStore
    pool: FeatureStore
    test: FeatureStore
    base: ToyBaseModel
    srcc_before: float

    @property
    def base_pred(self) -> dict[str, float]:
        return {r.id: r.base_pred for r in self.pool}

    @property
    def mos(self) -> dict[str, float]:
        return {r.id: r.mos for r in self.pool}


def seed_for(cfg: BenchConfig, i: int) -> int:
    return (cfg.base_seed + i) % 2**64


def prepare_seed(cfg: BenchConfig, seed: int) -> SeedContext:
    synth = replace(cfg.synth, seed=seed)
    source, target = gen_synthetic(synth)
    base = fit_toy_base(source, cfg.ridge_reg)
    source = with_base_predictions(source, base)
    target = with_base_predictions(target, base)
    pool, test = split_target(target, cfg.test_fraction, seed)
    before = finetune_srcc(source, None, test, cfg.ridge_reg)
    return SeedContext(seed, source, pool, test, base, before)


def train_difficulty(ctx: SeedContext, cfg: BenchConfig, loss_kind: LossKind | str | None = None) -> dict[str, float]:
    tcfg = replace(cfg.train, seed=ctx.seed, loss_kind=loss_kind or cfg.train.loss_kind)
    pairs = make_pair_labels(ctx.source, "auto", seed=ctx.seed)
    params = train_ranker(ctx.source, pairs, tcfg)
    return score_pool(params, ctx.pool, tcfg.pooling)


def select(method: str, ctx: SeedContext, cfg: BenchConfig, scores: Mapping[str, float] | None, lam: float | None = None) -> list[str]:
    if method == "random":
        return baseline_select("random", ctx.pool, None, cfg.budget, ctx.seed).selected
    if method == "topk_difficulty":
        return baseline_select("topk_difficulty", ctx.pool, scores, cfg.budget).selected
    if method == "mds":
        sc = SelectionConfig(lam=cfg.lam if lam is None else lam, budget=cfg.budget, normalize_terms=cfg.normalize_terms)
        return greedy_select(ctx.pool, scores, sc).selected
    if method == "oracle_error":
        k = resolve_budget(cfg.budget, len(ctx.pool))
        err = {r.id: abs(r.base_pred - r.mos) for r in ctx.pool}
        return top_k(err, k)
    raise ValueError(f"unknown selection method {method!r}")


def evaluate_selection(ctx: SeedContext, cfg: BenchConfig, selected: Sequence[str]) -> dict[str, float]:
    s, p = eval_failure_identification(selected, ctx.base_pred, ctx.mos)
    after = finetune_srcc(ctx.source, ctx.pool.subset(selected), ctx.test, cfg.ridge_reg)
    return {"failure_srcc": s, "failure_plcc": p, "srcc_before": ctx.srcc_before, "srcc_after": after}


def simulate_active_finetune(
    source: FeatureStore,
    target: FeatureStore,
    selection_method: str,
    budget: int | float,
    seeds: Sequence[int],
    cfg: BenchConfig | None = None,
) -> dict:
    """Fine-tune protocol on fixed (source, target) stores carrying MOS and base_pred.

    The base model is refit on ``source`` and its predictions replace any
    stored base_pred. Per seed, the target split, ranker and random picks are
    reseeded. A budget of 0 selects nothing and leaves the model as it was.
    """
    cfg = cfg or BenchConfig()
    if selection_method not in METHODS:
        raise ValueError(f"unknown selection method {selection_method!r}")
    base = fit_toy_base(source, cfg.ridge_reg)
    source = with_base_predictions(source, base)
    target = with_base_predictions(target, base)
    per_seed = []
    for seed in seeds:
        pool, test = split_target(target, cfg.test_fraction, seed)
        before = finetune_srcc(source, None, test, cfg.ridge_reg)
        ctx = SeedContext(seed, source, pool, test, base, before)
        if budget == 0:
            after = before
            chosen: list[str] = []
        else:
            resolve_budget(budget, len(pool))
            c = replace(cfg, budget=budget)
            scores = train_difficulty(ctx, c) if selection_method in ("topk_difficulty", "mds") else None
            chosen = select(selection_method, ctx, c, scores)
            after = finetune_srcc(source, pool.subset(chosen), test, cfg.ridge_reg)
        per_seed.append({"seed": seed, "srcc_before": before, "srcc_after": after, "selected": chosen})
    return {
        "method": selection_method,
        "budget": budget,
        "per_seed": per_seed,
        "mean_srcc_before": float(np.mean([r["srcc_before"] for r in per_seed])),
        "mean_srcc_after": float(np.mean([r["srcc_after"] for r in per_seed])),
    }


@dataclass
class BenchReport:
    config: dict
    rows: list[dict]  # one per (seed, variant)

    def means(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, list[float]]] = {}
        for r in self.rows:
            bucket = out.setdefault(r["variant"], {})
            for k in ("failure_srcc", "failure_plcc", "srcc_before", "srcc_after"):
                bucket.setdefault(k, []).append(r[k])
        return {v: {k: float(np.mean(vals)) for k, vals in d.items()} for v, d in out.items()}

    def to_dict(self) -> dict:
        return {"config": self.config, "rows": self.rows, "means": self.means()}


def run_bench(
    cfg: BenchConfig,
    lambda_sweep: bool = False,
    loss_ablation: bool = False,
    methods: Sequence[str] = METHODS,
) -> BenchReport:
    """All variants for ``cfg.seeds`` consecutive seeds.

    Variant names: the selection methods, ``mds_lambda=<x>`` for the sweep and
    ``mds_loss=<kind>`` for the loss ablation.
    """
    rows = []
    for i in range(cfg.seeds):
        seed = seed_for(cfg, i)
        ctx = prepare_seed(cfg, seed)
        scores = train_difficulty(ctx, cfg)
        variants: list[tuple[str, list[str]]] = [(m, select(m, ctx, cfg, scores)) for m in methods]
        if lambda_sweep:
            for lam in LAMBDA_GRID:
                variants.append((f"mds_lambda={lam:g}", select("mds", ctx, cfg, scores, lam=lam)))
        if loss_ablation:
            for kind in LossKind:
                ks = scores if kind is cfg.train.loss_kind else train_difficulty(ctx, cfg, kind)
                variants.append((f"mds_loss={kind.value}", select("mds", ctx, cfg, ks)))
        for name, chosen in variants:
            rows.append({"seed": seed, "variant": name, **evaluate_selection(ctx, cfg, chosen)})
        log.info("bench seed %d done (srcc_before=%.3f)", seed, ctx.srcc_before)
    return BenchReport(bench_config_dict(cfg), rows)


def bench_config_dict(cfg: BenchConfig) -> dict:
    d = asdict(cfg)
    d["train"]["loss_kind"] = cfg.train.loss_kind.value
    d["train"]["pooling"] = cfg.train.pooling.value
    return d
