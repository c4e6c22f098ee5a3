"""Budgeted selection of hard-and-diverse videos.

The objective for a subset S is ``mean(g over S) + lam * mean pairwise Chamfer(S)``;
``greedy_select`` grows the subset one video at a time, ``exhaustive_select``
is the brute-force optimum for small pools.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import FeatureStore, StoreError
from .diversity import DistanceCache, FramePack, pair_distance, set_diversity

EXHAUSTIVE_MAX_SUBSETS = 10**6


class BudgetError(ValueError):
    pass


def resolve_budget(budget: int | float, pool_size: int) -> int:
    """Integer budgets are counts; float budgets are fractions of the pool in (0, 1]."""
    if pool_size < 1:
        raise BudgetError("empty pool")
    if isinstance(budget, bool):
        raise BudgetError(f"invalid budget {budget!r}")
    if isinstance(budget, (int, np.integer)):
        k = int(budget)
    else:
        frac = float(budget)
        if not 0.0 < frac <= 1.0:
            raise BudgetError(f"budget fraction must lie in (0, 1], got {frac}")
        k = max(1, math.floor(frac * pool_size))
    if not 1 <= k <= pool_size:
        raise BudgetError(f"budget {k} outside [1, {pool_size}]")
    return k


@dataclass
class SelectionConfig:
    lam: float = 0.25
    budget: int | float = 0.05
    normalize_terms: bool = False

    def __post_init__(self) -> None:
        self.lam = float(self.lam)
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be a finite nonnegative real, got {self.lam}")

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "budget": self.budget, "normalize_terms": self.normalize_terms,
                "tie_break": "smallest_id"}


@dataclass
class Iteration:
    id: str
    difficulty: float
    diversity: float
    objective: float


@dataclass
class SelectionResult:
    selected: list[str]
    iterations: list[Iteration]
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "selected": list(self.selected),
            "iterations": [asdict(it) for it in self.iterations],
        }


def _check_scored(ids: Iterable[str], scores: Mapping[str, float]) -> None:
    for i in ids:
        if i not in scores:
            raise KeyError(f"id {i!r} has no difficulty score")


def set_difficulty(ids: Iterable[str], scores: Mapping[str, float]) -> float:
    ids = sorted(set(ids))
    if not ids:
        raise ValueError("set difficulty of an empty set")
    _check_scored(ids, scores)
    return float(np.mean([scores[i] for i in ids]))


def subset_objective(
    ids: Iterable[str],
    scores: Mapping[str, float],
    store: FeatureStore,
    lam: float,
    cache: DistanceCache | None = None,
) -> float:
    ids = sorted(set(ids))
    return set_difficulty(ids, scores) + lam * set_diversity(ids, store, cache)


def _minmax(v: np.ndarray) -> np.ndarray:
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def greedy_select(
    store: FeatureStore,
    scores: Mapping[str, float],
    config: SelectionConfig,
    cache: DistanceCache | None = None,
) -> SelectionResult:
    """Pick ``argmax g(x) + lam * mean_{y in D} chamfer(x, y)`` until the budget is met.

    The first pick has no diversity term. Exact ties go to the smallest id.
    """
    ids = store.ids
    _check_scored(ids, scores)
    n = len(ids)
    k = resolve_budget(config.budget, n)
    g = np.array([float(scores[i]) for i in ids])
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite difficulty score")
    id_rank = np.empty(n, dtype=np.int64)
    id_rank[np.argsort(np.array(ids, dtype=object), kind="stable")] = np.arange(n)

    pack = FramePack.from_store(store) if config.lam > 0 or config.normalize_terms else None
    dist_sum = np.zeros(n)
    remaining = np.ones(n, dtype=bool)
    selected: list[str] = []
    iterations: list[Iteration] = []

    for step in range(k):
        cand = np.flatnonzero(remaining)
        diff = g[cand]
        div = dist_sum[cand] / step if step else np.zeros(cand.size)
        if config.normalize_terms:
            diff = _minmax(diff)
            div = _minmax(div) if step else div
        obj = diff + config.lam * div
        best = obj.max()
        tied = cand[obj == best]
        j = tied[np.argmin(id_rank[tied])]
        pos = int(np.searchsorted(cand, j))
        selected.append(ids[j])
        iterations.append(Iteration(ids[j], float(diff[pos]), float(div[pos]), float(obj[pos])))
        remaining[j] = False
        if pack is not None and step + 1 < k:
            d = pack.chamfer_to(store.records[j].features)
            dist_sum += d
            if cache is not None:
                for t in np.flatnonzero(remaining):
                    cache.put(ids[j], ids[t], d[t])

    return SelectionResult(selected, iterations, config.to_dict())


def exhaustive_select(
    store: FeatureStore,
    scores: Mapping[str, float],
    lam: float,
    k: int,
) -> tuple[list[str], float]:
    """Brute-force maximiser of the subset objective (mean g alone when k == 1).

    Returns (sorted ids, objective value). Ties keep the lexicographically first
    subset of sorted ids.
    """
    ids = sorted(store.ids)
    _check_scored(ids, scores)
    n = len(ids)
    if not 1 <= k <= n:
        raise BudgetError(f"k={k} outside [1, {n}]")
    if math.comb(n, k) > EXHAUSTIVE_MAX_SUBSETS:
        raise ValueError(f"C({n},{k}) subsets exceeds the exhaustive limit")
    g = np.array([float(scores[i]) for i in ids])
    D = np.zeros((n, n))
    if k >= 2 and lam != 0:
        for a, b in combinations(range(n), 2):
            D[a, b] = D[b, a] = pair_distance(store, ids[a], ids[b])
    npairs = k * (k - 1) / 2

    best_val = -math.inf
    best: tuple[int, ...] = ()
    for combo in combinations(range(n), k):
        idx = list(combo)
        val = g[idx].mean()
        if k >= 2:
            val = val + lam * (D[np.ix_(idx, idx)].sum() / 2.0) / npairs
        if val > best_val:
            best_val, best = val, combo
    return [ids[i] for i in best], float(best_val)


def top_k(scores: Mapping[str, float], k: int) -> list[str]:
    """Ids of the k largest scores, ties to the smaller id."""
    return [i for i, _ in sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:k]]


def export_pair_labels(selected: Sequence[str], store: FeatureStore) -> list[tuple[str, str]]:
    """(better, worse) for every selected pair with distinct MOS."""
    mos = {}
    for i in selected:
        m = store[i].mos
        if m is None:
            raise StoreError(f"record {i!r} has no mos")
        mos[i] = m
    out = []
    for a, b in combinations(selected, 2):
        if mos[a] > mos[b]:
            out.append((a, b))
        elif mos[b] > mos[a]:
            out.append((b, a))
    return out


def write_preference_pairs(path: str | os.PathLike, pairs: Iterable[tuple[str, str]]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["better_id", "worse_id"])
        w.writerows(pairs)
