"""Chamfer distance between frame-feature sets and mean pairwise set diversity."""

from __future__ import annotations

from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .core import FeatureStore, VideoRecord


def _as_frames(F) -> np.ndarray:
    F = np.asarray(F, dtype=np.float64)
    if F.ndim == 1:
        F = F[None, :]
    if F.ndim != 2 or F.shape[0] == 0 or F.shape[1] == 0:
        raise ValueError("frame set must be a nonempty T x d matrix")
    return F


def _sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    # explicit differences, not the |a|^2+|b|^2-2ab expansion (cancellation)
    diff = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def chamfer_distance(Fx, Fy) -> float:
    """Mean nearest-neighbour squared distance, summed over both directions."""
    Fx, Fy = _as_frames(Fx), _as_frames(Fy)
    if Fx.shape[1] != Fy.shape[1]:
        raise ValueError(f"dimension mismatch: {Fx.shape[1]} vs {Fy.shape[1]}")
    D = _sq_dists(Fx, Fy)
    return float(D.min(axis=1).mean() + D.min(axis=0).mean())


class FramePack:
    """All frames of a store concatenated, for one-vs-many Chamfer queries."""

    def __init__(self, frames: Sequence[np.ndarray]):
        if not frames:
            raise ValueError("empty frame pack")
        self.counts = np.array([f.shape[0] for f in frames])
        self.offsets = np.concatenate([[0], np.cumsum(self.counts)[:-1]])
        self.frames = np.concatenate([np.asarray(f, dtype=np.float64) for f in frames])

    @classmethod
    def from_store(cls, store: FeatureStore, ids: Iterable[str] | None = None) -> "FramePack":
        ids = store.ids if ids is None else list(ids)
        return cls([store[i].features for i in ids])

    def __len__(self) -> int:
        return len(self.counts)

    def chamfer_to(self, Fx) -> np.ndarray:
        """Chamfer distance from ``Fx`` to every member, shape (len(self),)."""
        Fx = _as_frames(Fx)
        if Fx.shape[1] != self.frames.shape[1]:
            raise ValueError(f"dimension mismatch: {Fx.shape[1]} vs {self.frames.shape[1]}")
        D = _sq_dists(Fx, self.frames)  # (Tx, N_frames)
        # x -> member: per member, mean over x frames of the min over member frames
        fwd = np.minimum.reduceat(D, self.offsets, axis=1).mean(axis=0)
        # member -> x: per member frame, min over x frames, then mean per member
        bwd = np.add.reduceat(D.min(axis=0), self.offsets) / self.counts
        return fwd + bwd


class DistanceCache:
    """Lazily filled symmetric (id, id) -> Chamfer distance map."""

    def __init__(self) -> None:
        self._d: dict[tuple[str, str], float] = {}

    @staticmethod
    def _key(a: str, b: str) -> tuple[str, str]:
        return (a, b) if a <= b else (b, a)

    def __len__(self) -> int:
        return len(self._d)

    def __contains__(self, pair: tuple[str, str]) -> bool:
        return self._key(*pair) in self._d

    def get(self, a: str, b: str) -> float | None:
        return self._d.get(self._key(a, b))

    def put(self, a: str, b: str, value: float) -> None:
        self._d.setdefault(self._key(a, b), float(value))

    def distance(self, store: FeatureStore, a: str, b: str) -> float:
        if a == b:
            return 0.0
        key = self._key(a, b)
        val = self._d.get(key)
        if val is None:
            val = chamfer_distance(store[key[0]].features, store[key[1]].features)
            self._d[key] = val
        return val


def pair_distance(store: FeatureStore, a: str, b: str, cache: DistanceCache | None = None) -> float:
    if cache is not None:
        return cache.distance(store, a, b)
    # canonical argument order so cached and uncached paths agree bit for bit
    a, b = DistanceCache._key(a, b)
    return chamfer_distance(store[a].features, store[b].features)


def set_diversity(ids: Iterable[str], store: FeatureStore, cache: DistanceCache | None = None) -> float:
    """Mean Chamfer distance over all unordered pairs of ``ids``."""
    ids = sorted(set(ids))
    if len(ids) < 2:
        raise ValueError("set diversity needs at least two ids")
    missing = [i for i in ids if i not in store]
    if missing:
        raise KeyError(f"unknown id {missing[0]!r}")
    dists = [pair_distance(store, a, b, cache) for a, b in combinations(ids, 2)]
    return float(np.mean(dists))


def l2_normalized(store: FeatureStore) -> FeatureStore:
    """Copy of ``store`` with every frame scaled to unit L2 norm (zero frames kept)."""
    out = []
    for rec in store:
        norms = np.linalg.norm(rec.features, axis=1, keepdims=True)
        feats = np.divide(rec.features, norms, out=rec.features.copy(), where=norms > 0)
        out.append(VideoRecord(rec.id, feats, rec.mos, rec.base_pred))
    return FeatureStore(store.dim, tuple(out))
