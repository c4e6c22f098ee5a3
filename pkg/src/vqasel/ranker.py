"""Failure predictor g(x): a one-hidden-layer tanh scorer over pooled embeddings,
trained on error-ordered video pairs under a Thurstone model.
"""

from __future__ import annotations

import csv
import math
import os
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import erfc

from .core import FeatureStore, PoolingMethod, StoreError
from .rng import stream

SQRT2 = math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

ALL_PAIRS_MAX_N = 512
SAMPLED_PAIRS_PER_ITEM = 20

CKPT_MAGIC = b"VQGR"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIII")


class LossKind(str, Enum):
    FIDELITY = "fidelity"
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


# ------------------------------------------------------------------ math


def std_normal_cdf(z):
    """Standard Gaussian CDF (scalar or array)."""
    out = 0.5 * erfc(-np.asarray(z, dtype=np.float64) / SQRT2)
    return float(out) if np.ndim(out) == 0 else out


def std_normal_pdf(z):
    z = np.asarray(z, dtype=np.float64)
    out = INV_SQRT_2PI * np.exp(-0.5 * z * z)
    return float(out) if np.ndim(out) == 0 else out


def pairwise_probability(gx, gy, eps: float = 1e-6):
    """P(x harder than y) = Phi((gx - gy)/sqrt 2), clamped to [eps, 1-eps]."""
    p = np.clip(std_normal_cdf((np.asarray(gx, dtype=np.float64) - gy) / SQRT2), eps, 1.0 - eps)
    return float(p) if np.ndim(p) == 0 else p


def fidelity_loss(p, p_hat):
    p = np.asarray(p, dtype=np.float64)
    p_hat = np.asarray(p_hat, dtype=np.float64)
    out = 1.0 - np.sqrt(p * p_hat) - np.sqrt((1.0 - p) * (1.0 - p_hat))
    return float(out) if np.ndim(out) == 0 else out


def classification_loss(p, p_hat, eps: float = 1e-6):
    p = np.asarray(p, dtype=np.float64)
    p_hat = np.clip(np.asarray(p_hat, dtype=np.float64), eps, 1.0 - eps)
    out = -p * np.log(p_hat) - (1.0 - p) * np.log1p(-p_hat)
    return float(out) if np.ndim(out) == 0 else out


def regression_loss(g_pred, target_err):
    out = (np.asarray(g_pred, dtype=np.float64) - target_err) ** 2
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------- params


@dataclass
class RankerParams:
    w1: np.ndarray  # (h, d)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (h,)
    b2: float

    def __post_init__(self) -> None:
        self.w1 = np.array(self.w1, dtype=np.float64, ndmin=2)
        self.b1 = np.array(self.b1, dtype=np.float64).reshape(-1)
        self.w2 = np.array(self.w2, dtype=np.float64).reshape(-1)
        self.b2 = float(self.b2)
        h, _ = self.w1.shape
        if h < 1 or self.b1.shape != (h,) or self.w2.shape != (h,):
            raise ValueError("inconsistent ranker parameter shapes")
        if not (np.all(np.isfinite(self.flat()))):
            raise ValueError("non-finite ranker parameter")

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def dim(self) -> int:
        return self.w1.shape[1]

    @classmethod
    def zeros(cls, d: int, h: int) -> "RankerParams":
        return cls(np.zeros((h, d)), np.zeros(h), np.zeros(h), 0.0)

    @classmethod
    def init(cls, d: int, h: int, seed: int) -> "RankerParams":
        rng = stream(seed, "ranker", "init")
        lim1 = 1.0 / math.sqrt(d)
        lim2 = 1.0 / math.sqrt(h)
        return cls(
            rng.uniform(-lim1, lim1, size=(h, d)),
            rng.uniform(-lim1, lim1, size=h),
            rng.uniform(-lim2, lim2, size=h),
            float(rng.uniform(-lim2, lim2)),
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2, [self.b2]])

    @classmethod
    def from_flat(cls, vec: np.ndarray, d: int, h: int) -> "RankerParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != h * d + 2 * h + 1:
            raise ValueError("flat parameter vector has the wrong length")
        i = h * d
        return cls(vec[:i].reshape(h, d), vec[i : i + h], vec[i + h : i + 2 * h], vec[-1])

    def copy(self) -> "RankerParams":
        return RankerParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RankerParams):
            return NotImplemented
        return self.w1.shape == other.w1.shape and np.array_equal(self.flat(), other.flat())


def ranker_forward(params: RankerParams, pooled) -> float | np.ndarray:
    """g = w2 . tanh(W1 x + b1) + b2 for one d-vector or an (n, d) batch."""
    x = np.asarray(pooled, dtype=np.float64)
    out = np.tanh(x @ params.w1.T + params.b1) @ params.w2 + params.b2
    return float(out) if x.ndim == 1 else out


def _backprop(params: RankerParams, X: np.ndarray, dg: np.ndarray) -> np.ndarray:
    """Flat gradient of sum_i dg[i] * g(X[i])."""
    a = np.tanh(X @ params.w1.T + params.b1)  # (n, h)
    da = (dg[:, None] * params.w2) * (1.0 - a * a)  # (n, h)
    gw1 = da.T @ X
    gb1 = da.sum(axis=0)
    gw2 = a.T @ dg
    gb2 = dg.sum()
    return np.concatenate([gw1.ravel(), gb1, gw2, [gb2]])


def batch_loss_and_grad(
    params: RankerParams,
    X: np.ndarray,
    Y: np.ndarray,
    p: np.ndarray,
    loss_kind: LossKind | str,
    eps: float = 1e-6,
    target_x: np.ndarray | None = None,
    target_y: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Mean pair loss and its flat gradient over a batch of pairs.

    For the regression loss the pair contributes the squared error of both
    members against their own targets; ``p`` is ignored.
    """
    kind = LossKind(loss_kind)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    p = np.atleast_1d(np.asarray(p, dtype=np.float64))
    n = X.shape[0]
    gx = ranker_forward(params, X)
    gy = ranker_forward(params, Y)

    if kind is LossKind.REGRESSION:
        if target_x is None or target_y is None:
            raise ValueError("regression loss needs per-item targets")
        rx = gx - np.atleast_1d(target_x)
        ry = gy - np.atleast_1d(target_y)
        loss = float(np.mean(rx * rx + ry * ry))
        dgx, dgy = 2.0 * rx / n, 2.0 * ry / n
    else:
        z = (gx - gy) / SQRT2
        raw = std_normal_cdf(z)
        p_hat = np.clip(raw, eps, 1.0 - eps)
        inside = (raw > eps) & (raw < 1.0 - eps)
        if kind is LossKind.FIDELITY:
            losses = fidelity_loss(p, p_hat)
            dl_dp = -0.5 * np.sqrt(p / p_hat) + 0.5 * np.sqrt((1.0 - p) / (1.0 - p_hat))
        else:
            losses = classification_loss(p, p_hat, eps)
            dl_dp = -p / p_hat + (1.0 - p) / (1.0 - p_hat)
        loss = float(np.mean(losses))
        dz = np.where(inside, dl_dp * std_normal_pdf(z), 0.0) / (SQRT2 * n)
        dgx, dgy = dz, -dz

    grad = _backprop(params, X, np.atleast_1d(dgx)) + _backprop(params, Y, np.atleast_1d(dgy))
    return loss, grad


def pair_loss(
    params: RankerParams, x, y, p, loss_kind: LossKind | str, eps: float = 1e-6,
    target_x: float | None = None, target_y: float | None = None,
) -> float:
    return batch_loss_and_grad(params, x, y, p, loss_kind, eps, target_x, target_y)[0]


def ranker_gradient(
    params: RankerParams, x, y, p, loss_kind: LossKind | str, eps: float = 1e-6,
    target_x: float | None = None, target_y: float | None = None,
) -> RankerParams:
    """Analytic gradient of one pair's loss, shaped like ``params``.

    Not a RankerParams in the parameter sense, but reusing the container keeps
    the shapes self-describing.
    """
    _, g = batch_loss_and_grad(params, x, y, p, loss_kind, eps, target_x, target_y)
    return RankerParams.from_flat(g, params.dim, params.hidden)


# ------------------------------------------------------------ pair labels


@dataclass(frozen=True)
class PairLabel:
    x_id: str
    y_id: str
    p: int

    def __post_init__(self) -> None:
        if self.x_id == self.y_id:
            raise ValueError(f"pair with identical ids {self.x_id!r}")
        if self.p not in (0, 1):
            raise ValueError(f"pair label must be 0 or 1, got {self.p!r}")


def base_errors(store: FeatureStore) -> dict[str, float]:
    """|f(x) - mu(x)| per record; every record needs both values."""
    errs = {}
    for rec in store:
        if rec.mos is None or rec.base_pred is None:
            missing = "mos" if rec.mos is None else "base_pred"
            raise StoreError(f"record {rec.id!r} has no {missing}")
        errs[rec.id] = abs(rec.base_pred - rec.mos)
    return errs


def make_pair_labels(
    store: FeatureStore,
    pairing: str = "auto",
    seed: int = 0,
    num_pairs: int | None = None,
) -> list[PairLabel]:
    """Ordered pairs labelled 1 iff x's base-model error >= y's.

    ``pairing``: "all" (every ordered pair), "sample" (``num_pairs`` uniform
    ordered pairs, default 20 per item), or "auto" (all when n <= 512).
    """
    errs = base_errors(store)
    ids = store.ids
    n = len(ids)
    if n < 2:
        raise ValueError("need at least two records to form pairs")
    if pairing == "auto":
        pairing = "all" if n <= ALL_PAIRS_MAX_N else "sample"
    e = np.array([errs[i] for i in ids])

    if pairing == "all":
        xi, yi = np.nonzero(~np.eye(n, dtype=bool))
    elif pairing == "sample":
        m = SAMPLED_PAIRS_PER_ITEM * n if num_pairs is None else int(num_pairs)
        rng = stream(seed, "ranker", "pairs")
        xi = rng.integers(0, n, size=m)
        # shift by 1..n-1 so x != y without rejection
        yi = (xi + rng.integers(1, n, size=m)) % n
    else:
        raise ValueError(f"unknown pairing strategy {pairing!r}")
    labels = (e[xi] >= e[yi]).astype(int)
    return [PairLabel(ids[a], ids[b], int(l)) for a, b, l in zip(xi, yi, labels)]


def write_pair_labels(path: str | os.PathLike, pairs: Iterable[PairLabel]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x_id", "y_id", "p"])
        for pl in pairs:
            w.writerow([pl.x_id, pl.y_id, pl.p])


def read_pair_labels(path: str | os.PathLike) -> list[PairLabel]:
    with Path(path).open(newline="") as fh:
        return [PairLabel(r["x_id"], r["y_id"], int(r["p"])) for r in csv.DictReader(fh)]


# --------------------------------------------------------------- training


@dataclass
class TrainConfig:
    hidden_size: int = 16
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_pairs: int = 8
    seed: int = 0
    prob_clamp: float = 1e-6
    loss_kind: LossKind = LossKind.FIDELITY
    pooling: PoolingMethod = PoolingMethod.MEAN

    def __post_init__(self) -> None:
        self.loss_kind = LossKind(self.loss_kind)
        self.pooling = PoolingMethod(self.pooling)
        if int(self.hidden_size) < 1:
            raise ValueError("hidden_size must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if int(self.epochs) < 0:
            raise ValueError("epochs must be nonnegative")
        if int(self.batch_pairs) < 1:
            raise ValueError("batch_pairs must be positive")
        if not 0.0 < self.prob_clamp < 0.5:
            raise ValueError("prob_clamp must lie in (0, 0.5)")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def train_ranker(
    store: FeatureStore,
    pairs: Sequence[PairLabel],
    config: TrainConfig,
    loss_history: list[float] | None = None,
    init: RankerParams | None = None,
) -> RankerParams:
    """Minibatch SGD on the configured pairwise loss.

    Per-epoch mean training loss is appended to ``loss_history`` when given.
    """
    if not pairs:
        raise ValueError("no training pairs")
    ids = store.ids
    index = {rid: i for i, rid in enumerate(ids)}
    try:
        xi = np.array([index[pl.x_id] for pl in pairs])
        yi = np.array([index[pl.y_id] for pl in pairs])
    except KeyError as exc:
        raise StoreError(f"pair references unknown id {exc.args[0]!r}") from None
    p = np.array([pl.p for pl in pairs], dtype=np.float64)

    feats = store.pooled(config.pooling)
    targets = None
    if config.loss_kind is LossKind.REGRESSION:
        errs = base_errors(store)
        targets = np.array([errs[i] for i in ids])

    params = init.copy() if init is not None else RankerParams.init(store.dim, config.hidden_size, config.seed)
    if params.dim != store.dim:
        raise StoreError(f"ranker dim {params.dim} != store dim {store.dim}")
    theta = params.flat()
    d, h = params.dim, params.hidden
    rng = stream(config.seed, "ranker", "shuffle")
    bs = config.batch_pairs
    m = len(pairs)

    # overflow during divergence is reported below as a non-finite loss
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(config.epochs):
            order = rng.permutation(m)
            total = 0.0
            for start in range(0, m, bs):
                batch = order[start : start + bs]
                bx, by = xi[batch], yi[batch]
                cur = RankerParams.from_flat(theta, d, h)
                loss, grad = batch_loss_and_grad(
                    cur, feats[bx], feats[by], p[batch], config.loss_kind, config.prob_clamp,
                    None if targets is None else targets[bx],
                    None if targets is None else targets[by],
                )
                if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                    raise FloatingPointError("ranker training diverged (non-finite loss or gradient); lower the learning rate")
                total += loss * len(batch)
                theta = theta - config.learning_rate * grad
            if loss_history is not None:
                loss_history.append(total / m)
    return RankerParams.from_flat(theta, d, h)


def mean_loss(store: FeatureStore, pairs: Sequence[PairLabel], params: RankerParams, config: TrainConfig) -> float:
    feats = store.pooled(config.pooling)
    index = {rid: i for i, rid in enumerate(store.ids)}
    xi = np.array([index[pl.x_id] for pl in pairs])
    yi = np.array([index[pl.y_id] for pl in pairs])
    p = np.array([pl.p for pl in pairs], dtype=np.float64)
    tx = ty = None
    if config.loss_kind is LossKind.REGRESSION:
        errs = base_errors(store)
        t = np.array([errs[i] for i in store.ids])
        tx, ty = t[xi], t[yi]
    return batch_loss_and_grad(params, feats[xi], feats[yi], p, config.loss_kind, config.prob_clamp, tx, ty)[0]


def score_pool(
    params: RankerParams, store: FeatureStore, pooling: PoolingMethod | str = PoolingMethod.MEAN
) -> dict[str, float]:
    if params.dim != store.dim:
        raise StoreError(f"ranker expects dim {params.dim}, store has dim {store.dim}")
    scores = ranker_forward(params, store.pooled(pooling))
    return {rid: float(s) for rid, s in zip(store.ids, np.atleast_1d(scores))}


# ------------------------------------------------------------- checkpoint


def save_checkpoint(params: RankerParams, path: str | os.PathLike) -> None:
    """Header (magic, version, d, h) then w1, b1, w2, b2 as little-endian float64."""
    body = np.concatenate([params.w1.ravel(), params.b1, params.w2, [params.b2]]).astype("<f8")
    Path(path).write_bytes(_CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, params.dim, params.hidden) + body.tobytes())


def load_checkpoint(path: str | os.PathLike) -> RankerParams:
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_HEADER.size:
        raise ValueError(f"{path}: checkpoint too short")
    magic, version, d, h = _CKPT_HEADER.unpack_from(raw)
    if magic != CKPT_MAGIC:
        raise ValueError(f"{path}: not a ranker checkpoint")
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    n = h * d + 2 * h + 1
    if len(raw) != _CKPT_HEADER.size + 8 * n:
        raise ValueError(f"{path}: checkpoint body has wrong length for d={d}, h={h}")
    vec = np.frombuffer(raw, dtype="<f8", offset=_CKPT_HEADER.size).astype(np.float64)
    return RankerParams.from_flat(vec, d, h)

