"""Video records, the on-disk feature store, and frame pooling.

On-disk layout of a store directory::

    manifest.json   {"dim": int, "records": [{"id", "num_frames", "offset_bytes"}]}
    features.bin    little-endian float32, num_frames*dim values per record
    scores.csv      id,mos,base_pred  (empty cell = absent)
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

MANIFEST_NAME = "manifest.json"
FEATURES_NAME = "features.bin"
SCORES_NAME = "scores.csv"

_F32 = np.dtype("<f4")


class StoreError(ValueError):
    """Malformed or inconsistent feature-store input."""


class PoolingMethod(str, Enum):
    MEAN = "mean"
    MAX = "max"


@dataclass(frozen=True, eq=False)
class VideoRecord:
    id: str
    features: np.ndarray  # (T, d) float64
    mos: float | None = None
    base_pred: float | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise StoreError("record id must be a nonempty string")
        feats = np.array(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise StoreError(f"record {self.id!r}: features must be a nonempty T x d matrix")
        if not np.all(np.isfinite(feats)):
            raise StoreError(f"record {self.id!r}: non-finite feature value")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        for name in ("mos", "base_pred"):
            val = getattr(self, name)
            if val is not None:
                val = float(val)
                if not math.isfinite(val):
                    raise StoreError(f"record {self.id!r}: non-finite {name}")
                object.__setattr__(self, name, val)

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VideoRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.mos == other.mos
            and self.base_pred == other.base_pred
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class FeatureStore:
    """Immutable, ordered collection of records sharing one feature dimension."""

    dim: int
    records: tuple[VideoRecord, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not isinstance(self.dim, int) or self.dim < 1:
            raise StoreError(f"dim must be a positive integer, got {self.dim!r}")
        records = tuple(self.records)
        index: dict[str, int] = {}
        for i, rec in enumerate(records):
            if rec.id in index:
                raise StoreError(f"duplicate id {rec.id!r}")
            if rec.dim != self.dim:
                raise StoreError(
                    f"record {rec.id!r}: feature dimension {rec.dim} != store dim {self.dim}"
                )
            index[rec.id] = i
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_records(cls, records: Iterable[VideoRecord]) -> "FeatureStore":
        records = tuple(records)
        if not records:
            raise StoreError("cannot infer dim from an empty record list")
        return cls(records[0].dim, records)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[VideoRecord]:
        return iter(self.records)

    def __contains__(self, record_id: object) -> bool:
        return record_id in self._index

    def __getitem__(self, record_id: str) -> VideoRecord:
        try:
            return self.records[self._index[record_id]]
        except KeyError:
            raise KeyError(f"unknown id {record_id!r}") from None

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def subset(self, ids: Iterable[str]) -> "FeatureStore":
        return FeatureStore(self.dim, tuple(self[i] for i in ids))

    def with_scores(
        self,
        mos: Mapping[str, float | None] | None = None,
        base_pred: Mapping[str, float | None] | None = None,
    ) -> "FeatureStore":
        """Return a copy with mos/base_pred replaced for the ids present in the maps."""
        out = []
        for rec in self.records:
            changes = {}
            if mos is not None and rec.id in mos:
                changes["mos"] = mos[rec.id]
            if base_pred is not None and rec.id in base_pred:
                changes["base_pred"] = base_pred[rec.id]
            out.append(replace(rec, **changes) if changes else rec)
        return FeatureStore(self.dim, tuple(out))

    def pooled(self, method: PoolingMethod | str = PoolingMethod.MEAN) -> np.ndarray:
        """(n, d) matrix of pooled features in store order."""
        return np.stack([pool_features(r, method) for r in self.records])


def pool_features(record: VideoRecord, method: PoolingMethod | str = PoolingMethod.MEAN) -> np.ndarray:
    method = PoolingMethod(method)
    if method is PoolingMethod.MEAN:
        f = record.features
        # centred on the first frame so identical frames pool back exactly
        return f[0] + (f - f[0]).mean(axis=0)
    return record.features.max(axis=0)


# ---------------------------------------------------------------- file I/O


def _resolve_manifest(path: str | os.PathLike) -> Path:
    path = Path(path)
    return path / MANIFEST_NAME if path.is_dir() else path


def load_feature_store(manifest_path: str | os.PathLike, scores_path: str | os.PathLike | None = None) -> FeatureStore:
    """Load and validate a store from its manifest (a file or the directory holding it).

    The blob is read from ``features.bin`` next to the manifest. When
    ``scores_path`` is given, MOS and base predictions are merged in.
    """
    manifest_path = _resolve_manifest(manifest_path)
    if not manifest_path.is_file():
        raise StoreError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise StoreError(f"{manifest_path}: invalid JSON ({exc})") from exc
    if not isinstance(manifest, dict) or "dim" not in manifest or "records" not in manifest:
        raise StoreError(f"{manifest_path}: manifest needs 'dim' and 'records'")
    dim = manifest["dim"]
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        raise StoreError(f"{manifest_path}: dim must be a positive integer")

    blob_path = manifest_path.parent / FEATURES_NAME
    if not blob_path.is_file():
        raise StoreError(f"feature blob not found: {blob_path}")
    blob = blob_path.read_bytes()

    records = []
    seen: set[str] = set()
    for entry in manifest["records"]:
        rid = entry.get("id")
        if not isinstance(rid, str) or not rid:
            raise StoreError(f"{manifest_path}: record with missing or empty id")
        if rid in seen:
            raise StoreError(f"duplicate id {rid!r}")
        seen.add(rid)
        nf, off = entry.get("num_frames"), entry.get("offset_bytes")
        if not isinstance(nf, int) or nf < 1 or not isinstance(off, int) or off < 0:
            raise StoreError(f"record {rid!r}: bad num_frames/offset_bytes")
        nbytes = nf * dim * _F32.itemsize
        if off + nbytes > len(blob):
            raise StoreError(
                f"record {rid!r}: blob truncated, needs bytes [{off}, {off + nbytes}) "
                f"but blob has {len(blob)}"
            )
        vals = np.frombuffer(blob, dtype=_F32, count=nf * dim, offset=off)
        bad = np.flatnonzero(~np.isfinite(vals))
        if bad.size:
            raise StoreError(
                f"record {rid!r}: non-finite value at byte offset {off + int(bad[0]) * _F32.itemsize}"
            )
        records.append(VideoRecord(rid, vals.reshape(nf, dim).astype(np.float64)))

    store = FeatureStore(dim, tuple(records))
    if scores_path is not None:
        mos, base = read_scores(scores_path)
        store = store.with_scores(mos, base)
    return store


def write_feature_store(
    store: FeatureStore,
    out_dir: str | os.PathLike,
    write_scores: bool = True,
    meta: dict | None = None,
) -> Path:
    """Write manifest.json + features.bin (+ scores.csv). Returns the manifest path.

    Features are narrowed to float32; values already representable in float32
    round-trip bit-exactly.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for rec in store.records:
        raw = np.ascontiguousarray(rec.features, dtype=_F32).tobytes()
        entries.append({"id": rec.id, "num_frames": rec.num_frames, "offset_bytes": offset})
        chunks.append(raw)
        offset += len(raw)
    manifest: dict = {"dim": store.dim, "records": entries}
    if meta is not None:
        manifest["meta"] = meta
    (out_dir / FEATURES_NAME).write_bytes(b"".join(chunks))
    manifest_path = out_dir / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    if write_scores:
        write_scores_csv(
            out_dir / SCORES_NAME,
            {r.id: r.mos for r in store.records},
            {r.id: r.base_pred for r in store.records},
            order=store.ids,
        )
    return manifest_path


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def _parse(cell: str, rid: str, col: str) -> float | None:
    cell = cell.strip()
    if not cell:
        return None
    try:
        val = float(cell)
    except ValueError:
        raise StoreError(f"scores: record {rid!r}: cannot parse {col}={cell!r}") from None
    if not math.isfinite(val):
        raise StoreError(f"scores: record {rid!r}: non-finite {col}")
    return val


def read_scores(path: str | os.PathLike) -> tuple[dict[str, float | None], dict[str, float | None]]:
    """Read ``id,mos,base_pred``; returns (mos, base_pred) maps with None for empty cells."""
    path = Path(path)
    if not path.is_file():
        raise StoreError(f"scores file not found: {path}")
    mos: dict[str, float | None] = {}
    base: dict[str, float | None] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "id" not in reader.fieldnames:
            raise StoreError(f"{path}: header must start with 'id'")
        has_mos = "mos" in reader.fieldnames
        has_base = "base_pred" in reader.fieldnames
        for row in reader:
            rid = row["id"]
            if rid in mos:
                raise StoreError(f"{path}: duplicate id {rid!r}")
            mos[rid] = _parse(row["mos"] or "", rid, "mos") if has_mos else None
            base[rid] = _parse(row["base_pred"] or "", rid, "base_pred") if has_base else None
    return mos, base


def write_scores_csv(
    path: str | os.PathLike,
    mos: Mapping[str, float | None],
    base_pred: Mapping[str, float | None],
    order: Iterable[str] | None = None,
) -> None:
    ids = list(order) if order is not None else list(mos)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "mos", "base_pred"])
        for rid in ids:
            w.writerow([rid, _fmt(mos.get(rid)), _fmt(base_pred.get(rid))])
