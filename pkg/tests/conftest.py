import numpy as np
import pytest

from vqasel.core import FeatureStore, VideoRecord


def make_store(frames, mos=None, base=None):
    """Store from {id: frames}; optional {id: mos} and {id: base_pred} maps."""
    mos = mos or {}
    base = base or {}
    recs = [VideoRecord(i, np.atleast_2d(np.asarray(f, dtype=float)), mos.get(i), base.get(i))
            for i, f in frames.items()]
    return FeatureStore.from_records(recs)


def random_store(rng, n, d=3, max_frames=3, prefix="v", scored=False):
    frames = {f"{prefix}{i:02d}": rng.normal(size=(int(rng.integers(1, max_frames + 1)), d))
              for i in range(n)}
    if not scored:
        return make_store(frames)
    mos = {i: float(rng.uniform(1, 5)) for i in frames}
    base = {i: float(rng.uniform(1, 5)) for i in frames}
    return make_store(frames, mos, base)


@pytest.fixture
def hand_pool():
    """The four-item pool whose greedy pick at lambda=1, k=2 is [a, b]."""
    store = make_store({"a": [[0.0]], "b": [[10.0]], "c": [[0.1]], "d": [[5.0]]})
    scores = {"a": 1.0, "b": 0.9, "c": 0.95, "d": 0.2}
    return store, scores
