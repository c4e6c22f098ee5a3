"""gMAD competition: hold the defender at a quality level, find the pair the
attacker separates most, then score models on which one agrees with MOS.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from itertools import permutations
from typing import Mapping

import numpy as np


class GmadError(ValueError):
    pass


@dataclass
class GmadConfig:
    num_levels: int = 5
    level_tolerance: float = 0.05
    pairs_per_level: int = 1

    def __post_init__(self) -> None:
        if int(self.num_levels) < 1:
            raise ValueError("num_levels must be positive")
        if not self.level_tolerance >= 0:
            raise ValueError("level_tolerance must be nonnegative")
        if int(self.pairs_per_level) < 1:
            raise ValueError("pairs_per_level must be positive")

    def level_centers(self) -> np.ndarray:
        if self.num_levels == 1:
            return np.array([0.5])
        return np.linspace(0.0, 1.0, self.num_levels)


@dataclass
class GmadPair:
    level: int
    center: float
    id_a: str
    id_b: str
    defender_gap: float  # normalised defender(a) - defender(b)
    attacker_gap: float  # |attacker(a) - attacker(b)|


def _aligned(defender: Mapping[str, float], attacker: Mapping[str, float]) -> list[str]:
    if set(defender) != set(attacker):
        raise GmadError("defender and attacker must score the same ids")
    ids = sorted(defender)
    if len(ids) < 2:
        raise GmadError("need at least two ids")
    return ids


def normalize_defender(defender: Mapping[str, float], ids: list[str]) -> np.ndarray:
    d = np.array([float(defender[i]) for i in ids])
    lo, hi = d.min(), d.max()
    if hi == lo:
        raise GmadError("defender scores are constant")
    return (d - lo) / (hi - lo)


def gmad_pairs(
    defender: Mapping[str, float],
    attacker: Mapping[str, float],
    config: GmadConfig | None = None,
) -> list[GmadPair]:
    """Per defender level, the admissible pairs with the largest attacker gap."""
    config = config or GmadConfig()
    ids = _aligned(defender, attacker)
    dn = normalize_defender(defender, ids)
    att = np.array([float(attacker[i]) for i in ids])
    out: list[GmadPair] = []
    for level, c in enumerate(config.level_centers()):
        adm = np.flatnonzero(np.abs(dn - c) <= config.level_tolerance)
        if adm.size < 2:
            continue
        ia, ib = np.triu_indices(adm.size, k=1)
        a, b = adm[ia], adm[ib]
        gaps = np.abs(att[a] - att[b])
        # ids are sorted, so index order is id order: tie-break on (a, b)
        order = np.lexsort((b, a, -gaps))[: config.pairs_per_level]
        for o in order:
            out.append(GmadPair(level, float(c), ids[a[o]], ids[b[o]],
                                float(dn[a[o]] - dn[b[o]]), float(gaps[o])))
    return out


@dataclass
class Match:
    defender: str
    attacker: str
    pair: GmadPair
    wins: dict[str, float]


@dataclass
class GmadReport:
    matches: list[Match] = field(default_factory=list)
    wins: dict[str, float] = field(default_factory=dict)
    ranks: dict[str, int] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "pairs": [
                {"defender": m.defender, "attacker": m.attacker, **asdict(m.pair), "wins": m.wins}
                for m in self.matches
            ],
            "tournament": {
                name: {"wins": self.wins[name], "rank": self.ranks[name]} for name in sorted(self.wins)
            },
        }


def competition_ranks(wins: Mapping[str, float]) -> dict[str, int]:
    """1 + number of models with strictly more wins (ties share the better rank)."""
    return {m: 1 + sum(1 for o in wins.values() if o > w) for m, w in wins.items()}


def gmad_tournament(
    models: Mapping[str, Mapping[str, float]],
    mos: Mapping[str, float],
    config: GmadConfig | None = None,
) -> GmadReport:
    """Round-robin over ordered (defender, attacker) pairs.

    On each surfaced pair, the model whose predicted gap is closer to the MOS
    gap takes the win; exact ties split it.
    """
    config = config or GmadConfig()
    if len(models) < 2:
        raise GmadError("a tournament needs at least two models")
    names = sorted(models)
    wins = {n: 0.0 for n in names}
    matches = []
    for dname, aname in permutations(names, 2):
        dm, am = models[dname], models[aname]
        for pair in gmad_pairs(dm, am, config):
            for i in (pair.id_a, pair.id_b):
                if mos.get(i) is None:
                    raise GmadError(f"no MOS for gMAD id {i!r}")
            mos_gap = mos[pair.id_a] - mos[pair.id_b]
            err_d = abs((dm[pair.id_a] - dm[pair.id_b]) - mos_gap)
            err_a = abs((am[pair.id_a] - am[pair.id_b]) - mos_gap)
            if err_d < err_a:
                w = {dname: 1.0, aname: 0.0}
            elif err_a < err_d:
                w = {dname: 0.0, aname: 1.0}
            else:
                w = {dname: 0.5, aname: 0.5}
            for n, v in w.items():
                wins[n] += v
            matches.append(Match(dname, aname, pair, w))
    return GmadReport(matches, wins, competition_ranks(wins), asdict(config))
