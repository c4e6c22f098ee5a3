"""Run configuration: one JSON file whose sections map onto the module configs.

    {
      "seed": 0,
      "train":     {"hidden_size": 16, "learning_rate": 0.001, ...},
      "selection": {"lambda": 0.25, "budget": 0.05, "normalize_terms": false},
      "gmad":      {"num_levels": 5, "level_tolerance": 0.05, "pairs_per_level": 1},
      "synth":     {"n_source": 1000, "n_target": 2000, ...},
      "bench":     {"seeds": 10, "learning_rate": 0.2, "ridge_reg": 1.0, "test_fraction": 0.25}
    }

Every section and key is optional; unknown ones are rejected.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .bench import BenchConfig, SynthConfig
from .gmad import GmadConfig
from .ranker import TrainConfig
from .selection import SelectionConfig


class ConfigError(ValueError):
    pass


_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}
_SYNTH_KEYS = {f.name for f in fields(SynthConfig)} - {"seed"}
_GMAD_KEYS = {f.name for f in fields(GmadConfig)}
_SELECTION_KEYS = {"lambda", "budget", "normalize_terms"}
_BENCH_KEYS = {"seeds", "learning_rate", "ridge_reg", "test_fraction"}
_SECTIONS = {"seed", "train", "selection", "gmad", "synth", "bench"}


def _check(section: str, given: dict, allowed: set[str]) -> None:
    if not isinstance(given, dict):
        raise ConfigError(f"section {section!r} must be an object")
    unknown = sorted(set(given) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(unknown)}")


def _budget(value: Any) -> int | float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"budget must be a number, got {value!r}")
    return value


@dataclass
class RunConfig:
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    gmad: GmadConfig = field(default_factory=GmadConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    bench_seeds: int = 10
    bench_learning_rate: float = 0.2
    ridge_reg: float = 1.0
    test_fraction: float = 0.25

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        _check("<root>", data, _SECTIONS)
        cfg = cls()
        try:
            if "seed" in data:
                cfg.seed = int(data["seed"])
            tr = data.get("train", {})
            _check("train", tr, _TRAIN_KEYS)
            cfg.train = TrainConfig(**tr)
            sel = data.get("selection", {})
            _check("selection", sel, _SELECTION_KEYS)
            cfg.selection = SelectionConfig(
                lam=sel.get("lambda", 0.25),
                budget=_budget(sel.get("budget", 0.05)),
                normalize_terms=bool(sel.get("normalize_terms", False)),
            )
            gm = data.get("gmad", {})
            _check("gmad", gm, _GMAD_KEYS)
            cfg.gmad = GmadConfig(**gm)
            sy = data.get("synth", {})
            _check("synth", sy, _SYNTH_KEYS)
            cfg.synth = SynthConfig(**sy)
            be = data.get("bench", {})
            _check("bench", be, _BENCH_KEYS)
            cfg.bench_seeds = int(be.get("seeds", cfg.bench_seeds))
            cfg.bench_learning_rate = float(be.get("learning_rate", cfg.bench_learning_rate))
            cfg.ridge_reg = float(be.get("ridge_reg", cfg.ridge_reg))
            cfg.test_fraction = float(be.get("test_fraction", cfg.test_fraction))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        cfg.set_seed(cfg.seed)
        return cfg

    @classmethod
    def load(cls, path: str | os.PathLike | None) -> "RunConfig":
        if path is None:
            return cls()
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def set_seed(self, seed: int) -> None:
        if not 0 <= int(seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        self.seed = int(seed)
        self.train = replace(self.train, seed=self.seed)
        self.synth = replace(self.synth, seed=self.seed)

    def bench_config(self) -> BenchConfig:
        return BenchConfig(
            synth=self.synth,
            train=replace(self.train, learning_rate=self.bench_learning_rate),
            lam=self.selection.lam,
            budget=self.selection.budget,
            normalize_terms=self.selection.normalize_terms,
            ridge_reg=self.ridge_reg,
            test_fraction=self.test_fraction,
            seeds=self.bench_seeds,
            base_seed=self.seed,
        )

    def to_dict(self) -> dict:
        train = asdict(self.train)
        train.pop("seed")
        train["loss_kind"] = self.train.loss_kind.value
        train["pooling"] = self.train.pooling.value
        synth = asdict(self.synth)
        synth.pop("seed")
        return {
            "seed": self.seed,
            "train": train,
            "selection": {
                "lambda": self.selection.lam,
                "budget": self.selection.budget,
                "normalize_terms": self.selection.normalize_terms,
            },
            "gmad": asdict(self.gmad),
            "synth": synth,
            "bench": {
                "seeds": self.bench_seeds,
                "learning_rate": self.bench_learning_rate,
                "ridge_reg": self.ridge_reg,
                "test_fraction": self.test_fraction,
            },
        }
