"""Run configuration: JSON file merged with command-line overrides.

Precedence, lowest first: dataclass defaults, the config file (``--config``
or the ``BEATDET_CONFIG`` environment variable), explicit flags.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Optional

from . import __version__
from .assignment import LevelConfig
from .decoding import DecodeConfig
from .losses import LossConfig
from .synth import make_corpus
from .toy import TrainConfig

CONFIG_ENV = "BEATDET_CONFIG"


@dataclass(frozen=True)
class CorpusConfig:
    n_train: int = 50
    n_val: int = 10
    n_test: int = 20
    train_seed: int = 1
    val_seed: int = 3
    test_seed: int = 2
    tempo_min: float = 60.0
    tempo_max: float = 180.0
    meters: tuple[int, ...] = (3, 4)
    duration: float = 10.0
    max_drift: float = 0.0
    noise_floor: float = 0.005

    def specs(self, split: str):
        n, seed = {
            "train": (self.n_train, self.train_seed),
            "val": (self.n_val, self.val_seed),
            "test": (self.n_test, self.test_seed),
        }[split]
        return make_corpus(
            n,
            seed=seed,
            tempo_range=(self.tempo_min, self.tempo_max),
            meters=self.meters,
            duration=self.duration,
            max_drift=self.max_drift,
            noise_floor=self.noise_floor,
        )


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    jobs: int = 1
    level: LevelConfig = field(default_factory=LevelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["level"] = self.level.to_dict()
        return _plain(d)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return merge(cls(), d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def provenance(self) -> dict:
        return {"config_hash": self.hash(), "seed": self.seed, "version": __version__}


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


def _coerce(value: Any, current: Any):
    if isinstance(current, tuple):
        return tuple(float(x) if x == "inf" else x for x in value)
    if isinstance(current, bool):
        return bool(value)
    if isinstance(current, int) and not isinstance(value, bool) and isinstance(value, (int, float)):
        if float(value) != int(value):
            raise ValueError(f"expected an integer, got {value!r}")
        return int(value)
    if isinstance(current, float) and isinstance(value, (int, float)):
        return float(value)
    return value


def merge(obj, updates: dict):
    """Return a copy of dataclass ``obj`` with nested ``updates`` applied.

    Unknown keys are rejected so typos in config files fail loudly.
    """
    if not updates:
        return obj
    names = {f.name for f in fields(obj)}
    unknown = set(updates) - names
    if unknown:
        raise ValueError(f"unknown config keys for {type(obj).__name__}: {sorted(unknown)}")
    changes = {}
    for k, v in updates.items():
        cur = getattr(obj, k)
        if is_dataclass(cur):
            if not isinstance(v, dict):
                raise ValueError(f"config section {k!r} must be an object")
            if isinstance(cur, LevelConfig):
                changes[k] = LevelConfig.from_dict({**cur.to_dict(), **v})
            else:
                changes[k] = merge(cur, v)
        else:
            changes[k] = _coerce(v, cur)
    return replace(obj, **changes)


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Defaults, then the file at ``path`` (or $BEATDET_CONFIG), then ``overrides``."""
    cfg = RunConfig()
    path = path or os.environ.get(CONFIG_ENV) or None
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: invalid JSON ({e})") from None
        cfg = merge(cfg, data)
    return merge(cfg, overrides or {})
