"""Corpus-level tertile thresholds and low/normal/high discretization."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping

from .errors import EmptyCorpus, MissingFeature
from .prosody_dsp import FEATURES, AcousticProfile

LEVELS = ("low", "normal", "high")

LOW_PERCENT = 33
HIGH_PERCENT = 67


def nearest_rank(sorted_values, percent: int):
    """Nearest-rank percentile: the ceil(q*n)-th smallest value (1-based).

    ``percent`` is an integer so the rank is computed exactly, without
    floating-point surprises such as 0.33 * 300 = 99.00000000000001.
    """
    n = len(sorted_values)
    if n == 0:
        raise EmptyCorpus("no values")
    rank = max(1, -(-percent * n // 100))
    return sorted_values[rank - 1]


@dataclass(frozen=True)
class FeatureStats:
    p33: float
    p67: float
    n: int
    min: float
    max: float


@dataclass(frozen=True)
class CalibrationStats:
    features: Mapping[str, FeatureStats]
    corpus_id: str
    created_at: str = ""

    @property
    def calibration_id(self) -> str:
        """Content hash of the thresholds; independent of ``created_at``."""
        payload = {"corpus_id": self.corpus_id, "features": self._features_dict()}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def _features_dict(self) -> dict:
        return {
            name: {"p33": s.p33, "p67": s.p67, "n": s.n, "min": s.min, "max": s.max}
            for name, s in self.features.items()
        }

    def to_dict(self) -> dict:
        return {
            "corpus_id": self.corpus_id,
            "calibration_id": self.calibration_id,
            "created_at": self.created_at,
            "features": self._features_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationStats":
        feats = {name: FeatureStats(**vals) for name, vals in data["features"].items()}
        return cls(feats, data["corpus_id"], data.get("created_at", ""))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "CalibrationStats":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def fit_calibration(
    profiles: Iterable[AcousticProfile],
    corpus_id: str,
    include_silent: bool = False,
    created_at: str | None = None,
) -> CalibrationStats:
    """Fit per-feature 33rd/67th nearest-rank percentiles over a corpus."""
    pool = [p for p in profiles if include_silent or not p.is_silent]
    if not pool:
        raise EmptyCorpus(f"corpus {corpus_id!r}: no usable profiles")
    feats = {}
    for name in FEATURES:
        values = sorted(p.value(name) for p in pool)
        feats[name] = FeatureStats(
            p33=float(nearest_rank(values, LOW_PERCENT)),
            p67=float(nearest_rank(values, HIGH_PERCENT)),
            n=len(values),
            min=float(values[0]),
            max=float(values[-1]),
        )
    if created_at is None:
        created_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return CalibrationStats(feats, corpus_id, created_at)


def level_for(value: float, stats: FeatureStats) -> str:
    # <= p33 wins ties so equal thresholds stay unambiguous
    if value <= stats.p33:
        return "low"
    if value > stats.p67:
        return "high"
    return "normal"


@dataclass(frozen=True)
class AcousticAttributes:
    levels: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if set(self.levels) != set(FEATURES):
            raise ValueError(f"attributes need exactly the features {FEATURES}, got {sorted(self.levels)}")
        bad = {k: v for k, v in self.levels.items() if v not in LEVELS}
        if bad:
            raise ValueError(f"invalid levels {bad}")
        object.__setattr__(self, "levels", {f: self.levels[f] for f in FEATURES})

    def __getitem__(self, feature: str) -> str:
        return self.levels[feature]

    def items(self):
        return self.levels.items()


def discretize(profile: AcousticProfile, stats: CalibrationStats) -> AcousticAttributes:
    levels = {}
    for name in FEATURES:
        if name not in stats.features:
            raise MissingFeature(f"calibration {stats.corpus_id!r} has no thresholds for {name!r}")
        levels[name] = level_for(profile.value(name), stats.features[name])
    return AcousticAttributes(levels)
