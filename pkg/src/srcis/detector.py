"""Confidence-aware online anomaly detection.

Running EMA estimates of the batch confidence mean and spread are used to
z-normalize a confidence. During training the normalized score partitions a
batch into high/low confidence right/wrong sets, whose sizes drive the
per-class temperature. At inference a score below ``gamma_n`` routes the
sample to slow inference.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import NotReadyError, ValidationError

# z-score of the 90% quantile of the standard normal, rounded to two decimals.
DEFAULT_GAMMA = 1.28


@dataclass
class OnlineExperience:
    beta_e: float = 0.01
    beta_std: float = 0.01
    w_e: float = 0.0
    w_std: float = 0.0
    warm: bool = False
    n_batches: int = 0

    def __post_init__(self):
        for name in ("beta_e", "beta_std"):
            b = getattr(self, name)
            if not 0.0 < b <= 1.0:
                raise ValidationError(f"{name} must lie in (0, 1], got {b}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "OnlineExperience":
        return cls(**d)

    def copy(self) -> "OnlineExperience":
        return OnlineExperience(**asdict(self))


@dataclass(frozen=True)
class DetectorConfig:
    gamma_p: float = DEFAULT_GAMMA
    gamma_n: float = -DEFAULT_GAMMA
    kappa: float = 1.2
    std_floor: float = 1e-6

    def __post_init__(self):
        if not self.gamma_p > self.gamma_n:
            raise ValidationError("gamma_p must exceed gamma_n")
        if not self.kappa > 1.0:
            raise ValidationError("kappa must be > 1")
        if not self.std_floor > 0.0:
            raise ValidationError("std_floor must be > 0")


@dataclass
class PreDetectResult:
    hp: list[int] = field(default_factory=list)
    hn: list[int] = field(default_factory=list)
    lp: list[int] = field(default_factory=list)
    ln: list[int] = field(default_factory=list)

    def counts(self) -> dict[str, int]:
        return {"hp": len(self.hp), "hn": len(self.hn), "lp": len(self.lp), "ln": len(self.ln)}


def batch_stats(confidences: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation of a batch of confidences."""
    c = np.asarray(confidences, dtype=np.float64)
    mean = float(c.mean())
    return mean, float(np.sqrt(np.mean((c - mean) ** 2)))


def ema_update(exp: OnlineExperience, batch_confidences: Sequence[float]) -> OnlineExperience:
    """Fold one batch into the experience in place and return it.

    The first batch ever seen initializes both estimates to its statistics.
    """
    c = np.asarray(batch_confidences, dtype=np.float64)
    if c.size == 0:
        raise ValidationError("empty confidence batch")
    if np.any(~np.isfinite(c)) or np.any(c < 0.0) or np.any(c > 1.0):
        raise ValidationError("confidences must be finite and lie in [0, 1]")
    mean, std = batch_stats(c)
    if not exp.warm:
        exp.w_e, exp.w_std = mean, std
        exp.warm = True
    else:
        exp.w_e = exp.beta_e * mean + (1.0 - exp.beta_e) * exp.w_e
        exp.w_std = exp.beta_std * std + (1.0 - exp.beta_std) * exp.w_std
    exp.n_batches += 1
    return exp


def normalize(exp: OnlineExperience, c, std_floor: float = 1e-6):
    """z-score of ``c`` (scalar or array) against the accumulated experience."""
    if not exp.warm:
        raise NotReadyError("online experience has not absorbed any batch yet")
    scale = max(exp.w_std, std_floor)
    if np.ndim(c):
        return (np.asarray(c, dtype=np.float64) - exp.w_e) / scale
    return (float(c) - exp.w_e) / scale


def pre_detect(exp: OnlineExperience, cfg: DetectorConfig,
               batch: Iterable[tuple[float, int, int]]) -> PreDetectResult:
    """Split a batch of ``(normalized confidence, predicted, true)`` triples.

    Samples with ``gamma_n <= score <= gamma_p`` land in no set.
    """
    if not exp.warm:
        raise NotReadyError("pre-detection needs warm online experience")
    res = PreDetectResult()
    for i, (z, pred, true) in enumerate(batch):
        ok = pred == true
        if z > cfg.gamma_p:
            (res.hp if ok else res.hn).append(i)
        elif z < cfg.gamma_n:
            (res.lp if ok else res.ln).append(i)
    return res


def temperature_update(tau: float, counts: PreDetectResult | dict, kappa: float) -> float:
    """New temperature from pre-detection set sizes.

    ``tau' = (kappa * sigmoid(ratio) + tau) / 2`` with the add-one smoothed
    ratio ``(|LN| + |HP| + 1) / (|HN| + |LP| + 1)``.
    """
    if not tau > 0:
        raise ValidationError(f"temperature must be positive, got {tau}")
    if isinstance(counts, PreDetectResult):
        counts = counts.counts()
    ratio = (counts["ln"] + counts["hp"] + 1) / (counts["hn"] + counts["lp"] + 1)
    return (kappa / (1.0 + math.exp(-ratio)) + tau) / 2.0


def should_defer(exp: OnlineExperience, cfg: DetectorConfig, c: float) -> bool:
    """Whether a fast prediction with confidence ``c`` goes to slow inference."""
    if not exp.warm or exp.w_std <= cfg.std_floor:
        return False
    return bool(normalize(exp, c, cfg.std_floor) < cfg.gamma_n)


def defer_mask(exp: OnlineExperience, cfg: DetectorConfig, conf: np.ndarray) -> np.ndarray:
    """Vectorized :func:`should_defer`."""
    conf = np.asarray(conf, dtype=np.float64)
    if not exp.warm or exp.w_std <= cfg.std_floor:
        return np.zeros(conf.shape, dtype=bool)
    return normalize(exp, conf, cfg.std_floor) < cfg.gamma_n
