"""Losses, compound losses, the Robbins plug-in rule and Monte-Carlo risk."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .models import CountSample, DleModel

__all__ = [
    "loss",
    "compound_loss",
    "LossReport",
    "RobbinsRule",
    "robbins_plugin",
    "RiskEstimate",
    "mc_risk",
    "risk_ratio",
]


def loss(theta, delta, k: int):
    """Scaled squared error ``theta**(-k) * (theta - delta)**2``."""
    if k not in (0, 1):
        raise ValueError("loss index k must be 0 or 1")
    theta = np.asarray(theta, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if np.any(~(theta > 0)):
        raise ValueError("theta must be positive")
    out = (theta - delta) ** 2
    if k == 1:
        out = out / theta
    return out if out.ndim else float(out)


@dataclass
class LossReport:
    k: int
    losses: np.ndarray
    compound: float
    label: str = ""


def compound_loss(theta, delta, k: int, label: str = "") -> LossReport:
    theta = np.asarray(theta, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if theta.shape != delta.shape:
        raise ValueError(f"length mismatch: theta {theta.shape} vs delta {delta.shape}")
    per = np.atleast_1d(loss(theta, delta, k))
    return LossReport(k=k, losses=per, compound=math.fsum(per) / per.size, label=label)


@dataclass
class RobbinsRule:
    delta: np.ndarray  # per coordinate
    undefined: np.ndarray  # numerator count was zero, delta set to 0


def robbins_plugin(sample, model: DleModel | None = None, k: int = 1) -> RobbinsRule:
    """Empirical-frequency plug-in of the generalized Robbins formula.

    ``delta(y) = (a_{y-k}/a_{y+1-k}) * N(y+1-k) / N(y-k)`` for y >= k and 0
    below. A zero numerator count gives 0 with an ``undefined`` flag.
    """
    if k not in (0, 1):
        raise ValueError("loss index k must be 0 or 1")
    y = np.asarray(getattr(sample, "y", sample), dtype=np.int64)
    model = model if model is not None else sample.model
    if y.size < 1:
        raise ValueError("empty sample")
    freq = np.bincount(y, minlength=int(y.max()) + 2).astype(float)
    num_idx = y + 1 - k
    den_idx = y - k
    ok = den_idx >= 0
    num = freq[np.clip(num_idx, 0, freq.size - 1)]
    den = np.where(ok, freq[np.clip(den_idx, 0, freq.size - 1)], 0.0)
    coef = model.coef_ratio(y, k)
    delta = np.zeros(y.size)
    undefined = ok & (num == 0)
    good = ok & (num > 0) & (den > 0) & np.isfinite(coef)
    delta[good] = coef[good] * num[good] / den[good]
    return RobbinsRule(delta=delta, undefined=undefined)


@dataclass
class RiskEstimate:
    mean: float
    se: float
    reps: int
    failures: int = 0
    per_rep: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _seeds(seed: int, reps: int):
    return [int(s.generate_state(1, dtype=np.uint32)[0]) for s in np.random.SeedSequence(seed).spawn(reps)]


def mc_risk(estimator: Callable, draw: Callable, n: int, reps: int, seed: int, k: int) -> RiskEstimate:
    """Monte-Carlo compound risk.

    ``draw(n, seed) -> (theta, sample)`` generates one replicate and
    ``estimator(sample, theta) -> delta`` fits on it. Per-rep seeds are
    spawned from ``seed``; failed reps are counted and skipped.
    """
    if reps < 2:
        raise ValueError("need at least two repetitions")
    vals, failures = [], 0
    for s in _seeds(seed, reps):
        theta, sample = draw(n, s)
        try:
            delta = estimator(sample, theta)
        except (ValueError, RuntimeError, np.linalg.LinAlgError):
            failures += 1
            vals.append(np.nan)
            continue
        vals.append(compound_loss(theta, delta, k).compound)
    return summarize(np.asarray(vals), failures)


def summarize(vals, failures: int = 0) -> RiskEstimate:
    vals = np.asarray(vals, dtype=float)
    ok = vals[np.isfinite(vals)]
    if ok.size == 0:
        return RiskEstimate(math.nan, math.nan, vals.size, failures, vals)
    mean = math.fsum(ok) / ok.size
    se = math.sqrt(math.fsum((ok - mean) ** 2) / (ok.size - 1) / ok.size) if ok.size > 1 else math.nan
    return RiskEstimate(mean, se, vals.size, failures, vals)


def risk_ratio(num: RiskEstimate, den: RiskEstimate) -> float:
    return num.mean / den.mean if den.mean > 0 else math.nan
