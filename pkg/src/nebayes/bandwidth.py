"""Asymptotic risk estimate (ARE) and bandwidth selection over a grid.

For a fitted rule ``delta`` the ARE is an unbiased estimate of the compound
risk in which every term involving the unknown theta is traded for a shifted
evaluation of ``delta``:

* k=1: ``E[f(Y)/theta] = E[f(Y+1) a_{Y+1}/a_Y]``
* k=0: ``E[f(Y) theta] = E[f(Y-1) a_{Y-1}/a_Y]``

The shifted count is often missing from the sample. There ``delta`` is read
off a natural cubic spline through the distinct counts, and beyond the
observed range off the secant through the two end points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import spline
from .estimator import Prepared, ShrinkageSolution, fit, prepare
from .models import Binomial, DleModel, Poisson
from .qp import QpOptions
from .risk import compound_loss

__all__ = ["AreCurve", "default_grid", "delta_at", "psi", "are", "select_lambda", "oracle_lambda"]


def default_grid(lo: float = 10.0, hi: float = 100.0, points: int = 10) -> np.ndarray:
    if not lo > 0 or points < 1 or (points > 1 and not hi > lo):
        raise ValueError("grid needs 0 < lo < hi and at least one point")
    return np.linspace(lo, hi, points) if points > 1 else np.array([float(lo)])


def delta_at(sol: ShrinkageSolution, x) -> np.ndarray:
    """The fitted rule at arbitrary counts ``x``.

    Observed counts are looked up; gaps use the natural spline; points
    outside the observed range use the secant through the nearest two
    distinct counts.
    """
    v = sol.values.astype(float)
    d = np.asarray(sol.delta_values, dtype=float)
    x = np.asarray(x, dtype=float)
    if v.size < 2:
        raise ValueError("need at least two distinct counts to interpolate the rule")
    fitd = spline.fit_natural_spline(v, d)
    out = np.asarray(spline.evaluate(fitd, x), dtype=float).copy()
    lo, hi = x < v[0], x > v[-1]
    s_lo = (d[1] - d[0]) / (v[1] - v[0])
    s_hi = (d[-1] - d[-2]) / (v[-1] - v[-2])
    out[lo] = d[0] + s_lo * (x[lo] - v[0])
    out[hi] = d[-1] + s_hi * (x[hi] - v[-1])
    idx = np.searchsorted(v, x)
    hit = (idx < v.size) & (v[np.minimum(idx, v.size - 1)] == x)
    out[hit] = d[idx[hit]]
    return out


def _upper(model: DleModel):
    return model.upper


def psi(sample, sol: ShrinkageSolution, k: int | None = None, model: DleModel | None = None) -> np.ndarray:
    """Per-coordinate shifted term of the ARE.

    k=1: ``delta(y+1)**2 / (y+1)``, and 0 at a Binomial ``y = m`` (the caller's
    ``m - y`` weight vanishes there anyway).
    k=0: ``delta(y-1)`` for Poisson, ``delta(y-1) / (m - y + 1)`` for Binomial.
    """
    y = np.asarray(getattr(sample, "y", sample), dtype=np.int64)
    model = model if model is not None else sample.model
    k = sol.k if k is None else k
    if k != sol.k:
        raise ValueError("loss index does not match the fitted solution")
    m = _upper(model)
    if k == 1:
        out = delta_at(sol, y + 1) ** 2 / (y + 1.0)
        if m is not None:
            out = np.where(y >= m, 0.0, out)
        return out
    out = np.where(y > 0, delta_at(sol, y - 1), 0.0)
    if m is not None:
        out = out / (m - y + 1.0)
    return out


def are(sample, sol: ShrinkageSolution, model: DleModel | None = None, k: int | None = None) -> float:
    """Asymptotic risk estimate of the fitted rule on its own sample."""
    y = np.asarray(getattr(sample, "y", sample), dtype=np.int64)
    model = model if model is not None else sample.model
    k = sol.k if k is None else k
    p = psi(y, sol, k, model)
    d = np.asarray(sol.delta, dtype=float)
    yf = y.astype(float)
    if isinstance(model, Poisson):
        if k == 1:
            terms = yf + p - 2.0 * d
        else:
            terms = yf * (yf - 1.0) - 2.0 * yf * p + d * d
    elif isinstance(model, Binomial):
        m = float(model.m)
        if k == 1:
            terms = yf / (m - yf + 1.0) + (m - yf) * p - 2.0 * d
        else:
            terms = yf * (yf - 1.0) / ((m - yf + 2.0) * (m - yf + 1.0)) - 2.0 * yf * p + d * d
    else:
        raise TypeError(f"no risk estimate for model {model!r}")
    return math.fsum(terms) / y.size


@dataclass
class AreCurve:
    grid: np.ndarray
    are: np.ndarray
    lam_hat: float
    index: int
    solutions: list = field(default_factory=list)
    losses: np.ndarray | None = None

    @property
    def solution(self) -> ShrinkageSolution:
        return self.solutions[self.index]

    @property
    def oracle_index(self) -> int:
        if self.losses is None:
            raise ValueError("no realized losses on this curve")
        return int(np.argmin(self.losses))

    @property
    def lam_oracle(self) -> float:
        return float(self.grid[self.oracle_index])


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(default_grid() if grid is None else grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("bandwidth grid is empty")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("bandwidth grid must be positive and strictly increasing")
    return grid


def _fit_grid(sample, model, k, grid, prepared, options, **kw):
    prep = prepared or prepare(sample, model, k, **kw)
    sols = []
    for lam in grid:
        try:
            sols.append(fit(None, lam=lam, prepared=prep, options=options))
        except Exception as exc:
            raise type(exc)(f"fit failed at lambda={lam:g}: {exc}") from exc
    return prep, sols


def select_lambda(sample, model: DleModel | None = None, k: int = 1, grid=None, *, theta=None,
                  prepared: Prepared | None = None, options: QpOptions | None = None, **kw) -> AreCurve:
    """Fit on every grid point and pick the ARE minimizer (first on ties).

    With ``theta`` the realized loss at each grid point is recorded too.
    """
    grid = _check_grid(grid)
    model = model if model is not None else getattr(sample, "model", None)
    prep, sols = _fit_grid(sample, model, k, grid, prepared, options, **kw)
    vals = np.array([are(prep.y, s, prep.model, prep.k) for s in sols])
    idx = int(np.argmin(vals))
    losses = None
    if theta is not None:
        losses = np.array([compound_loss(theta, s.delta, prep.k).compound for s in sols])
    return AreCurve(grid=grid, are=vals, lam_hat=float(grid[idx]), index=idx, solutions=sols, losses=losses)


def oracle_lambda(sample, model: DleModel | None = None, k: int = 1, grid=None, theta=None, *,
                  prepared: Prepared | None = None, options: QpOptions | None = None, **kw):
    """Grid bandwidth minimizing the realized loss against ``theta``."""
    if theta is None:
        raise ValueError("the oracle bandwidth needs the true theta")
    grid = _check_grid(grid)
    model = model if model is not None else getattr(sample, "model", None)
    prep, sols = _fit_grid(sample, model, k, grid, prepared, options, **kw)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != prep.y.shape:
        raise ValueError("theta must have one entry per observation")
    losses = np.array([compound_loss(theta, s.delta, prep.k).compound for s in sols])
    idx = int(np.argmin(losses))
    return float(grid[idx]), sols[idx]
