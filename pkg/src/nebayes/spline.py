"""Natural cubic spline with linear extrapolation beyond the end knots."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

__all__ = ["SplineFit", "fit_natural_spline", "evaluate", "derivative"]


@dataclass
class SplineFit:
    knots: np.ndarray
    values: np.ndarray
    second_derivs: np.ndarray
    _cs: CubicSpline

    @property
    def left_slope(self) -> float:
        return float(self._cs(self.knots[0], 1))

    @property
    def right_slope(self) -> float:
        return float(self._cs(self.knots[-1], 1))


def fit_natural_spline(knots, values) -> SplineFit:
    knots = np.asarray(knots, dtype=float)
    values = np.asarray(values, dtype=float)
    if knots.ndim != 1 or knots.size != values.size:
        raise ValueError("knots and values must be 1-D of equal length")
    if knots.size < 2:
        raise ValueError("need at least two knots")
    if np.any(np.diff(knots) <= 0):
        raise ValueError("knots must be strictly increasing (no duplicates)")
    cs = CubicSpline(knots, values, bc_type="natural", extrapolate=True)
    return SplineFit(knots, values, cs(knots, 2), cs)


def evaluate(fit: SplineFit, x):
    """Spline inside ``[knots[0], knots[-1]]``; straight lines with the end
    slopes outside."""
    x = np.asarray(x, dtype=float)
    out = np.asarray(fit._cs(np.clip(x, fit.knots[0], fit.knots[-1])), dtype=float)
    lo = x < fit.knots[0]
    hi = x > fit.knots[-1]
    out = np.where(lo, fit.values[0] + fit.left_slope * (x - fit.knots[0]), out)
    out = np.where(hi, fit.values[-1] + fit.right_slope * (x - fit.knots[-1]), out)
    return out if out.ndim else float(out)


def derivative(fit: SplineFit, x):
    x = np.asarray(x, dtype=float)
    out = np.asarray(fit._cs(np.clip(x, fit.knots[0], fit.knots[-1]), 1), dtype=float)
    out = np.where(x < fit.knots[0], fit.left_slope, out)
    out = np.where(x > fit.knots[-1], fit.right_slope, out)
    return out if out.ndim else float(out)
