"""Generalized Robbins formula: Bayes rules from a marginal pmf or a known prior."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import DleModel, Prior

__all__ = [
    "RatioFunctional",
    "BayesRule",
    "ratio_functional",
    "bayes_rule_from_marginal",
    "oracle_bayes",
    "marginal_pmf",
]


@dataclass
class RatioFunctional:
    """``w(y) = p(y-k) / p(y+1-k)`` tabulated on ``support``.

    ``defined`` is False where the denominator vanishes (or y < k).
    """

    k: int
    support: np.ndarray
    values: np.ndarray
    defined: np.ndarray

    def __call__(self, y):
        return self.values[np.searchsorted(self.support, y)]


@dataclass
class BayesRule:
    k: int
    support: np.ndarray
    values: np.ndarray
    defined: np.ndarray

    def __call__(self, y):
        idx = np.searchsorted(self.support, y)
        if np.any(idx >= self.support.size) or np.any(self.support[idx] != y):
            raise KeyError("count outside the tabulated support")
        return self.values[idx]


def _check_k(k):
    if k not in (0, 1):
        raise ValueError("loss index k must be 0 or 1")


def ratio_functional(p, k: int) -> RatioFunctional:
    """Shrinkage factor ``w_p^{(k)}(y) = p(y-k)/p(y+1-k)`` for ``y = 0..len(p)-1``.

    ``p[y]`` is the pmf at count ``y``; counts beyond the table have mass 0.
    """
    _check_k(k)
    p = np.asarray(p, dtype=float)
    y = np.arange(p.size)
    num = np.where(y - k >= 0, p[np.clip(y - k, 0, None)], 0.0)
    j = y + 1 - k
    den = np.where(j < p.size, p[np.clip(j, 0, p.size - 1)], 0.0)
    defined = (den > 0) & (y >= k)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(defined, num / np.where(den > 0, den, 1.0), np.nan)
    return RatioFunctional(k, y, w, defined)


def bayes_rule_from_marginal(model: DleModel, p, k: int) -> BayesRule:
    """Bayes rule ``(a_{y-k}/a_{y+1-k}) / w_p^{(k)}(y)``, 0 for y < k."""
    w = ratio_functional(p, k)
    y = w.support
    coef = model.coef_ratio(y, k)
    vals = np.full(y.size, np.nan)
    defined = w.defined & np.isfinite(coef)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals[defined] = coef[defined] / w.values[defined]
    below = y < k
    vals[below] = 0.0
    defined = defined | below
    return BayesRule(k, y, vals, defined)


def marginal_pmf(model, prior: Prior, ymax: int, nodes: int = 400) -> np.ndarray:
    """Marginal pmf ``p(y) = E_G p(y|theta)`` on ``0..ymax``."""
    atoms, weights = prior.atoms(nodes)
    y = np.arange(ymax + 1)
    lik = model.pmf(y[:, None], atoms[None, :])
    return lik @ weights


def oracle_bayes(model, prior: Prior, k: int, ymax: int | None = None, nodes: int = 400) -> BayesRule:
    """Posterior-expectation form of the Bayes rule under a known prior.

    ``delta(y) = E[p(y|theta) theta^(1-k)] / E[p(y|theta) theta^(-k)]``, with
    continuous priors discretized by Gauss-Legendre quadrature. Works for any
    likelihood with a ``pmf(y, theta)`` method, including model mixtures.
    """
    _check_k(k)
    atoms, weights = prior.atoms(nodes)
    if atoms.size == 0:
        raise ValueError("prior has empty support")
    if ymax is None:
        ymax = model.support_max(float(atoms.max()))
    y = np.arange(ymax + 1)
    # log-space weights keep the ratio stable far in the tails
    with np.errstate(divide="ignore"):
        loglik = np.log(model.pmf(y[:, None], atoms[None, :])) + np.log(weights)[None, :]
    lt = np.log(atoms)[None, :]
    num_log = loglik + (1 - k) * lt
    den_log = loglik - k * lt
    shift = np.max(den_log, axis=1, keepdims=True)
    finite = np.isfinite(shift[:, 0])
    shift = np.where(np.isfinite(shift), shift, 0.0)
    num = np.exp(num_log - shift).sum(axis=1)
    den = np.exp(den_log - shift).sum(axis=1)
    defined = finite & (den > 0)
    vals = np.full(y.size, np.nan)
    vals[defined] = num[defined] / den[defined]
    if k == 1:
        vals[0] = 0.0
        defined[0] = True
    return BayesRule(k, y, vals, defined)
