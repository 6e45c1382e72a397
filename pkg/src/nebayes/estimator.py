"""NEB shrinkage estimator: minimize the empirical KSD over the constraint set."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import constraints as cons
from .models import CountSample, DleModel
from .qp import QpOptions, QpProblem, QpSolution, solve
from .stein_kernel import reduced_quadratic

logger = logging.getLogger(__name__)

__all__ = ["ShrinkageSolution", "InfeasibleError", "fit", "prepare", "h0_from_pmf", "w_from_h"]

# relative ridge on the reduced Hessian; K is rank deficient for wide kernels
DIAG_REG = 1e-10


class InfeasibleError(RuntimeError):
    def __init__(self, msg, labels=()):
        super().__init__(msg)
        self.labels = list(labels)


@dataclass
class ShrinkageSolution:
    lam: float
    k: int
    y: np.ndarray
    h: np.ndarray
    w: np.ndarray
    delta: np.ndarray
    flags: np.ndarray
    values: np.ndarray  # distinct counts
    delta_values: np.ndarray  # delta at each distinct count
    objective: float
    diagnostics: QpSolution | None = None
    status: str = "optimal"

    @property
    def n(self):
        return self.y.size


@dataclass
class Prepared:
    """Data-dependent pieces shared by fits across bandwidths."""

    y: np.ndarray
    model: DleModel
    k: int
    values: np.ndarray
    counts: np.ndarray
    cset: cons.ConstraintSet
    upper: int | None = None
    eps: float = cons.DEFAULT_EPS
    monotone: bool = True
    fixed: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))


def prepare(sample, model: DleModel | None = None, k: int = 1, eps: float = cons.DEFAULT_EPS, monotone: bool = True) -> Prepared:
    if isinstance(sample, CountSample):
        model = model or sample.model
        y = sample.y
    else:
        if model is None:
            raise ValueError("model is required when passing raw counts")
        y = CountSample(np.asarray(sample), model).y
    if k not in (0, 1):
        raise ValueError("loss index k must be 0 or 1")
    cset = cons.build(y, model, k, eps=eps, monotone=monotone)
    counts = np.bincount(cset.inverse, minlength=cset.values.size)
    return Prepared(y, model, k, cset.values, counts, cset, model.upper, eps, monotone)


def w_from_h(h, y, k):
    h = np.asarray(h, dtype=float)
    y = np.asarray(y, dtype=float)
    if k == 1:
        return 1.0 - h
    return (y + 1.0) / (y + h)


def _delta_from_h(prep: Prepared, g):
    """Decision rule at each distinct count from the reduced solution ``g``."""
    v = prep.values
    coef = cons.decision_rule_coefficients(prep.model, v, prep.k)
    delta = np.zeros(v.size)
    flags = np.array([""] * v.size, dtype=object)
    if prep.k == 1:
        pos = v > 0
        delta[pos] = coef[pos] / (1.0 - g[pos])
        flags[~pos] = "boundary-zero"
    else:
        ok = np.isfinite(coef)
        delta[ok] = coef[ok] * (v[ok] + g[ok])
        bad = np.flatnonzero(~ok)
        if bad.size:
            good = np.flatnonzero(ok)
            if good.size == 0:
                raise ValueError("every count sits at the support bound; the rule is undefined")
            if good.size == 1:
                ext = delta[good[-1]]
            else:
                y1, y2 = v[good[-2]], v[good[-1]]
                d1, d2 = delta[good[-2]], delta[good[-1]]
                slope = (d2 - d1) / (y2 - y1)
            for j in bad:
                if good.size > 1:
                    ext = max(d2 + slope * (v[j] - y2), d2)
                delta[j] = ext
                flags[j] = "extrapolated"
    return delta, flags


def fit(sample, model: DleModel | None = None, k: int = 1, lam: float = 10.0, *, eps: float = cons.DEFAULT_EPS,
        monotone: bool = True, prepared: Prepared | None = None, options: QpOptions | None = None) -> ShrinkageSolution:
    """Fit the NEB rule at a fixed bandwidth.

    Raises :class:`InfeasibleError` if the constraint set is empty. A solver
    that hits its iteration cap still returns a solution, with
    ``status="max-iter"`` and a logged warning.
    """
    if not lam > 0:
        raise ValueError("bandwidth must be positive")
    prep = prepared or prepare(sample, model, k, eps=eps, monotone=monotone)
    cs = prep.cset
    Q, c, const = reduced_quadratic(prep.values, prep.counts, lam, prep.k, prep.upper)
    opts = options or QpOptions(diag_reg=DIAG_REG)
    qp = QpProblem(2.0 * Q, 2.0 * c, cs.A_red, cs.b_red, cs.C_red, cs.d_red)
    sol = solve(qp, opts)
    if sol.status == "infeasible":
        raise InfeasibleError("constraint set is empty", sorted(set(cs.ineq_labels_red + cs.eq_labels_red)))
    if sol.status != "optimal":
        logger.warning("NEB fit at lambda=%g ended with solver status %s", lam, sol.status)
    g = sol.x
    delta_v, flags_v = _delta_from_h(prep, g)
    h = g[cs.inverse]
    y = prep.y
    objective = float(g @ Q @ g + 2.0 * c @ g + const)
    return ShrinkageSolution(
        lam=float(lam),
        k=prep.k,
        y=y,
        h=h,
        w=w_from_h(h, y, prep.k),
        delta=delta_v[cs.inverse],
        flags=flags_v[cs.inverse],
        values=prep.values,
        delta_values=delta_v,
        objective=objective,
        diagnostics=sol,
        status=sol.status,
    )


def h0_from_pmf(p, k: int, support=None) -> np.ndarray:
    """True ratio functional from a pmf table ``p[y]``, evaluated on ``support``.

    k=1: 1 at y=0 and ``1 - p(y-1)/p(y)`` otherwise.
    k=0: ``(y+1) p(y+1)/p(y) - y``. NaN where p(y) = 0.
    """
    p = np.asarray(p, dtype=float)
    y = np.arange(p.size) if support is None else np.asarray(support, dtype=np.int64)
    py = np.where(y < p.size, p[np.clip(y, 0, p.size - 1)], 0.0)
    out = np.full(y.shape, np.nan)
    ok = py > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        if k == 1:
            prev = np.where(y >= 1, p[np.clip(y - 1, 0, p.size - 1)], 0.0)
            out[ok] = 1.0 - prev[ok] / py[ok]
            out[y == 0] = 1.0
        elif k == 0:
            nxt = np.where(y + 1 < p.size, p[np.clip(y + 1, 0, p.size - 1)], 0.0)
            out[ok] = (y[ok] + 1) * nxt[ok] / py[ok] - y[ok]
        else:
            raise ValueError("loss index k must be 0 or 1")
    return out
