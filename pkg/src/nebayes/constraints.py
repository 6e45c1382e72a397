"""Linear structural constraints on the ratio functional h.

Four families, each row labelled:

* ``tie``        h_i = h_j whenever y_i = y_j
* ``boundary``   h_i = 1 at y_i = 0 under the scaled loss (so delta = 0 there)
* ``positivity`` 1 - h > eps (k=1) or y + h > eps (k=0)
* ``monotone``   the implied decision rule is nondecreasing in y

Rows are produced both on the full n-vector (sparse, the public form) and on
one unknown per distinct count (dense, what the solver sees).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .models import DleModel

__all__ = ["ConstraintSet", "build", "decision_rule_coefficients", "DEFAULT_EPS"]

DEFAULT_EPS = 1e-6


@dataclass
class ConstraintSet:
    """Constraints ``A h <= b``, ``C h = d`` with per-row provenance labels.

    ``A``/``C`` act on the full n-vector; ``A_red``/``C_red`` act on the
    vector of one value per distinct count ``values``.
    """

    A: sparse.csr_matrix
    b: np.ndarray
    C: sparse.csr_matrix
    d: np.ndarray
    ineq_labels: list
    eq_labels: list
    values: np.ndarray
    inverse: np.ndarray
    A_red: np.ndarray
    b_red: np.ndarray
    C_red: np.ndarray
    d_red: np.ndarray
    ineq_labels_red: list
    eq_labels_red: list
    excluded: np.ndarray  # distinct counts left out of monotone rows

    def expand(self, g) -> np.ndarray:
        return np.asarray(g)[self.inverse]

    def violation(self, h) -> float:
        """Largest violation of any row at the full vector ``h``."""
        h = np.asarray(h, dtype=float)
        v = 0.0
        if self.A.shape[0]:
            v = max(v, float(np.max(self.A @ h - self.b)))
        if self.C.shape[0]:
            v = max(v, float(np.max(np.abs(self.C @ h - self.d))))
        return v


def decision_rule_coefficients(model: DleModel, y, k: int):
    """Coefficients of the decision rule implied by h at counts ``y``.

    k=1: ``delta = r / (1 - h)`` with ``r = a_{y-1}/a_y`` (0 at y = 0).
    k=0: ``delta = s * (y + h)`` with ``s = a_y / ((y+1) a_{y+1})``; ``s`` is
    ``inf`` where ``a_{y+1} = 0`` (Binomial y = m).
    """
    y = np.asarray(y)
    if k == 1:
        return model.coef_ratio(y, 1)
    with np.errstate(divide="ignore"):
        return model.coef_ratio(y, 0) / (y + 1.0)


def build(sample, model: DleModel | None = None, k: int = 1, eps: float = DEFAULT_EPS, monotone: bool = True) -> ConstraintSet:
    """Constraint rows for the NEB program on ``sample``.

    ``sample`` is a :class:`CountSample` or an integer vector (then ``model``
    is required).
    """
    if k not in (0, 1):
        raise ValueError("loss index k must be 0 or 1")
    if not eps > 0:
        raise ValueError("positivity margin must be positive")
    y = np.asarray(getattr(sample, "y", sample), dtype=np.int64)
    model = model if model is not None else sample.model
    n = y.size
    values, first, inverse = np.unique(y, return_index=True, return_inverse=True)
    D = values.size

    red_A, red_b, red_lab = [], [], []
    red_C, red_d, red_elab = [], [], []
    # full-form rows as (cols, coefs, rhs, label)
    full_ineq, full_eq = [], []

    members = [np.flatnonzero(inverse == a) for a in range(D)]

    def add(red_M, red_v, red_l, full, coefs_by_distinct: dict, rhs, label, per_member=False):
        row = np.zeros(D)
        for a, cval in coefs_by_distinct.items():
            row[a] += cval
        red_M.append(row)
        red_v.append(rhs)
        red_l.append(label)
        if per_member:
            # single-variable rows are repeated for every coordinate in the group
            (a, cval), = coefs_by_distinct.items()
            full.extend(([int(i)], [cval], rhs, label) for i in members[a])
        else:
            cols = [int(first[a]) for a in coefs_by_distinct]
            full.append((cols, list(coefs_by_distinct.values()), rhs, label))

    def ineq(coefs_by_distinct, rhs, label, per_member=False):
        add(red_A, red_b, red_lab, full_ineq, coefs_by_distinct, rhs, label, per_member)

    def eq(coefs_by_distinct, rhs, label, per_member=False):
        add(red_C, red_d, red_elab, full_eq, coefs_by_distinct, rhs, label, per_member)

    # ties: chain each group to its first member (full form only)
    order = np.argsort(inverse, kind="stable")
    for pos in range(1, n):
        i_prev, i = order[pos - 1], order[pos]
        if inverse[i] == inverse[i_prev]:
            full_eq.append(([int(first[inverse[i]]), int(i)], [1.0, -1.0], 0.0, "tie"))

    coef = decision_rule_coefficients(model, values, k)
    excluded = np.zeros(D, dtype=bool)
    if k == 1:
        for a in range(D):
            if values[a] == 0:
                eq({a: 1.0}, 1.0, "boundary")
            else:
                ineq({a: 1.0}, 1.0 - eps, "positivity", per_member=True)
        if monotone:
            # r_b h_a - r_a h_b <= r_b - r_a  <=>  r_a/(1-h_a) <= r_b/(1-h_b)
            for a in range(D - 1):
                b_ = a + 1
                ra, rb = float(coef[a]), float(coef[b_])
                ineq({a: rb, b_: -ra}, rb - ra, "monotone")
    else:
        for a in range(D):
            ineq({a: -1.0}, float(values[a]) - eps, "positivity", per_member=True)
        excluded = ~np.isfinite(coef)
        if monotone:
            # s_a (y_a + h_a) <= s_b (y_b + h_b)
            keep = np.flatnonzero(~excluded)
            for a, b_ in zip(keep[:-1], keep[1:]):
                sa, sb = float(coef[a]), float(coef[b_])
                ineq({a: sa, b_: -sb}, sb * values[b_] - sa * values[a], "monotone")

    def to_sparse(rows):
        if not rows:
            return sparse.csr_matrix((0, n)), np.zeros(0), []
        data, ri, ci, rhs, labs = [], [], [], [], []
        for r, (cols, vals, rv, lab) in enumerate(rows):
            ri.extend([r] * len(cols))
            ci.extend(cols)
            data.extend(vals)
            rhs.append(rv)
            labs.append(lab)
        M = sparse.csr_matrix((data, (ri, ci)), shape=(len(rows), n))
        return M, np.asarray(rhs, dtype=float), labs

    A, b, il = to_sparse(full_ineq)
    C, d, el = to_sparse(full_eq)
    return ConstraintSet(
        A=A,
        b=b,
        C=C,
        d=d,
        ineq_labels=il,
        eq_labels=el,
        values=values,
        inverse=inverse,
        A_red=np.array(red_A).reshape(-1, D),
        b_red=np.asarray(red_b, dtype=float),
        C_red=np.array(red_C).reshape(-1, D),
        d_red=np.asarray(red_d, dtype=float),
        ineq_labels_red=red_lab,
        eq_labels_red=red_elab,
        excluded=excluded,
    )
