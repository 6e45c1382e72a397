"""RBF kernel, discrete Stein difference matrices and the KSD criteria.

Convention: ``K(y, y') = exp(-(y - y')**2 / (2 * lam))`` so ``lam`` acts as a
squared length scale. For the scaled loss (k=1) on a bounded support
``{0..m}`` the kernel is taken to vanish at the count ``m + 1``; with that
convention the Stein identity behind the criterion holds exactly at the upper
boundary. The plain kernel is used everywhere else.

The linear term of the criterion is ``2 h^T (dK^T v)`` where ``dK[i, j]``
differences the *first* argument at ``y_i``; this is the matrix form of the
pairwise kappa kernel (the difference acts on the point not carrying h).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "rbf",
    "KernelSystem",
    "build_kernel_system",
    "empirical_ksd",
    "kappa",
    "kappa_double_sum",
    "population_ksd",
    "population_ksd_kappa",
    "reduced_quadratic",
]


def rbf(y, y2, lam):
    """Gaussian kernel on counts, ``exp(-(y - y2)^2 / (2 lam))``."""
    if np.any(np.asarray(lam) <= 0):
        raise ValueError("bandwidth must be positive")
    d = np.subtract(y, y2, dtype=float)
    return np.exp(-(d * d) / (2.0 * lam))


def _kernel(u, v, lam, upper=None):
    """RBF kernel, zeroed when either argument exceeds ``upper``."""
    val = rbf(u, v, lam)
    if upper is not None:
        val = np.where((np.asarray(u) > upper) | (np.asarray(v) > upper), 0.0, val)
    return val


def _stein_terms(u, v, lam, k, upper=None):
    """Kernel pieces at pairs ``(u, v)``.

    Returns ``(K, D, D2)`` with ``K = K(u,v)``, ``D`` the first-argument
    difference paired with ``h(v)`` in kappa, and ``D2`` the mixed second
    difference; for k=0 the count weights ``u`` and ``u*v`` are *not*
    included here.
    """
    u = np.asarray(u)
    v = np.asarray(v)
    if k == 1:
        kf = lambda a, b: _kernel(a, b, lam, upper)
        K = kf(u, v)
        D = kf(u + 1, v) - K
        D2 = kf(u + 1, v + 1) - kf(u + 1, v) - kf(u, v + 1) + K
    elif k == 0:
        kf = lambda a, b: _kernel(a, b, lam)
        K = kf(u, v)
        D = kf(u + 1, v + 1) - kf(u, v + 1)
        D2 = kf(u + 1, v + 1) - kf(u + 1, v) - kf(u, v + 1) + K
    else:
        raise ValueError("loss index k must be 0 or 1")
    return K, D, D2


@dataclass
class KernelSystem:
    """Scaled kernel matrices of the empirical criterion for one sample.

    ``K``, ``dK`` and ``d2K`` are n x n and already carry the ``1/n^2`` factor.
    """

    k: int
    lam: float
    y: np.ndarray
    K: np.ndarray
    dK: np.ndarray
    d2K: np.ndarray
    upper: int | None = None

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def weight(self) -> np.ndarray:
        """The vector the difference matrices act on: ones (k=1) or y (k=0)."""
        return np.ones(self.n) if self.k == 1 else self.y.astype(float)


def build_kernel_system(y, lam: float, k: int, upper: int | None = None) -> KernelSystem:
    """Assemble the three n x n matrices from a table over observed gaps.

    ``upper`` is the support bound of the model (Binomial ``m``); it only
    matters for k=1.
    """
    if not lam > 0:
        raise ValueError("bandwidth must be positive")
    if k not in (0, 1):
        raise ValueError("loss index k must be 0 or 1")
    y = np.asarray(getattr(y, "y", y), dtype=np.int64)
    n = y.size
    if n < 2:
        raise ValueError("need at least two observations")
    vals, inv = np.unique(y, return_inverse=True)
    Kd, Dd, D2d = _stein_terms(vals[:, None], vals[None, :], lam, k, upper if k == 1 else None)
    scale = 1.0 / n**2
    sub = np.ix_(inv, inv)
    return KernelSystem(
        k=k,
        lam=float(lam),
        y=y,
        K=Kd[sub] * scale,
        dK=Dd[sub] * scale,
        d2K=D2d[sub] * scale,
        upper=upper if k == 1 else None,
    )


def empirical_ksd(sys: KernelSystem, h) -> float:
    """Empirical KSD ``h'Kh + 2 h'(dK' v) + v' d2K v`` with v = 1 (k=1) or y (k=0)."""
    h = np.asarray(h, dtype=float)
    if h.shape != (sys.n,):
        raise ValueError(f"h must have length {sys.n}")
    v = sys.weight
    return float(h @ sys.K @ h + 2.0 * h @ (sys.dK.T @ v) + v @ sys.d2K @ v)


def kappa(hu, hv, u, v, lam, k, upper=None):
    """Stein kernel ``kappa_lam[h](u, v)`` written term by term.

    k=1: ``h(u)h(v)K(u,v) + h(u) D_v K(u,v) + h(v) D_u K(u,v) + D_uv K(u,v)``.
    k=0: ``h(u)h(v)K(u,v) + h(u) v D_v K(u+1,v) + h(v) u D_u K(u,v+1) + uv D_uv K(u,v)``.
    """
    if k == 1:
        kf = lambda a, b: _kernel(a, b, lam, upper)
        return (
            hu * hv * kf(u, v)
            + hu * (kf(u, v + 1) - kf(u, v))
            + hv * (kf(u + 1, v) - kf(u, v))
            + (kf(u + 1, v + 1) - kf(u + 1, v) - kf(u, v + 1) + kf(u, v))
        )
    kf = lambda a, b: _kernel(a, b, lam)
    return (
        hu * hv * kf(u, v)
        + hu * v * (kf(u + 1, v + 1) - kf(u + 1, v))
        + hv * u * (kf(u + 1, v + 1) - kf(u, v + 1))
        + u * v * (kf(u + 1, v + 1) - kf(u + 1, v) - kf(u, v + 1) + kf(u, v))
    )


def kappa_double_sum(y, h, lam, k, upper=None) -> float:
    """``n^-2 sum_i sum_j kappa(y_i, y_j)`` by an explicit double loop."""
    y = [int(v) for v in np.asarray(y)]
    h = [float(v) for v in np.asarray(h)]
    n = len(y)
    total = 0.0
    for i in range(n):
        for j in range(n):
            total += float(kappa(h[i], h[j], y[i], y[j], lam, k, upper))
    return total / n**2


def population_ksd(p, h_tilde, h0, lam) -> float:
    """Difference form ``sum_u sum_v (h~-h0)(u) K(u,v) (h~-h0)(v) p(u) p(v)``.

    ``p``, ``h_tilde`` and ``h0`` are tables over ``0..len(p)-1`` (or callables).
    """
    p = np.asarray(p, dtype=float)
    u = np.arange(p.size)
    ht = np.asarray(h_tilde(u) if callable(h_tilde) else h_tilde, dtype=float)
    hz = np.asarray(h0(u) if callable(h0) else h0, dtype=float)
    g = (ht - hz) * p
    return float(g @ rbf(u[:, None], u[None, :], lam) @ g)


def population_ksd_kappa(p, h_tilde, lam, k, upper=None) -> float:
    """kappa form ``sum_u sum_v kappa[h~](u, v) p(u) p(v)``, free of the true h0."""
    p = np.asarray(p, dtype=float)
    u = np.arange(p.size)
    ht = np.asarray(h_tilde(u) if callable(h_tilde) else h_tilde, dtype=float)
    kap = kappa(ht[:, None], ht[None, :], u[:, None], u[None, :], lam, k, upper)
    return float(p @ kap @ p)


def reduced_quadratic(values, counts, lam, k, upper=None):
    """Criterion restricted to one unknown per distinct count.

    With ``h_i = g[d(i)]`` the empirical KSD equals ``g'Qg + 2 c'g + const``.
    Returns ``(Q, c, const)``; Q is D x D and symmetric.
    """
    values = np.asarray(values, dtype=np.int64)
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    Kd, Dd, D2d = _stein_terms(values[:, None], values[None, :], lam, k, upper if k == 1 else None)
    wt = counts / n
    v = np.ones(values.size) if k == 1 else values.astype(float)
    Q = wt[:, None] * Kd * wt[None, :]
    # sum_i sum_j h_j dK[i, j] v_i  ->  per distinct b: w_b * sum_a w_a v_a D[a, b]
    c = wt * (Dd.T @ (wt * v))
    const = (wt * v) @ D2d @ (wt * v)
    return 0.5 * (Q + Q.T), c, float(const)
