"""Discrete linear exponential (power series) family members, priors and samplers.

A member has pmf ``a_y * theta**y / g(theta)`` on the nonnegative integers
(or on ``{0..m}``). Everything downstream only needs ``log_a`` and the support
bound, so adding another member is a matter of supplying those two.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special, stats

__all__ = [
    "DleModel",
    "Poisson",
    "Binomial",
    "ConwayMaxwellPoisson",
    "ModelMixture",
    "CountSample",
    "PointMass",
    "Uniform",
    "Gamma",
    "BetaOdds",
    "ChiSquare",
    "Mixture",
    "EquispacedGrid",
    "pmf",
    "sample_theta",
    "sample_counts",
    "odds_from_prob",
]

# CMP normalizer truncation
CMP_REL_TOL = 1e-16
CMP_MAX_TERMS = 10_000


def odds_from_prob(q):
    q = np.asarray(q, dtype=float)
    if np.any((q <= 0) | (q >= 1)):
        raise ValueError("success probability must lie strictly inside (0, 1)")
    return q / (1.0 - q)


def _check_theta(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if np.any(~np.isfinite(theta)) or np.any(theta <= 0):
        raise ValueError("theta must be finite and strictly positive")
    return theta


class DleModel:
    """Base class for a member of the discrete linear exponential family.

    Subclasses define :meth:`log_a`, :meth:`log_g` and ``upper`` (the largest
    count in the support, ``None`` when unbounded).
    """

    name: str = "dle"
    upper: int | None = None

    def log_a(self, y) -> np.ndarray:
        raise NotImplementedError

    def log_g(self, theta) -> np.ndarray:
        raise NotImplementedError

    def a(self, y) -> np.ndarray:
        """Coefficients ``a_y``; zero outside the support (including y < 0)."""
        y = np.asarray(y)
        out = np.zeros(y.shape, dtype=float)
        ok = self.in_support(y)
        out[ok] = np.exp(self.log_a(y[ok]))
        return out

    def in_support(self, y) -> np.ndarray:
        y = np.asarray(y)
        ok = y >= 0
        if self.upper is not None:
            ok &= y <= self.upper
        return ok

    def coef_ratio(self, y, k: int) -> np.ndarray:
        """``a_{y-k} / a_{y+1-k}``: the naive estimate of theta in the Bayes rule.

        Returns 0 where the numerator coefficient is 0 and ``inf`` where only
        the denominator vanishes.
        """
        y = np.asarray(y)
        num = self.a(y - k)
        den = self.a(y + 1 - k)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.inf)
        return np.where(num > 0, r, 0.0)

    def logpmf(self, y, theta) -> np.ndarray:
        y = np.asarray(y)
        theta = _check_theta(theta)
        log_g = np.asarray(self.log_g(theta), dtype=float).reshape(theta.shape)
        y_b, theta_b, lg_b = np.broadcast_arrays(y, theta, log_g)
        out = np.full(y_b.shape, -np.inf)
        ok = self.in_support(y_b)
        out[ok] = self.log_a(y_b[ok]) + y_b[ok] * np.log(theta_b[ok]) - lg_b[ok]
        return out

    def pmf(self, y, theta) -> np.ndarray:
        return np.exp(self.logpmf(y, theta))

    def support_max(self, theta_max: float, tail: float = 1e-12) -> int:
        """Largest count needed so that mass above it is below ``tail`` for every
        theta up to ``theta_max`` (all members are stochastically increasing)."""
        if self.upper is not None:
            return self.upper
        lg = float(np.asarray(self.log_g(np.asarray([theta_max], dtype=float))).ravel()[0])
        lt = np.log(theta_max)
        cum, y0, block = 0.0, 0, 1024
        while y0 <= 100_000:
            y = np.arange(y0, y0 + block)
            c = cum + np.cumsum(np.exp(self.log_a(y) + y * lt - lg))
            hit = np.flatnonzero(1.0 - c < tail)
            if hit.size:
                return int(y[hit[0]])
            cum, y0 = float(c[-1]), y0 + block
        return 100_001

    def sample(self, theta, rng: np.random.Generator) -> np.ndarray:
        """Inversion against a truncated pmf table. Subclasses override when a
        faster exact sampler exists."""
        theta = _check_theta(theta)
        ymax = self.support_max(float(theta.max()), tail=1e-15) + 1
        grid = np.arange(ymax + 1)
        out = np.empty(theta.shape, dtype=np.int64)
        u = rng.random(theta.shape)
        flat_t, flat_u, flat_o = theta.ravel(), u.ravel(), out.reshape(-1)
        chunk = max(1, 2_000_000 // (ymax + 1))
        for s in range(0, flat_t.size, chunk):
            t = flat_t[s:s + chunk]
            cdf = np.cumsum(self.pmf(grid[None, :], t[:, None]), axis=1)
            cdf /= cdf[:, -1:]
            flat_o[s:s + chunk] = (cdf < flat_u[s:s + chunk, None]).sum(axis=1)
        return np.minimum(out, ymax)

    def to_dict(self) -> dict:
        raise NotImplementedError

    def __eq__(self, other):
        return type(self) is type(other) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(tuple(sorted(self.to_dict().items())))

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.to_dict().items() if k != "family")
        return f"{type(self).__name__}({args})"


class Poisson(DleModel):
    name = "poisson"

    def log_a(self, y):
        return -special.gammaln(np.asarray(y, dtype=float) + 1.0)

    def log_g(self, theta):
        return np.asarray(theta, dtype=float)

    def sample(self, theta, rng):
        return rng.poisson(_check_theta(theta)).astype(np.int64)

    def to_dict(self):
        return {"family": "poisson"}


class Binomial(DleModel):
    """Binomial(m, q) parameterized by the odds ``theta = q / (1 - q)``."""

    name = "binomial"

    def __init__(self, m: int):
        if int(m) != m or m < 1:
            raise ValueError("Binomial trial count m must be a positive integer")
        self.m = int(m)
        self.upper = self.m

    def log_a(self, y):
        y = np.asarray(y, dtype=float)
        return special.gammaln(self.m + 1.0) - special.gammaln(y + 1.0) - special.gammaln(self.m - y + 1.0)

    def log_g(self, theta):
        return self.m * np.log1p(np.asarray(theta, dtype=float))

    def pmf_q(self, y, q):
        """pmf in the usual success-probability parameterization."""
        return self.pmf(y, odds_from_prob(q))

    def sample(self, theta, rng):
        theta = _check_theta(theta)
        return rng.binomial(self.m, theta / (1.0 + theta)).astype(np.int64)

    def to_dict(self):
        return {"family": "binomial", "m": self.m}


class ConwayMaxwellPoisson(DleModel):
    """CMP(theta, nu) with ``a_y = (y!)^-nu``; nu < 1 gives heavier tails than Poisson."""

    name = "cmp"

    def __init__(self, nu: float):
        if not nu > 0:
            raise ValueError("CMP dispersion nu must be positive")
        self.nu = float(nu)

    def log_a(self, y):
        return -self.nu * special.gammaln(np.asarray(y, dtype=float) + 1.0)

    def log_g(self, theta):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        out = np.array([self._log_normalizer(t) for t in theta.ravel()])
        return out.reshape(theta.shape)

    def _log_normalizer(self, theta: float) -> float:
        lt = np.log(theta)
        mode = theta ** (1.0 / self.nu)
        total = -np.inf
        j0, block = 0, 256
        while j0 < CMP_MAX_TERMS:
            j = np.arange(j0, min(j0 + block, CMP_MAX_TERMS), dtype=float)
            logt = j * lt - self.nu * special.gammaln(j + 1.0)
            total = np.logaddexp(total, special.logsumexp(logt))
            if j[-1] > mode and logt[-1] - total < np.log(CMP_REL_TOL):
                break
            j0 += block
        return float(total)

    def to_dict(self):
        return {"family": "cmp", "nu": self.nu}


class ModelMixture:
    """Per-coordinate mixture of sampling models, e.g. ``0.8 Poi + 0.2 CMP``.

    Not a DLE member; used to generate (mis-specified) data and as the true
    likelihood inside oracle Bayes rules.
    """

    name = "mixture"

    def __init__(self, models: Sequence[DleModel], weights: Sequence[float]):
        w = np.asarray(weights, dtype=float)
        if len(models) != w.size or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        self.models = list(models)
        self.weights = w
        uppers = [m.upper for m in self.models]
        self.upper = None if any(u is None for u in uppers) else max(uppers)

    def in_support(self, y):
        return np.logical_or.reduce([m.in_support(y) for m in self.models])

    def pmf(self, y, theta):
        return sum(w * m.pmf(y, theta) for w, m in zip(self.weights, self.models))

    def support_max(self, theta_max, tail=1e-12):
        return max(m.support_max(theta_max, tail) for m in self.models)

    def sample(self, theta, rng):
        theta = _check_theta(theta)
        which = rng.choice(len(self.models), size=theta.shape, p=self.weights)
        out = np.empty(theta.shape, dtype=np.int64)
        for idx, model in enumerate(self.models):
            sel = which == idx
            if np.any(sel):
                out[sel] = model.sample(theta[sel], rng)
        return out

    def to_dict(self):
        return {
            "family": "mixture",
            "models": [m.to_dict() for m in self.models],
            "weights": self.weights.tolist(),
        }

    def __repr__(self):
        return f"ModelMixture({self.models!r}, {self.weights.tolist()!r})"


def model_from_dict(d: dict):
    fam = d["family"]
    if fam == "poisson":
        return Poisson()
    if fam == "binomial":
        return Binomial(int(d["m"]))
    if fam == "cmp":
        return ConwayMaxwellPoisson(float(d["nu"]))
    if fam == "mixture":
        return ModelMixture([model_from_dict(x) for x in d["models"]], d["weights"])
    raise ValueError(f"unknown model family {fam!r}")


def pmf(model, y, theta):
    """Point probability ``a_y theta^y / g(theta)``.

    Raises ``ValueError`` for counts outside the support or theta <= 0.
    """
    if not np.all(model.in_support(np.asarray(y))):
        raise ValueError(f"count {y!r} outside the support of {model!r}")
    return model.pmf(y, theta)


@dataclass
class CountSample:
    """Observed counts together with the model they are assumed to follow."""

    y: np.ndarray
    model: DleModel = field(default_factory=Poisson)

    def __post_init__(self):
        y = np.asarray(self.y)
        if y.ndim != 1:
            raise ValueError("counts must be a 1-D vector")
        if y.size < 2:
            raise ValueError("at least two observations are required")
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("counts must be integers")
        y = y.astype(np.int64)
        if not np.all(self.model.in_support(y)):
            raise ValueError(f"counts outside the support of {self.model!r}")
        self.y = y

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def m(self) -> int | None:
        return getattr(self.model, "m", None)


# ---------------------------------------------------------------------------
# Priors on theta
# ---------------------------------------------------------------------------


class Prior:
    """A distribution over theta > 0."""

    #: continuous components contribute quadrature nodes in :meth:`atoms`
    discrete: bool = False

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def atoms(self, nodes: int = 400, tail: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
        """Finite weighted support representing the prior for exact oracle sums."""
        raise NotImplementedError

    def mean(self) -> float:
        a, w = self.atoms()
        return float(np.dot(a, w))

    def to_dict(self) -> dict:
        raise NotImplementedError

    def __eq__(self, other):
        return type(self) is type(other) and self.to_dict() == other.to_dict()


def _legendre_on(lo: float, hi: float, nodes: int):
    x, w = np.polynomial.legendre.leggauss(nodes)
    return 0.5 * (hi - lo) * x + 0.5 * (hi + lo), 0.5 * (hi - lo) * w


class _Continuous(Prior):
    """Continuous prior defined through a frozen scipy distribution on some
    variable, optionally transformed to theta."""

    def _dist(self):
        raise NotImplementedError

    def _to_theta(self, x):
        return x

    def _draw(self, n, rng):
        return self._dist().rvs(size=n, random_state=rng)

    def sample(self, n, rng):
        theta = self._to_theta(np.asarray(self._draw(n, rng), dtype=float))
        # Draws of exactly 0 (or odds of q=1) have probability zero but can
        # occur in floating point; nudge into the valid range.
        return np.clip(theta, np.finfo(float).tiny, np.finfo(float).max)

    def atoms(self, nodes=400, tail=1e-10):
        d = self._dist()
        lo, hi = d.ppf(tail / 2), d.ppf(1 - tail / 2)
        x, w = _legendre_on(float(lo), float(hi), nodes)
        w = w * d.pdf(x)
        w = w / w.sum()
        return self._to_theta(x), w


@dataclass(eq=False)
class PointMass(Prior):
    value: float
    discrete = True

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError("prior support must be strictly positive")

    def sample(self, n, rng):
        return np.full(n, float(self.value))

    def atoms(self, nodes=400, tail=1e-10):
        return np.array([float(self.value)]), np.array([1.0])

    def mean(self):
        return float(self.value)

    def to_dict(self):
        return {"kind": "point", "value": self.value}


@dataclass(eq=False)
class Uniform(_Continuous):
    lo: float
    hi: float

    def __post_init__(self):
        if not (0 <= self.lo < self.hi):
            raise ValueError("uniform prior needs 0 <= lo < hi")

    def _dist(self):
        return stats.uniform(self.lo, self.hi - self.lo)

    def _draw(self, n, rng):
        return rng.uniform(self.lo, self.hi, size=n)

    def atoms(self, nodes=400, tail=1e-10):
        x, w = _legendre_on(self.lo, self.hi, nodes)
        return x, w / w.sum()

    def mean(self):
        return 0.5 * (self.lo + self.hi)

    def to_dict(self):
        return {"kind": "uniform", "lo": self.lo, "hi": self.hi}


@dataclass(eq=False)
class Gamma(_Continuous):
    """Gamma prior in the shape-rate parameterization."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("gamma prior needs positive shape and rate")

    def _dist(self):
        return stats.gamma(self.shape, scale=1.0 / self.rate)

    def _draw(self, n, rng):
        return rng.gamma(self.shape, 1.0 / self.rate, size=n)

    def mean(self):
        return self.shape / self.rate

    def to_dict(self):
        return {"kind": "gamma", "shape": self.shape, "rate": self.rate}


@dataclass(eq=False)
class BetaOdds(_Continuous):
    """q ~ Beta(a, b) on the success probability, reported as odds q/(1-q)."""

    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("beta prior needs positive parameters")

    def _dist(self):
        return stats.beta(self.a, self.b)

    def _draw(self, n, rng):
        return rng.beta(self.a, self.b, size=n)

    def _to_theta(self, x):
        return x / (1.0 - x)

    def mean(self):
        # E[q/(1-q)] = a/(b-1) for b > 1
        return self.a / (self.b - 1.0) if self.b > 1 else np.inf

    def to_dict(self):
        return {"kind": "beta_odds", "a": self.a, "b": self.b}


@dataclass(eq=False)
class ChiSquare(_Continuous):
    df: float

    def __post_init__(self):
        if not self.df > 0:
            raise ValueError("chi-square prior needs df > 0")

    def _dist(self):
        return stats.chi2(self.df)

    def _draw(self, n, rng):
        return rng.chisquare(self.df, size=n)

    def mean(self):
        return float(self.df)

    def to_dict(self):
        return {"kind": "chi2", "df": self.df}


@dataclass(eq=False)
class Mixture(Prior):
    components: list
    weights: list

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(self.components) != w.size or w.size == 0:
            raise ValueError("mixture needs one weight per component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        self.weights = [float(x) for x in w]
        self.discrete = all(c.discrete for c in self.components)

    def sample(self, n, rng):
        which = rng.choice(len(self.components), size=n, p=self.weights)
        out = np.empty(n)
        for idx, comp in enumerate(self.components):
            sel = which == idx
            if np.any(sel):
                out[sel] = comp.sample(int(sel.sum()), rng)
        return out

    def atoms(self, nodes=400, tail=1e-10):
        xs, ws = [], []
        for c, wt in zip(self.components, self.weights):
            a, w = c.atoms(nodes, tail)
            xs.append(a)
            ws.append(wt * w)
        return np.concatenate(xs), np.concatenate(ws)

    def mean(self):
        return float(sum(w * c.mean() for c, w in zip(self.components, self.weights)))

    def to_dict(self):
        return {
            "kind": "mixture",
            "components": [c.to_dict() for c in self.components],
            "weights": list(self.weights),
        }


@dataclass(eq=False)
class EquispacedGrid(Prior):
    """Deterministic design: theta is the equi-spaced vector of length n on [lo, hi]."""

    lo: float
    hi: float
    discrete = True

    def __post_init__(self):
        if not (0 < self.lo <= self.hi):
            raise ValueError("grid needs 0 < lo <= hi")

    def sample(self, n, rng=None):
        return np.linspace(self.lo, self.hi, n)

    def atoms(self, nodes=400, tail=1e-10):
        # As a prior, the empirical distribution of a long grid is Uniform(lo, hi).
        if self.lo == self.hi:
            return np.array([self.lo]), np.array([1.0])
        return Uniform(self.lo, self.hi).atoms(nodes, tail)

    def mean(self):
        return 0.5 * (self.lo + self.hi)

    def to_dict(self):
        return {"kind": "grid", "lo": self.lo, "hi": self.hi}


def prior_from_dict(d: dict) -> Prior:
    kind = d["kind"]
    if kind == "point":
        return PointMass(float(d["value"]))
    if kind == "uniform":
        return Uniform(float(d["lo"]), float(d["hi"]))
    if kind == "gamma":
        return Gamma(float(d["shape"]), float(d["rate"]))
    if kind == "beta_odds":
        return BetaOdds(float(d["a"]), float(d["b"]))
    if kind == "chi2":
        return ChiSquare(float(d["df"]))
    if kind == "grid":
        return EquispacedGrid(float(d["lo"]), float(d["hi"]))
    if kind == "mixture":
        return Mixture([prior_from_dict(c) for c in d["components"]], list(d["weights"]))
    raise ValueError(f"unknown prior kind {kind!r}")


def sample_theta(prior: Prior, n: int, seed) -> np.ndarray:
    """Draw ``n`` parameters from ``prior`` with a private generator seeded by ``seed``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return prior.sample(n, np.random.default_rng(seed))


def sample_counts(model, theta, seed) -> CountSample | np.ndarray:
    """Draw one count per theta_i.

    Returns a :class:`CountSample` for DLE models, and a plain integer array
    for model mixtures (which have no DLE coefficient structure).
    """
    theta = _check_theta(theta)
    y = model.sample(theta, np.random.default_rng(seed))
    if isinstance(model, DleModel) and y.size >= 2:
        return CountSample(y, model)
    return y
