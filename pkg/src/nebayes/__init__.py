"""Nonparametric empirical Bayes shrinkage for discrete exponential family counts.

The estimator fits the ratio functional of the marginal pmf by minimizing an
empirical kernelized Stein discrepancy under linear shape constraints, and
picks the kernel bandwidth by minimizing an asymptotic risk estimate.
"""

__version__ = "0.1.0"

from .models import (  # noqa: E402
    Binomial,
    ConwayMaxwellPoisson,
    CountSample,
    Poisson,
    sample_counts,
    sample_theta,
)
from .bayes_rules import bayes_rule_from_marginal, oracle_bayes  # noqa: E402
from .estimator import ShrinkageSolution, fit  # noqa: E402
from .bandwidth import AreCurve, are, select_lambda  # noqa: E402
from .risk import compound_loss, loss, robbins_plugin  # noqa: E402

__all__ = [
    "Binomial",
    "ConwayMaxwellPoisson",
    "CountSample",
    "Poisson",
    "sample_counts",
    "sample_theta",
    "bayes_rule_from_marginal",
    "oracle_bayes",
    "ShrinkageSolution",
    "fit",
    "AreCurve",
    "are",
    "select_lambda",
    "compound_loss",
    "loss",
    "robbins_plugin",
]
