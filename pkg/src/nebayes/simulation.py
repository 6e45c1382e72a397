"""Simulation scenarios, Monte-Carlo risk tables and their rendering."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal

import numpy as np

from . import models as M
from .bandwidth import default_grid, select_lambda
from .bayes_rules import oracle_bayes
from .risk import RiskEstimate, compound_loss, robbins_plugin, summarize

__all__ = [
    "ESTIMATORS",
    "SCENARIO_IDS",
    "ScenarioSpec",
    "scenario",
    "RiskTable",
    "run_scenario",
    "render_table",
    "table_from_json",
    "format_ratio",
]

ESTIMATORS = ("NEB", "NEB-OR", "Robbins-plugin", "Oracle-Bayes")
SCENARIO_IDS = ("P1", "P2", "P3", "P4", "B1", "B2", "B3", "B4")


@dataclass
class ScenarioSpec:
    """One simulation design.

    ``sampler`` generates the counts (possibly a model mixture); ``model`` is
    the DLE member the estimators assume. They differ under misspecification.
    """

    id: str
    prior: M.Prior
    sampler: object
    model: M.DleModel
    m: int | None = None

    def draw(self, n: int, seed):
        ss = np.random.SeedSequence(seed)
        s_theta, s_y = (int(s.generate_state(1, dtype=np.uint32)[0]) for s in ss.spawn(2))
        theta = M.sample_theta(self.prior, n, s_theta)
        drawn = M.sample_counts(self.sampler, theta, s_y)
        return theta, M.CountSample(np.asarray(getattr(drawn, "y", drawn)), self.model)


def _odds(q):
    return q / (1.0 - q)


def scenario(sid: str, nu: float = 0.8) -> ScenarioSpec:
    """Built-in designs. ``nu`` sets the CMP dispersion in P3 and P4."""
    P, G, B = M.PointMass, M.Gamma, M.BetaOdds
    pois = M.Poisson()
    if sid == "P1":
        return ScenarioSpec(sid, M.Uniform(0.5, 15.0), pois, pois)
    if sid == "P2":
        return ScenarioSpec(sid, M.Mixture([G(5, 1), G(10, 1)], [0.75, 0.25]), pois, pois)
    if sid == "P3":
        sampler = M.ModelMixture([pois, M.ConwayMaxwellPoisson(nu)], [0.8, 0.2])
        return ScenarioSpec(sid, M.Mixture([P(10.0), G(5, 2)], [0.5, 0.5]), sampler, pois)
    if sid == "P4":
        return ScenarioSpec(sid, M.EquispacedGrid(1.0, 5.0), M.ConwayMaxwellPoisson(nu), pois)
    if sid == "B1":
        b = M.Binomial(5)
        return ScenarioSpec(sid, M.Mixture([P(_odds(0.5)), B(2, 5)], [0.4, 0.6]), b, b, 5)
    if sid == "B2":
        b = M.Binomial(10)
        return ScenarioSpec(sid, M.Mixture([P(0.5), G(1, 2)], [0.8, 0.2]), b, b, 10)
    if sid == "B3":
        b = M.Binomial(5)
        return ScenarioSpec(sid, M.ChiSquare(2), b, b, 5)
    if sid == "B4":
        b = M.Binomial(10)
        return ScenarioSpec(sid, M.Mixture([B(1, 1), B(1, 3)], [0.5, 0.5]), b, b, 10)
    raise ValueError(f"unknown scenario {sid!r}; valid ids: {', '.join(SCENARIO_IDS)}")


def format_ratio(x: float) -> str:
    """Two decimals, round half to even on the decimal representation."""
    if not math.isfinite(x):
        return "nan"
    return str(Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN))


@dataclass
class RiskTable:
    """Monte-Carlo risks per (estimator, n), with ratios against NEB."""

    scenario: str
    k: int
    n_values: list
    estimators: list
    reps: int
    seed: int
    cells: dict = field(default_factory=dict)  # (est, n) -> RiskEstimate
    lam_hat: dict = field(default_factory=dict)  # n -> per-rep selected bandwidths

    def risk(self, est: str, n: int) -> RiskEstimate:
        return self.cells[(est, int(n))]

    def ratio(self, est: str, n: int) -> float:
        base = self.cells.get(("NEB", int(n)))
        if base is None or not base.mean > 0:
            return math.nan
        return self.cells[(est, int(n))].mean / base.mean

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "k": self.k,
            "n_values": [int(n) for n in self.n_values],
            "estimators": list(self.estimators),
            "reps": self.reps,
            "seed": self.seed,
            "cells": [
                {
                    "estimator": e,
                    "n": int(n),
                    "mean": c.mean,
                    "se": c.se,
                    "reps": c.reps,
                    "failures": c.failures,
                    "per_rep": [float(v) for v in c.per_rep],
                }
                for (e, n), c in self.cells.items()
            ],
            "lam_hat": {str(n): [float(v) for v in lam] for n, lam in self.lam_hat.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RiskTable":
        cells = {
            (c["estimator"], int(c["n"])): RiskEstimate(
                c["mean"], c["se"], c["reps"], c["failures"], np.asarray(c["per_rep"], dtype=float)
            )
            for c in d["cells"]
        }
        lam = {int(n): np.asarray(v, dtype=float) for n, v in d.get("lam_hat", {}).items()}
        return cls(d["scenario"], d["k"], list(d["n_values"]), list(d["estimators"]), d["reps"], d["seed"], cells, lam)

    def __eq__(self, other):
        if not isinstance(other, RiskTable):
            return NotImplemented
        return json.dumps(self.to_dict(), sort_keys=True) == json.dumps(other.to_dict(), sort_keys=True)


def _rep_seeds(seed: int, n_index: int, reps: int):
    root = np.random.SeedSequence([int(seed), int(n_index)])
    return [int(s.generate_state(1, dtype=np.uint32)[0]) for s in root.spawn(reps)]


def run_scenario(spec: ScenarioSpec, k: int, n_values, reps: int, estimators=ESTIMATORS, seed: int = 0,
                 grid=None) -> RiskTable:
    """Monte-Carlo compound risk of each estimator at each sample size.

    NEB and NEB-OR share the grid of fits on each replicate. A replicate on
    which an estimator fails contributes NaN and is counted in ``failures``.
    """
    estimators = list(estimators)
    bad = [e for e in estimators if e not in ESTIMATORS]
    if bad:
        raise ValueError(f"unknown estimators {bad}; valid: {', '.join(ESTIMATORS)}")
    if reps < 2:
        raise ValueError("need at least two repetitions")
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    n_values = [int(n) for n in n_values]
    table = RiskTable(spec.id, k, n_values, estimators, reps, int(seed))
    for ni, n in enumerate(n_values):
        per = {e: [] for e in estimators}
        fails = {e: 0 for e in estimators}
        lam_sel = []
        for s in _rep_seeds(seed, ni, reps):
            theta, sample = spec.draw(n, s)
            deltas = {}
            if "NEB" in estimators or "NEB-OR" in estimators:
                try:
                    curve = select_lambda(sample, spec.model, k, grid, theta=theta)
                    deltas["NEB"] = curve.solution.delta
                    deltas["NEB-OR"] = curve.solutions[curve.oracle_index].delta
                    lam_sel.append(curve.lam_hat)
                except (ValueError, RuntimeError, np.linalg.LinAlgError):
                    lam_sel.append(math.nan)
            if "Robbins-plugin" in estimators:
                deltas["Robbins-plugin"] = robbins_plugin(sample, spec.model, k).delta
            if "Oracle-Bayes" in estimators:
                rule = oracle_bayes(spec.sampler, spec.prior, k, ymax=int(sample.y.max()))
                deltas["Oracle-Bayes"] = rule.values[sample.y]
            for e in estimators:
                d = deltas.get(e)
                if d is None or not np.all(np.isfinite(d)):
                    fails[e] += 1
                    per[e].append(math.nan)
                else:
                    per[e].append(compound_loss(theta, d, k).compound)
        for e in estimators:
            table.cells[(e, n)] = summarize(per[e], fails[e])
        if lam_sel:
            table.lam_hat[n] = np.asarray(lam_sel)
    return table


_COLUMNS = ["scenario", "k", "estimator", "n", "risk", "se", "ratio", "failures", "reps"]


def _rows(table: RiskTable):
    for e in table.estimators:
        for n in table.n_values:
            c = table.cells[(e, n)]
            yield {
                "scenario": table.scenario,
                "k": str(table.k),
                "estimator": e,
                "n": str(n),
                "risk": repr(float(c.mean)),
                "se": repr(float(c.se)),
                "ratio": format_ratio(table.ratio(e, n)),
                "failures": str(c.failures),
                "reps": str(c.reps),
            }


def render_table(table: RiskTable, fmt: str = "text") -> str:
    """Serialize as ``csv``, aligned ``text`` or ``json``.

    csv/text carry full-precision risks and 2-decimal ratio display copies;
    json is the lossless form read back by :func:`table_from_json`.
    """
    if fmt == "json":
        return json.dumps(table.to_dict(), indent=2) + "\n"
    rows = list(_rows(table))
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()
    if fmt == "text":
        cols = ["estimator", "n", "risk", "se", "ratio", "failures"]
        shown = [
            {**r, "risk": f"{float(r['risk']):.4f}", "se": f"{float(r['se']):.4f}"} for r in rows
        ]
        width = {c: max([len(c)] + [len(r[c]) for r in shown]) for c in cols}
        head = f"# scenario {table.scenario}, k={table.k}, reps={table.reps}, seed={table.seed}\n"
        lines = ["  ".join(c.rjust(width[c]) for c in cols)]
        lines += ["  ".join(r[c].rjust(width[c]) for c in cols) for r in shown]
        return head + "\n".join(lines) + "\n"
    raise ValueError(f"unknown table format {fmt!r}")


def table_from_json(text: str) -> RiskTable:
    return RiskTable.from_dict(json.loads(text))
