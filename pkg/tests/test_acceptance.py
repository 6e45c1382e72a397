"""Acceptance criteria, one reported line each.

Each test appends ``criterion N: PASS|FAIL ...`` to the terminal summary and
prints it. Seeds and priors are fixed so every run reports the same numbers.
"""

import hashlib
import time

import numpy as np
import pytest

import conftest
from nebayes import cli
from nebayes import models as M
from nebayes.bandwidth import select_lambda
from nebayes.bayes_rules import bayes_rule_from_marginal, marginal_pmf, oracle_bayes
from nebayes.estimator import fit, h0_from_pmf, prepare
from nebayes.qp import QpProblem, solve
from nebayes.simulation import run_scenario, scenario
from nebayes.stein_kernel import (
    build_kernel_system,
    empirical_ksd,
    population_ksd,
    population_ksd_kappa,
    reduced_quadratic,
)
from oracles import ksd_double_loop, qp_enumerate

# every fitted solution seen here, audited by criterion 5 at the end
SOLUTIONS = []


def record(num, ok, detail):
    line = f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)


def random_finite_prior(rng, hi=8.0):
    atoms = rng.uniform(0.1, hi, size=int(rng.integers(1, 6)))
    return M.Mixture([M.PointMass(a) for a in atoms], rng.dirichlet(np.ones(atoms.size)))


# --------------------------------------------------------------------- 1
def test_criterion_1_bayes_rule_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240101)
    worst, points = 0.0, 0
    for _ in range(20):
        prior = random_finite_prior(rng)
        for model in (M.Poisson(), M.Binomial(int(rng.integers(1, 11)))):
            ymax = model.upper if model.upper is not None else 120
            p = marginal_pmf(model, prior, ymax)
            for k in (0, 1):
                a = bayes_rule_from_marginal(model, p, k)
                b = oracle_bayes(model, prior, k, ymax=ymax)
                # Binomial k=0 at y=m has no marginal-ratio form; see the ledger
                ok = a.defined & (p > 1e-300)
                worst = max(worst, float(np.max(np.abs(a.values[ok] - b.values[ok]))))
                points += int(ok.sum())
    elapsed = time.perf_counter() - t0
    passed = worst <= 1e-10 and elapsed < 10
    record(1, passed, f"max abs error {worst:.2e} over {points} points (tol 1e-10), {elapsed:.1f}s (<10s)")
    assert passed


# --------------------------------------------------------------------- 2
def test_criterion_2_population_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    m = 6
    worst = 0.0
    for _ in range(10):
        p = M.Binomial(m).pmf(np.arange(m + 1), float(rng.uniform(0.2, 3.0)))
        p_alt = rng.dirichlet(np.ones(m + 1)) * 0.98 + 0.02 / (m + 1)
        lam = float(rng.uniform(10, 100))
        for k in (0, 1):
            h0 = h0_from_pmf(p, k)
            ht = h0_from_pmf(p_alt, k)
            lhs = population_ksd(p, ht, h0, lam)
            rhs = population_ksd_kappa(p, ht, lam, k, upper=m)
            worst = max(worst, abs(lhs - rhs))
    elapsed = time.perf_counter() - t0
    passed = worst <= 1e-8 and elapsed < 5
    record(2, passed, f"max |difference form - kappa form| {worst:.2e} (tol 1e-8), {elapsed:.2f}s (<5s)")
    assert passed


# --------------------------------------------------------------------- 3
def test_criterion_3_empirical_criterion():
    t0 = time.perf_counter()
    rng = np.random.default_rng(33)
    worst = 0.0
    for i in range(50):
        n = int(rng.integers(2, 41))
        if i % 2:
            m = int(rng.integers(2, 11))
            y = rng.binomial(m, rng.uniform(0.1, 0.9), n)
        else:
            m = None
            y = rng.poisson(rng.uniform(0.3, 10), n)
        lam = float(rng.uniform(1, 100))
        for k in (0, 1):
            h = rng.normal(size=n)
            upper = m if k == 1 else None
            val = empirical_ksd(build_kernel_system(y, lam, k, upper=upper), h)
            worst = max(worst, abs(val - ksd_double_loop(y, h, lam, k, upper)))
    elapsed = time.perf_counter() - t0
    passed = worst <= 1e-10 and elapsed < 10
    record(3, passed, f"max |matrix - double loop| {worst:.2e} (tol 1e-10), {elapsed:.1f}s (<10s)")
    assert passed


# --------------------------------------------------------------------- 4
def test_criterion_4_qp_solver():
    t0 = time.perf_counter()
    rng = np.random.default_rng(44)
    worst_x, worst_kkt, bad_status = 0.0, 0.0, 0
    for _ in range(200):
        n = int(rng.integers(1, 9))
        G = rng.normal(size=(n, n))
        P = G @ G.T + 1e-3 * np.eye(n)
        q = rng.normal(size=n)
        p = int(rng.integers(0, 7))
        r = int(rng.integers(0, min(3, n) + 1))
        x0 = rng.normal(size=n)
        A = rng.normal(size=(p, n))
        b = A @ x0 + rng.uniform(0, 1, p)
        C = rng.normal(size=(r, n))
        d = C @ x0
        prob = QpProblem(P, q, A, b, C, d)
        s = solve(prob)
        bad_status += s.status != "optimal"
        worst_x = max(worst_x, float(np.abs(s.x - qp_enumerate(P, q, A, b, C, d)).max()))
        mu, nu = s.ineq_multipliers, s.eq_multipliers
        stat = np.abs(P @ s.x + q + A.T @ mu + C.T @ nu).max() / (1 + np.abs(q).max())
        comp = np.abs(mu * (A @ s.x - b)).max(initial=0.0)
        dual_sign = max(0.0, -mu.min(initial=0.0))
        worst_kkt = max(worst_kkt, stat, comp, dual_sign)
    elapsed = time.perf_counter() - t0
    passed = worst_x <= 1e-6 and worst_kkt <= 1e-6 and bad_status == 0 and elapsed < 30
    record(4, passed, f"max |x - enumeration| {worst_x:.2e}, max KKT residual {worst_kkt:.2e} (tol 1e-6), "
                      f"{bad_status} non-optimal, {elapsed:.1f}s (<30s)")
    assert passed


# --------------------------------------------------------------------- 6
C6_CASES = [("Poisson Unif(1,4)", M.Poisson(), M.Uniform(1, 4)), ("Binomial(5) Beta(2,2)", M.Binomial(5), M.BetaOdds(2, 2))]


def _c6_metrics(model, prior, k, n, seed, p, rule, h0):
    th = M.sample_theta(prior, n, seed * 7 + n)
    s = M.sample_counts(model, th, seed * 7 + n + 1)
    prep = prepare(s, model, k)
    curve = select_lambda(s, model, k, prepared=prep)
    SOLUTIONS.extend((model, sol) for sol in curve.solutions)
    sol = curve.solution
    ksd = []
    for lam in (10.0, 55.0, 100.0):
        Q, c, const = reduced_quadratic(prep.values, prep.counts, lam, k, model.upper)
        g = h0[prep.values]
        ksd.append(g @ Q @ g + 2 * c @ g + const)
    y = s.y
    # Binomial k=0 at y=m has no ratio functional; those coordinates are left out
    keep = ~prep.cset.excluded[prep.cset.inverse]
    pad = np.append(p, 0.0)
    if k == 1:
        w_true = np.where(y > 0, p[np.maximum(y - 1, 0)] / p[y], 0.0)
    else:
        with np.errstate(divide="ignore"):
            w_true = p[y] / pad[y + 1]
    w_err = np.sqrt(np.sum((sol.w[keep] - w_true[keep]) ** 2) / s.n)
    d_err = np.max(np.abs(sol.delta[keep] - rule.values[y[keep]]))
    return ksd, w_err, d_err


def test_criterion_6_consistency_trends():
    t0 = time.perf_counter()
    details, passed = [], True
    for name, model, prior in C6_CASES:
        ymax = model.upper if model.upper is not None else 60
        p = marginal_pmf(model, prior, ymax)
        for k in (0, 1):
            rule = oracle_bayes(model, prior, k, ymax=ymax)
            h0 = h0_from_pmf(p, k)
            med = {}
            for n in (250, 4000):
                rows = [_c6_metrics(model, prior, k, n, seed, p, rule, h0) for seed in range(20)]
                med[n] = (
                    np.median([r[0] for r in rows], axis=0),
                    np.median([r[1] for r in rows]),
                    np.median([r[2] for r in rows]),
                )
            ok = bool(np.all(med[4000][0] < med[250][0]) and med[4000][1] < med[250][1] and med[4000][2] < med[250][2])
            passed &= ok
            details.append(
                f"{name} k={k} {'ok' if ok else 'NOT decreasing'} "
                f"[ksd {np.round(med[250][0], 5).tolist()}->{np.round(med[4000][0], 5).tolist()}, "
                f"w {med[250][1]:.3f}->{med[4000][1]:.3f}, delta {med[250][2]:.3f}->{med[4000][2]:.3f}]"
            )
    elapsed = time.perf_counter() - t0
    passed &= elapsed < 1800
    record(6, passed, "; ".join(details) + f"; {elapsed:.0f}s (<1800s)")
    assert passed


# --------------------------------------------------------------------- 7
# Beta(2,2) on q has an infinite second moment of the odds, so k=0 risk is
# undefined for it; the Binomial pair uses the scenario B1 prior instead.
C7_CASES = {
    ("poisson", 0): (M.Poisson(), M.Uniform(1, 4)),
    ("poisson", 1): (M.Poisson(), M.Uniform(1, 4)),
    ("binomial", 0): (M.Binomial(5), scenario("B1").prior),
    ("binomial", 1): (M.Binomial(5), scenario("B1").prior),
}
_C7 = {}


def _c7_wins(key):
    if key not in _C7:
        model, prior = C7_CASES[key]
        k = key[1]
        wins = 0
        for seed in range(20):
            gap = []
            for n in (200, 2000):
                th = M.sample_theta(prior, n, 1000 * seed + n)
                s = M.sample_counts(model, th, 1000 * seed + n + 1)
                curve = select_lambda(s, model, k, theta=th)
                SOLUTIONS.extend((model, sol) for sol in curve.solutions)
                gap.append(np.max(np.abs(curve.are - curve.losses)))
            wins += gap[1] < gap[0]
        _C7[key] = wins
    return _C7[key]


def test_criterion_7_are_tracks_loss():
    t0 = time.perf_counter()
    wins = {key: _c7_wins(key) for key in C7_CASES}
    elapsed = time.perf_counter() - t0
    passed = all(w >= 16 for w in wins.values()) and elapsed < 1800
    detail = ", ".join(f"{m} k={k} {w}/20" for (m, k), w in wins.items())
    record(7, passed, f"gap(n=2000) < gap(n=200) in: {detail} (need >=16/20 each); {elapsed:.0f}s (<1800s)")
    attainable = {key: w for key, w in wins.items() if key != ("binomial", 0)}
    assert all(w >= 16 for w in attainable.values()), attainable


@pytest.mark.xfail(
    strict=True,
    reason="Binomial k=0 risk estimate has a bias that does not vanish with n "
    "(no unbiased estimator of theta^2 exists under the Binomial model); see decisions ledger",
)
def test_criterion_7_binomial_k0():
    assert _c7_wins(("binomial", 0)) >= 16


# --------------------------------------------------------------------- 8, 9
_TABLES = {}


def _table(sid, k):
    if (sid, k) not in _TABLES:
        _TABLES[(sid, k)] = run_scenario(scenario(sid), k, [2000], 20, ["NEB", "NEB-OR", "Robbins-plugin"], seed=2024)
    return _TABLES[(sid, k)]


def test_criterion_8_oracle_bandwidth_ratio():
    t0 = time.perf_counter()
    ratios = {(sid, k): _table(sid, k).ratio("NEB-OR", 2000) for sid in ("P1", "B1") for k in (0, 1)}
    elapsed = time.perf_counter() - t0
    passed = all(0.85 <= r <= 1.05 for r in ratios.values()) and elapsed < 2700
    detail = ", ".join(f"{sid} k={k} {r:.4f}" for (sid, k), r in ratios.items())
    record(8, passed, f"NEB-OR/NEB risk ratio at n=2000, 20 reps: {detail} (band [0.85, 1.05]); {elapsed:.0f}s (<2700s)")
    assert passed


def test_criterion_9_neb_beats_plugin():
    t0 = time.perf_counter()
    tab = _table("P1", 0)
    neb = tab.risk("NEB", 2000).per_rep
    rob = tab.risk("Robbins-plugin", 2000).per_rep
    frac = float(np.mean(neb < rob))
    elapsed = time.perf_counter() - t0
    passed = frac >= 0.9 and elapsed < 1200
    record(9, passed, f"NEB risk < Robbins plug-in risk in {int(round(frac * 20))}/20 reps "
                      f"(mean {neb.mean():.4f} vs {rob.mean():.4f}; need >=90%); {elapsed:.0f}s (<1200s)")
    assert passed


# --------------------------------------------------------------------- 10
def _hashes(folder):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(folder.iterdir())}


def test_criterion_10_determinism(tmp_path):
    rng = np.random.default_rng(10)
    y = rng.binomial(8, rng.uniform(0.1, 0.9, 300))
    src = tmp_path / "counts.csv"
    src.write_text("y,m\n" + "\n".join(f"{v},8" for v in y) + "\n", encoding="utf-8")
    runs = {
        "estimate": ["estimate", "-i", str(src), "--model", "binomial", "--k", "1"],
        "simulate": ["simulate", "--scenario", "P2", "--k", "0", "--n", "300", "--reps", "3", "--seed", "5",
                     "--format", "json"],
    }
    same = {}
    for name, args in runs.items():
        out = tmp_path / name
        assert cli.main(args + ["-o", str(out)]) == 0
        first = _hashes(out)
        assert cli.main(args + ["-o", str(out)]) == 0
        same[name] = first == _hashes(out) and len(first) > 0
    passed = all(same.values())
    record(10, passed, "byte-identical reruns: " + ", ".join(f"{k} {'yes' if v else 'NO'}" for k, v in same.items()))
    assert passed


# --------------------------------------------------------------------- 5
def _semantics(model, sol):
    """Worst violation of the constraint semantics on one fitted solution."""
    worst = 0.0
    worst = max(worst, -float(np.min(np.diff(sol.delta_values), initial=0.0)) - 1e-8)
    for v in sol.values:
        if np.unique(sol.delta[sol.y == v]).size != 1:
            return np.inf
    if sol.k == 1:
        if np.any(sol.delta[sol.y == 0] != 0):
            return np.inf
        if np.any(sol.w[sol.y > 0] <= 0):
            return np.inf
    elif np.any(sol.y + sol.h <= 0):
        return np.inf
    return max(worst, 0.0)


def test_criterion_5_constraint_semantics():
    # a sweep of its own on top of everything collected above
    rng = np.random.default_rng(55)
    for model in (M.Poisson(), M.Binomial(6), M.Binomial(12)):
        for k in (0, 1):
            for _ in range(5):
                th = rng.uniform(0.2, 6, int(rng.integers(20, 400)))
                y = M.sample_counts(model, th, int(rng.integers(1 << 30))).y
                if np.unique(y).size < 2:
                    continue
                for lam in (10.0, 40.0, 100.0):
                    SOLUTIONS.append((model, fit(M.CountSample(y, model), k=k, lam=lam)))
    worst = max(_semantics(m, s) for m, s in SOLUTIONS)
    passed = worst == 0.0
    record(5, passed, f"{len(SOLUTIONS)} fitted solutions: monotone (slack >= -1e-8), exact ties, "
                      f"delta(0)=0 for k=1, positive margins; worst excess violation {worst:.2e}")
    assert passed
