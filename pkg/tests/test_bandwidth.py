import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from nebayes import bandwidth as B
from nebayes import models as M
from nebayes.estimator import ShrinkageSolution, fit
from nebayes.risk import compound_loss
from oracles import thomas_eval


def make_solution(y, values, delta_values, k):
    """A solution carrying a hand-chosen rule at each distinct count."""
    y = np.asarray(y)
    values = np.asarray(values)
    dv = np.asarray(delta_values, dtype=float)
    idx = np.searchsorted(values, y)
    return ShrinkageSolution(
        lam=10.0, k=k, y=y, h=np.zeros(y.size), w=np.ones(y.size), delta=dv[idx],
        flags=np.array([""] * y.size, dtype=object), values=values, delta_values=dv, objective=0.0,
    )


class TestPsi:
    def test_direct_lookup_k1(self):
        sol = make_solution([3, 4], [3, 4], [2.0, 5.0], 1)
        assert B.psi([3, 4], sol, 1, M.Poisson())[0] == pytest.approx(25.0 / 4.0)

    def test_spline_gap_k1(self):
        d = [0.0, 0.9, 3.1]
        sol = make_solution([0, 1, 3], [0, 1, 3], d, 1)
        expect = thomas_eval([0.0, 1.0, 3.0], d, 2.0) ** 2 / 2.0
        assert B.psi([1], sol, 1, M.Poisson())[0] == pytest.approx(expect, abs=1e-12)

    def test_k0_at_zero_not_used(self):
        sol = make_solution([0, 1, 2], [0, 1, 2], [0.5, 1.0, 1.8], 0)
        p = B.psi([0, 1, 2], sol, 0, M.Poisson())
        np.testing.assert_allclose(p[1:], [0.5, 1.0])

    def test_binomial_weights(self):
        m = 5
        sol = make_solution([1, 2, 5], [1, 2, 5], [0.3, 0.6, 2.0], 0)
        p = B.psi([2], sol, 0, M.Binomial(m))
        assert p[0] == pytest.approx(0.3 / (m - 2 + 1))
        sol1 = make_solution([1, 2, 5], [1, 2, 5], [0.3, 0.6, 2.0], 1)
        assert B.psi([5], sol1, 1, M.Binomial(m))[0] == 0.0

    def test_needs_two_distinct(self):
        sol = make_solution([2, 2], [2], [1.0], 1)
        with pytest.raises(ValueError):
            B.psi([2, 2], sol, 1, M.Poisson())

    def test_k_mismatch(self):
        sol = make_solution([1, 2], [1, 2], [1.0, 2.0], 1)
        with pytest.raises(ValueError):
            B.psi([1, 2], sol, 0, M.Poisson())


class TestAre:
    def test_two_point_poisson_k1(self):
        d1, d2 = 0.8, 1.9
        sol = make_solution([1, 2], [1, 2], [d1, d2], 1)
        psi1 = d2**2 / 2
        psi2 = (d2 + (d2 - d1)) ** 2 / 3
        expect = 0.5 * (3 + psi1 + psi2 - 2 * (d1 + d2))
        assert B.are([1, 2], sol, M.Poisson(), 1) == pytest.approx(expect, abs=1e-14)

    def test_zero_rule_gives_mean(self):
        y = np.array([0, 1, 1, 4, 7])
        sol = make_solution(y, [0, 1, 4, 7], np.zeros(4), 1)
        assert B.are(y, sol, M.Poisson(), 1) == pytest.approx(y.mean())

    def test_binomial_first_term_zero_at_zero(self):
        sol = make_solution([0, 0], [0], [0.0], 1)
        sol.values = np.array([0, 1])
        sol.delta_values = np.zeros(2)
        assert B.are([0, 0], sol, M.Binomial(5), 1) == 0.0

    def test_unknown_model(self):
        sol = make_solution([1, 2], [1, 2], [1.0, 2.0], 1)
        with pytest.raises(TypeError):
            B.are([1, 2], sol, M.ConwayMaxwellPoisson(0.8), 1)

    @given(st.integers(0, 1000), st.sampled_from([0, 1]))
    @settings(max_examples=15)
    def test_permutation_invariant(self, seed, k):
        rng = np.random.default_rng(seed)
        model = M.Binomial(6) if seed % 2 else M.Poisson()
        y = M.sample_counts(model, rng.uniform(0.3, 3, 40), seed).y
        if np.unique(y).size < 2:
            return
        sol = fit(M.CountSample(y, model), k=k, lam=20.0)
        perm = rng.permutation(y.size)
        solp = fit(M.CountSample(y[perm], model), k=k, lam=20.0)
        assert B.are(y, sol, model, k) == B.are(y[perm], solp, model, k)


class TestBinomialIdentities:
    """Exact moment identities behind the Binomial risk estimates.

    Under Binomial(m, q) with odds theta no unbiased estimator of theta
    exists; the shifted ratios used by the risk estimate miss the mass at the
    top of the support.
    """

    @staticmethod
    def _cases():
        rng = np.random.default_rng(50)
        for _ in range(50):
            yield int(rng.integers(1, 15)), float(rng.uniform(0.02, 0.98))

    def test_first_moment(self):
        for m, q in self._cases():
            y = np.arange(m + 1)
            p = stats.binom.pmf(y, m, q)
            theta = q / (1 - q)
            lhs = math.fsum(p * y / (m - y + 1))
            assert lhs == pytest.approx(theta * (1 - p[m]), rel=1e-12)

    def test_second_moment(self):
        for m, q in self._cases():
            y = np.arange(m + 1)
            p = stats.binom.pmf(y, m, q)
            theta = q / (1 - q)
            lhs = math.fsum(p * y * (y - 1) / ((m - y + 2) * (m - y + 1)))
            # mass below m - 1, i.e. 1 - P(Y >= m - 1)
            below = math.fsum(p[: max(m - 1, 0)])
            assert lhs == pytest.approx(theta**2 * below, rel=1e-12, abs=1e-300)

    def test_bias_is_not_zero(self):
        m, q = 5, 0.5
        y = np.arange(m + 1)
        p = stats.binom.pmf(y, m, q)
        assert abs(math.fsum(p * y / (m - y + 1)) - 1.0) > 1e-3


class TestSelection:
    def _sample(self, seed=0, n=300):
        th = M.sample_theta(M.Uniform(1, 4), n, seed)
        return th, M.sample_counts(M.Poisson(), th, seed + 1)

    def test_default_grid(self):
        np.testing.assert_allclose(B.default_grid(), np.arange(10, 101, 10))
        with pytest.raises(ValueError):
            B.default_grid(10, 5, 3)

    def test_single_point(self):
        th, s = self._sample()
        curve = B.select_lambda(s, k=1, grid=[42.0])
        assert curve.lam_hat == 42.0
        lam, _ = B.oracle_lambda(s, k=1, grid=[42.0], theta=th)
        assert lam == 42.0

    def test_constant_are_picks_smallest(self, monkeypatch):
        monkeypatch.setattr(B, "are", lambda *a, **k: 1.0)
        th, s = self._sample()
        assert B.select_lambda(s, k=0, grid=[10.0, 20.0, 30.0]).lam_hat == 10.0

    def test_curve_invariants(self):
        th, s = self._sample(3)
        curve = B.select_lambda(s, k=1, theta=th)
        assert curve.are[curve.index] == curve.are.min()
        assert np.all(np.diff(curve.grid) > 0)
        assert curve.losses[curve.oracle_index] <= curve.losses[curve.index]
        lam, sol = B.oracle_lambda(s, k=1, theta=th)
        assert lam == curve.lam_oracle
        assert compound_loss(th, sol.delta, 1).compound == curve.losses.min()

    def test_grid_errors(self):
        th, s = self._sample()
        with pytest.raises(ValueError):
            B.select_lambda(s, k=1, grid=[])
        with pytest.raises(ValueError):
            B.select_lambda(s, k=1, grid=[20.0, 10.0])
        with pytest.raises(ValueError):
            B.oracle_lambda(s, k=1)

    def test_fit_errors_name_lambda(self, monkeypatch):
        def boom(*a, **k):
            raise RuntimeError("solver exploded")

        monkeypatch.setattr(B, "fit", boom)
        th, s = self._sample()
        with pytest.raises(RuntimeError, match="lambda=10"):
            B.select_lambda(s, k=1)

    def test_point_mass_near_oracle(self):
        close = 0
        for seed in range(20):
            th = np.full(2000, 3.0)
            s = M.sample_counts(M.Poisson(), th, seed)
            curve = B.select_lambda(s, k=1, theta=th)
            close += curve.losses[curve.index] <= 1.1 * curve.losses.min()
        assert close >= 16

    def test_delta_at_outside_range(self):
        sol = make_solution([2, 3, 5], [2, 3, 5], [1.0, 2.0, 2.5], 1)
        np.testing.assert_allclose(B.delta_at(sol, [1, 6]), [0.0, 2.75])
        np.testing.assert_allclose(B.delta_at(sol, [2, 3, 5]), [1.0, 2.0, 2.5])
