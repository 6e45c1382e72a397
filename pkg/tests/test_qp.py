import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nebayes.qp import QpOptions, QpProblem, solve
from oracles import qp_enumerate


def random_instance(rng, n_max=8, p_max=6, r_max=3, pd=True):
    n = int(rng.integers(1, n_max + 1))
    G = rng.normal(size=(n, n))
    P = G @ G.T + (1e-3 * np.eye(n) if pd else 0.0)
    q = rng.normal(size=n)
    p = int(rng.integers(0, p_max + 1))
    r = int(rng.integers(0, min(r_max, n) + 1))
    x0 = rng.normal(size=n)
    A = rng.normal(size=(p, n))
    b = A @ x0 + rng.uniform(0, 1, p)
    C = rng.normal(size=(r, n))
    d = C @ x0
    return P, q, A, b, C, d


def kkt_residuals(prob, sol):
    x, mu, nu = sol.x, sol.ineq_multipliers, sol.eq_multipliers
    stat = np.abs(prob.P @ x + prob.q + prob.A.T @ mu + prob.C.T @ nu).max(initial=0.0)
    comp = np.abs(mu * (prob.A @ x - prob.b)).max(initial=0.0)
    return stat, comp, mu.min(initial=0.0)


class TestExamples:
    def test_unconstrained(self):
        s = solve(QpProblem(np.eye(4), -np.ones(4)))
        assert s.optimal
        np.testing.assert_allclose(s.x, np.ones(4), atol=1e-10)
        assert s.objective == pytest.approx(-2.0)

    def test_clipped(self):
        s = solve(QpProblem(np.eye(1), [-1.0], [[1.0]], [0.5]))
        assert s.optimal
        np.testing.assert_allclose(s.x, [0.5], atol=1e-10)

    def test_equality(self):
        s = solve(QpProblem(np.eye(2), np.zeros(2), C=[[1.0, 1.0]], d=[2.0]))
        np.testing.assert_allclose(s.x, [1.0, 1.0], atol=1e-10)

    def test_infeasible(self):
        s = solve(QpProblem(np.eye(1), [0.0], [[1.0], [-1.0]], [-1.0, -1.0]))
        assert s.status == "infeasible"
        assert s.certificate is not None

    def test_nonconvex(self):
        with pytest.raises(ValueError):
            solve(QpProblem(np.diag([1.0, -1.0]), np.zeros(2)))

    def test_asymmetric(self):
        with pytest.raises(ValueError):
            QpProblem(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            QpProblem(np.eye(2), np.zeros(2), A=np.ones((1, 3)), b=[1.0])

    def test_psd_rank_deficient(self):
        # duplicate-count structure: P singular, equality restores uniqueness
        P = np.ones((2, 2))
        s = solve(QpProblem(P, [-1.0, -1.0], C=[[1.0, -1.0]], d=[0.0]))
        assert s.optimal
        np.testing.assert_allclose(s.x, [0.5, 0.5], atol=1e-7)

    def test_deterministic(self):
        P, q, A, b, C, d = random_instance(np.random.default_rng(4))
        a = solve(QpProblem(P, q, A, b, C, d))
        b_ = solve(QpProblem(P, q, A, b, C, d))
        np.testing.assert_array_equal(a.x, b_.x)


class TestAgainstEnumeration:
    def test_random_instances(self):
        rng = np.random.default_rng(0)
        for _ in range(60):
            P, q, A, b, C, d = random_instance(rng)
            prob = QpProblem(P, q, A, b, C, d)
            s = solve(prob)
            assert s.optimal
            np.testing.assert_allclose(s.x, qp_enumerate(P, q, A, b, C, d), atol=1e-6)
            stat, comp, mumin = kkt_residuals(prob, s)
            assert stat <= 1e-6 * (1 + np.abs(q).max())
            assert comp <= 1e-6 and mumin >= -1e-9

    def test_residual_contract(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            prob = QpProblem(*random_instance(rng))
            s = solve(prob)
            scale = 1 + np.abs(prob.b).max(initial=0) + np.abs(prob.d).max(initial=0)
            assert s.primal_residual <= 1e-8 * scale
            assert s.dual_residual <= 1e-6


class TestProperties:
    @given(st.integers(0, 10_000))
    @settings(max_examples=25)
    def test_relaxation_never_increases_objective(self, seed):
        rng = np.random.default_rng(seed)
        P, q, A, b, C, d = random_instance(rng, p_max=5)
        if A.shape[0] == 0:
            return
        full = solve(QpProblem(P, q, A, b, C, d))
        drop = int(rng.integers(A.shape[0]))
        keep = np.arange(A.shape[0]) != drop
        relaxed = solve(QpProblem(P, q, A[keep], b[keep], C, d))
        assert relaxed.objective <= full.objective + 1e-8 * (1 + abs(full.objective))

    @given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
    @settings(max_examples=25)
    def test_scaling_invariance(self, seed, c):
        P, q, A, b, C, d = random_instance(np.random.default_rng(seed))
        x1 = solve(QpProblem(P, q, A, b, C, d)).x
        x2 = solve(QpProblem(c * P, c * q, A, b, C, d)).x
        np.testing.assert_allclose(x1, x2, atol=1e-8)

    def test_admm_only_path(self):
        rng = np.random.default_rng(8)
        P, q, A, b, C, d = random_instance(rng)
        s = solve(QpProblem(P, q, A, b, C, d), QpOptions(polish=False))
        np.testing.assert_allclose(s.x, qp_enumerate(P, q, A, b, C, d), atol=1e-5)

    def test_max_iter_status(self):
        P, q, A, b, C, d = random_instance(np.random.default_rng(2), p_max=6)
        s = solve(QpProblem(P, q, A, b, C, d), QpOptions(max_iter=1, polish=False, check_every=1))
        assert s.status in ("max-iter", "optimal")
