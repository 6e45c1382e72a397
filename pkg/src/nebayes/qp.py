"""Dense convex QP solver.

Solves ``min 0.5 x'Px + q'x  s.t.  Ax <= b, Cx = d`` with an alternating
direction (operator splitting) scheme in the style of OSQP: Ruiz scaling,
over-relaxation, adaptive step size, and a polish step that solves the KKT
system on the active set guessed from the dual iterate. Problems here are
small (one unknown per distinct count), so everything is dense.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)

__all__ = ["QpProblem", "QpSolution", "QpOptions", "solve"]

INF = np.inf


@dataclass
class QpProblem:
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    C: np.ndarray | None = None
    d: np.ndarray | None = None

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        n = P.shape[0]
        if P.shape != (n, n):
            raise ValueError("P must be square")
        if np.max(np.abs(P - P.T), initial=0.0) > 1e-12 * max(1.0, np.abs(P).max(initial=0.0)):
            raise ValueError("P must be symmetric")
        self.P = 0.5 * (P + P.T)
        self.q = np.asarray(self.q, dtype=float).reshape(n)
        self.A, self.b = self._block(self.A, self.b, n, "A/b")
        self.C, self.d = self._block(self.C, self.d, n, "C/d")

    @staticmethod
    def _block(M, v, n, name):
        if M is None:
            return np.zeros((0, n)), np.zeros(0)
        M = np.atleast_2d(np.asarray(M, dtype=float))
        v = np.asarray(v, dtype=float).reshape(-1)
        if M.shape[1] != n or M.shape[0] != v.size:
            raise ValueError(f"inconsistent dimensions in {name}")
        return M, v

    @property
    def n(self):
        return self.q.size

    def objective(self, x):
        return float(0.5 * x @ self.P @ x + self.q @ x)


@dataclass
class QpOptions:
    max_iter: int = 50_000
    eps_abs: float = 1e-8
    eps_rel: float = 1e-9
    eps_infeas: float = 1e-9
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    scaling_iter: int = 10
    check_every: int = 25
    adaptive_rho: bool = True
    polish: bool = True
    # relative diagonal regularization, times trace(P)/n
    diag_reg: float = 0.0


@dataclass
class QpSolution:
    x: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int
    status: str
    ineq_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    eq_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    polished: bool = False
    certificate: float | None = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _residuals(prob: QpProblem, x, mu, nu):
    prim = 0.0
    if prob.C.shape[0]:
        prim = max(prim, np.abs(prob.C @ x - prob.d).max())
    if prob.A.shape[0]:
        prim = max(prim, np.maximum(prob.A @ x - prob.b, 0.0).max())
    grad = prob.P @ x + prob.q + prob.A.T @ mu + prob.C.T @ nu
    dual = np.abs(grad).max(initial=0.0)
    return float(prim), float(dual)


def _ruiz(P, q, M, iters):
    n, m = P.shape[0], M.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    Ps, qs, Ms = P.copy(), q.copy(), M.copy()
    for _ in range(iters):
        colP = np.abs(Ps).max(axis=0) if n else np.zeros(0)
        colM = np.abs(Ms).max(axis=0) if m else np.zeros(n)
        dn = np.maximum(colP, colM)
        dn = np.where(dn < 1e-4, 1.0, dn)
        dn = 1.0 / np.sqrt(dn)
        em = np.abs(Ms).max(axis=1) if m else np.zeros(0)
        em = np.where(em < 1e-4, 1.0, em)
        em = 1.0 / np.sqrt(em)
        Ps = dn[:, None] * Ps * dn[None, :]
        qs = dn * qs
        Ms = em[:, None] * Ms * dn[None, :]
        D *= dn
        E *= em
    scale = max(np.abs(Ps).max(axis=0).mean() if n else 0.0, np.abs(qs).max(initial=0.0))
    scale = 1.0 if scale < 1e-4 else scale
    c = min(1.0 / scale, 1e4)
    return Ps * c, qs * c, Ms, D, E, c


def _kkt_solve(prob: QpProblem, P_reg, active, delta=1e-12, refine=5):
    A, b = prob.A, prob.b
    Aact = np.vstack([prob.C, A[active]])
    rhs_c = np.concatenate([prob.d, b[active]])
    n, k = prob.n, Aact.shape[0]
    KKT = np.block([[P_reg, Aact.T], [Aact, np.zeros((k, k))]])
    reg = np.diag(np.concatenate([np.full(n, delta), np.full(k, -delta)]))
    rhs = np.concatenate([-prob.q, rhs_c])
    try:
        lu = linalg.lu_factor(KKT + reg, check_finite=False)
    except (linalg.LinAlgError, ValueError):
        return None
    sol = linalg.lu_solve(lu, rhs)
    for _ in range(refine):
        sol = sol + linalg.lu_solve(lu, rhs - KKT @ sol)
    if not np.all(np.isfinite(sol)):
        return None
    nu = sol[n:n + prob.C.shape[0]]
    mu = np.zeros(A.shape[0])
    mu[active] = sol[n + prob.C.shape[0]:]
    return sol[:n], mu, nu


def _dual_active_set(prob: QpProblem, P_reg, max_steps=None):
    """Goldfarb-Idnani dual active-set solve on the regularized problem.

    Starts at the unconstrained minimizer and adds violated rows one at a
    time while keeping the multipliers dual feasible. Needs ``P_reg`` positive
    definite. Returns ``(x, mu, nu)`` or None on failure.
    """
    n, mA, mC = prob.n, prob.A.shape[0], prob.C.shape[0]
    try:
        L = linalg.cholesky(P_reg, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return None
    J = linalg.solve_triangular(L, np.eye(n), lower=True, check_finite=False).T  # P^-1 = J J'
    x = -(J @ (J.T @ prob.q))
    # rows in the form n_i' x >= c_i: equalities first, then -A x >= -b
    sign = np.ones(mC)
    Nr = np.vstack([prob.C, -prob.A])
    cr = np.concatenate([prob.d, -prob.b])
    for i in range(mC):
        if Nr[i] @ x - cr[i] > 0:
            sign[i] = -1.0
            Nr[i], cr[i] = -Nr[i], -cr[i]
    tol = 1e-12 * (1.0 + np.abs(cr).max(initial=0.0))
    active: list = []
    u = np.zeros(0)
    max_steps = max_steps or 10 * (mA + mC + n) + 10

    def directions(p):
        if not active:
            return J @ (J.T @ Nr[p]), np.zeros(0)
        k = len(active)
        Qf, R = linalg.qr(J.T @ Nr[active].T, mode="full", check_finite=False)
        d = Qf.T @ (J.T @ Nr[p])
        z = J @ (Qf[:, k:] @ d[k:])
        r = linalg.solve_triangular(R[:k], d[:k], check_finite=False)
        return z, r

    eq_queue = list(range(mC))
    for _ in range(max_steps):
        if eq_queue:
            p = eq_queue.pop(0)
        else:
            s = Nr[mC:] @ x - cr[mC:]
            s[[i - mC for i in active if i >= mC]] = np.inf
            if s.size == 0 or s.min() >= -tol:
                break
            p = mC + int(np.argmin(s))
        u_p = 0.0
        while True:
            z, r = directions(p)
            s_p = Nr[p] @ x - cr[p]
            t1, drop = np.inf, -1
            for j, idx in enumerate(active):
                if idx >= mC and r[j] > 0 and u[j] / r[j] < t1:
                    t1, drop = u[j] / r[j], j
            nz = z @ Nr[p]
            t2 = -s_p / nz if nz > 1e-14 * np.abs(Nr[p]).max() ** 2 * np.abs(J).max() ** 2 else np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                return None
            if t2 <= t1:
                x = x + t * z
                u = np.append(u - t * r, u_p + t)
                active.append(p)
                break
            if np.isfinite(t2):
                x = x + t * z
            u = u - t * r
            u_p += t
            u = np.delete(u, drop)
            active.pop(drop)
    else:
        return None
    nu = np.zeros(mC)
    mu = np.zeros(mA)
    for j, idx in enumerate(active):
        if idx < mC:
            nu[idx] = -sign[idx] * u[j]
        else:
            mu[idx - mC] = max(u[j], 0.0)
    return x, mu, nu


def _polish(prob: QpProblem, P_reg, x, y_ineq, max_swaps=None):
    """Solve the KKT system on the active set guessed from the iterate, then
    correct the guess (drop negative multipliers, add violated rows) a few
    times. Returns ``(x, mu, nu)`` or None."""
    A, b = prob.A, prob.b
    mA = A.shape[0]
    scale_p = 1.0 + np.abs(b).max(initial=0.0) + np.abs(prob.d).max(initial=0.0)
    tol_p = 1e-9 * scale_p
    slack = b - A @ x if mA else np.zeros(0)
    active = (y_ineq > slack) | (slack < 1e-7 * scale_p)
    max_swaps = 2 * mA + 2 if max_swaps is None else max_swaps
    seen = set()
    for _ in range(max_swaps + 1):
        key = active.tobytes()
        if key in seen:
            break
        seen.add(key)
        res = _kkt_solve(prob, P_reg, active)
        if res is None:
            break
        xp, mu, nu = res
        if mA == 0:
            return res
        neg = np.flatnonzero(active & (mu < 0))
        viol = A @ xp - b
        worst = int(np.argmax(np.where(active, -np.inf, viol)))
        if viol[worst] > tol_p and not active[worst]:
            active = active.copy()
            active[worst] = True
            continue
        if neg.size:
            drop = neg[np.argmin(mu[neg])]
            if mu[drop] < -1e-12 * (1.0 + np.abs(prob.q).max(initial=0.0)):
                active = active.copy()
                active[drop] = False
                continue
            mu = np.maximum(mu, 0.0)
        return xp, mu, nu
    return _dual_active_set(prob, P_reg)


def _accept(prob, x, mu, nu, opts):
    prim, dual = _residuals(prob, x, mu, nu)
    scale_p = 1.0 + np.abs(prob.b).max(initial=0.0) + np.abs(prob.d).max(initial=0.0)
    scale_d = 1.0 + np.abs(prob.q).max(initial=0.0)
    if prim > 1e-8 * scale_p or dual > 1e-6 * scale_d:
        return False, prim, dual
    if np.any(mu < -1e-9 * scale_d):
        return False, prim, dual
    if prob.A.shape[0] and np.abs(mu * (prob.A @ x - prob.b)).max() > 1e-6:
        return False, prim, dual
    return True, prim, dual


def solve(problem: QpProblem, options: QpOptions | None = None) -> QpSolution:
    """Solve a convex QP.

    Returns a :class:`QpSolution` whose ``status`` is ``"optimal"``,
    ``"max-iter"``, ``"infeasible"`` (with a certificate norm) or
    ``"dual-infeasible"``. Raises ``ValueError`` if P is not PSD.
    """
    opts = options or QpOptions()
    prob = problem
    n = prob.n
    P = prob.P
    pnorm = np.abs(P).max(initial=0.0)
    if n and pnorm > 0:
        emin = linalg.eigvalsh(P, subset_by_index=[0, 0])[0]
        if emin < -1e-8 * pnorm:
            raise ValueError(f"P is not positive semidefinite (min eigenvalue {emin:.3g})")

    P_reg = P
    if opts.diag_reg > 0 and n:
        P_reg = P + np.eye(n) * opts.diag_reg * np.trace(P) / n

    mA, mC = prob.A.shape[0], prob.C.shape[0]
    M = np.vstack([prob.A, prob.C])
    lo = np.concatenate([np.full(mA, -INF), prob.d])
    hi = np.concatenate([prob.b, prob.d])
    m = M.shape[0]
    is_eq = np.concatenate([np.zeros(mA, bool), np.ones(mC, bool)])

    if m == 0:
        try:
            x = linalg.lstsq(P_reg, -prob.q)[0]
        except linalg.LinAlgError:
            x = np.zeros(n)
        prim, dual = _residuals(prob, x, np.zeros(0), np.zeros(0))
        if dual > 1e-6 * (1 + np.abs(prob.q).max(initial=0.0)):
            return QpSolution(x, prob.objective(x), prim, dual, 0, "dual-infeasible")
        return QpSolution(x, prob.objective(x), prim, dual, 0, "optimal")

    Ps, qs, Ms, D, E, c = _ruiz(P_reg, prob.q, M, opts.scaling_iter)
    los = np.where(np.isfinite(lo), lo * E, -INF)
    his = np.where(np.isfinite(hi), hi * E, INF)

    rho = opts.rho
    sigma = opts.sigma

    def rho_vec(r):
        return np.where(is_eq, 1e3 * r, r)

    def factor(r):
        R = rho_vec(r)
        return linalg.cho_factor(Ps + sigma * np.eye(n) + Ms.T @ (R[:, None] * Ms), check_finite=False)

    rv = rho_vec(rho)
    fac = factor(rho)
    x = np.zeros(n)
    z = np.zeros(m)
    y = np.zeros(m)
    alpha = opts.alpha
    Dinv, Einv = 1.0 / D, 1.0 / E

    status = "max-iter"
    it = 0
    best = None
    polish_tried_at = -10**9
    cert = None
    for it in range(1, opts.max_iter + 1):
        x_prev, z_prev, y_prev = x, z, y
        rhs = sigma * x - qs + Ms.T @ (rv * z - y)
        xt = linalg.cho_solve(fac, rhs, check_finite=False)
        zt = Ms @ xt
        x = alpha * xt + (1 - alpha) * x_prev
        zr = alpha * zt + (1 - alpha) * z_prev
        z = np.clip(zr + y / rv, los, his)
        y = y + rv * (zr - z)

        if it % opts.check_every and it != opts.max_iter:
            continue

        # unscaled residuals
        Ax = Einv * (Ms @ x)
        zu = Einv * z
        xu = D * x
        yu = E * y / c
        r_prim = np.abs(Ax - zu).max()
        Px = Dinv * (Ps @ x) / c
        Aty = Dinv * (Ms.T @ y) / c
        qu = Dinv * qs / c
        r_dual = np.abs(Px + qu + Aty).max()
        eps_p = opts.eps_abs + opts.eps_rel * max(np.abs(Ax).max(), np.abs(zu).max())
        eps_d = opts.eps_abs + opts.eps_rel * max(np.abs(Px).max(), np.abs(Aty).max(), np.abs(qu).max())

        # polish attempt once the iterate is in the right neighbourhood
        loose = r_prim < 1e-3 * (1 + np.abs(zu).max()) and r_dual < 1e-3 * (1 + np.abs(qu).max())
        if opts.polish and it - polish_tried_at >= opts.check_every:
            polish_tried_at = it
            res = _polish(prob, P_reg, xu, np.maximum(yu[:mA], 0.0))
            if res is not None:
                ok, prim, dual = _accept(prob, res[0], res[1], res[2], opts)
                if ok:
                    best = (res, prim, dual)
                    status = "optimal"
                    break

        if r_prim < eps_p and r_dual < eps_d:
            mu = np.maximum(yu[:mA], 0.0)
            nu = yu[mA:]
            prim, dual = _residuals(prob, xu, mu, nu)
            best = ((xu, mu, nu), prim, dual)
            status = "optimal"
            break

        # primal infeasibility certificate
        dy = y - y_prev
        ndy = np.abs(dy).max()
        if ndy > 1e-30:
            dyu = E * dy
            At_dy = np.abs(Dinv * (Ms.T @ dy)).max()
            sup = np.sum(np.where(dyu > 0, np.where(np.isfinite(hi), hi, 0.0) * dyu, 0.0)) + np.sum(
                np.where(dyu < 0, np.where(np.isfinite(lo), lo, 0.0) * dyu, 0.0)
            )
            unbounded_dir = np.any((dyu > 1e-12 * ndy) & ~np.isfinite(hi)) or np.any(
                (dyu < -1e-12 * ndy) & ~np.isfinite(lo)
            )
            if not unbounded_dir and At_dy < opts.eps_infeas * ndy and sup < -opts.eps_infeas * ndy:
                status = "infeasible"
                cert = float(ndy)
                break

        # dual infeasibility (unbounded objective)
        dx = x - x_prev
        ndx = np.abs(dx).max()
        if ndx > 1e-30:
            Pdx = np.abs(Ps @ dx).max()
            qdx = qs @ dx
            Mdx = Ms @ dx
            tol = opts.eps_infeas * ndx
            inside = np.all(
                np.where(np.isfinite(his), Mdx <= tol, True) & np.where(np.isfinite(los), Mdx >= -tol, True)
            )
            if Pdx < tol and qdx < -tol and inside and it > 10 * opts.check_every:
                status = "dual-infeasible"
                break

        if opts.adaptive_rho:
            num = r_prim / max(np.abs(Ax).max(), np.abs(zu).max(), 1e-30)
            den = r_dual / max(np.abs(Px).max(), np.abs(Aty).max(), np.abs(qu).max(), 1e-30)
            new_rho = rho * np.sqrt(num / max(den, 1e-30))
            new_rho = float(np.clip(new_rho, 1e-6, 1e6))
            if new_rho > 5 * rho or new_rho < 0.2 * rho:
                rho = new_rho
                rv = rho_vec(rho)
                fac = factor(rho)

    if status in ("infeasible", "dual-infeasible"):
        xu = D * x
        prim, dual = _residuals(prob, xu, np.zeros(mA), np.zeros(mC))
        return QpSolution(xu, prob.objective(xu), prim, dual, it, status, certificate=cert)

    polished = False
    if best is None:
        xu = D * x
        yu = E * y / c
        mu = np.maximum(yu[:mA], 0.0)
        nu = yu[mA:]
        if opts.polish:
            res = _polish(prob, P_reg, xu, mu)
            if res is not None:
                ok, prim, dual = _accept(prob, res[0], res[1], res[2], opts)
                if ok:
                    best = (res, prim, dual)
                    status = "optimal"
        if best is None:
            prim, dual = _residuals(prob, xu, mu, nu)
            best = ((xu, mu, nu), prim, dual)
            logger.warning("QP solver stopped after %d iterations without convergence", it)
    else:
        polished = status == "optimal" and it == polish_tried_at

    (xf, mu, nu), prim, dual = best
    if status == "optimal" and not polished and opts.polish:
        # refine a plain ADMM convergence with one polish pass when it helps
        res = _polish(prob, P_reg, xf, mu)
        if res is not None:
            ok, p2, d2 = _accept(prob, res[0], res[1], res[2], opts)
            if ok and p2 <= max(prim, 1e-12) * 10 and d2 <= max(dual, 1e-12) * 10:
                (xf, mu, nu), prim, dual = res, p2, d2
                polished = True
    return QpSolution(
        x=xf,
        objective=prob.objective(xf),
        primal_residual=prim,
        dual_residual=dual,
        iterations=it,
        status=status,
        ineq_multipliers=mu,
        eq_multipliers=nu,
        polished=polished,
        certificate=cert,
    )
