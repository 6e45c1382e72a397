"""Command-line interface: ``estimate``, ``simulate`` and ``selftest``.

Settings come from an optional INI file (``--config``) and are overridden by
flags. Exit codes: 0 success, 1 selftest or validation failure, 2 usage
error, 3 data error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import platform
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import models as M
from .bandwidth import are, default_grid, select_lambda
from .estimator import InfeasibleError, fit, prepare
from .risk import compound_loss
from .simulation import ESTIMATORS, SCENARIO_IDS, render_table, run_scenario, scenario

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3


class DataError(Exception):
    pass


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str = "estimate"
    model: str = "poisson"
    nu: float = 1.0
    k: int = 1
    lam: float | None = None
    grid_lo: float = 10.0
    grid_hi: float = 100.0
    grid_points: int = 10
    monotone: bool = True
    eps: float = 1e-6
    input: str | None = None
    output: str = "."
    format: str = "csv"
    seed: int = 0
    n: list = field(default_factory=lambda: [500])
    reps: int = 50
    scenario: str = "P1"
    estimators: list = field(default_factory=lambda: list(ESTIMATORS))
    threads: int = 1

    def validate(self):
        if self.k not in (0, 1):
            raise UsageError("k must be 0 or 1")
        if self.lam is None:
            if self.grid_points < 1:
                raise UsageError("grid needs at least one point")
            if self.grid_points > 1 and not self.grid_lo < self.grid_hi:
                raise UsageError("grid needs lo < hi")
            if not self.grid_lo > 0:
                raise UsageError("grid must be positive")
        elif not self.lam > 0:
            raise UsageError("lambda must be positive")
        if self.model not in ("poisson", "binomial", "cmp"):
            raise UsageError(f"unknown model {self.model!r}")
        if self.format not in ("csv", "text", "json"):
            raise UsageError(f"unknown format {self.format!r}")
        if self.threads < 1:
            raise UsageError("threads must be at least 1")

    def grid(self) -> np.ndarray:
        if self.lam is not None:
            return np.array([float(self.lam)])
        return default_grid(self.grid_lo, self.grid_hi, self.grid_points)


def _fmt(x) -> str:
    """Round-trip decimal text (17 significant digits)."""
    x = float(x)
    return "nan" if x != x else format(x, ".17g")


# config file keys -> (section, field)
_INI = {
    "model": ("model", "family"),
    "nu": ("model", "nu"),
    "k": ("fit", "k"),
    "lam": ("fit", "lambda"),
    "grid_lo": ("fit", "grid_lo"),
    "grid_hi": ("fit", "grid_hi"),
    "grid_points": ("fit", "grid_points"),
    "monotone": ("fit", "monotone"),
    "eps": ("fit", "eps"),
    "input": ("io", "input"),
    "output": ("io", "output"),
    "format": ("io", "format"),
    "seed": ("simulate", "seed"),
    "n": ("simulate", "n"),
    "reps": ("simulate", "reps"),
    "scenario": ("simulate", "scenario"),
    "estimators": ("simulate", "estimators"),
    "threads": ("run", "threads"),
}


def _coerce(name: str, raw):
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    if raw is None:
        return None
    if name in ("n",):
        return [int(v) for v in str(raw).replace(",", " ").split()]
    if name == "estimators":
        return [v.strip() for v in str(raw).split(",") if v.strip()]
    if name == "monotone":
        return str(raw).strip().lower() in ("1", "true", "yes", "on")
    if "float" in kind:
        return float(raw)
    if "int" in kind:
        return int(raw)
    return str(raw)


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    cp = configparser.ConfigParser()
    if not cp.read(path, encoding="utf-8"):
        raise DataError(f"cannot read config file {path}")
    out = {}
    for name, (sec, key) in _INI.items():
        if cp.has_option(sec, key):
            try:
                out[name] = _coerce(name, cp.get(sec, key))
            except ValueError as exc:
                raise UsageError(f"bad value for [{sec}] {key}: {exc}") from exc
    return out


def read_counts(path: str):
    """Read a CSV with header ``y`` (plus optional ``m`` and ``theta``)."""
    p = Path(path)
    if not p.exists():
        raise DataError(f"input file not found: {path}")
    y, m, theta = [], [], []
    with p.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if "y" not in header:
            raise DataError(f"{path}:1: header must contain a 'y' column")
        iy = header.index("y")
        im = header.index("m") if "m" in header else None
        it = header.index("theta") if "theta" in header else None
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
            try:
                yv = int(row[iy])
                if yv < 0:
                    raise ValueError("negative count")
                y.append(yv)
                if im is not None:
                    m.append(int(row[im]))
                if it is not None:
                    theta.append(float(row[it]))
            except ValueError as exc:
                raise DataError(f"{path}:{line}: {exc}") from None
    if len(y) < 2:
        raise DataError(f"{path}: need at least two rows of data")
    if m and len(set(m)) != 1:
        raise DataError(f"{path}: the trial count m must be constant across rows")
    return np.asarray(y, dtype=np.int64), (m[0] if m else None), (np.asarray(theta) if theta else None)


def _model(cfg: RunConfig, m):
    if cfg.model == "poisson":
        return M.Poisson()
    if cfg.model == "binomial":
        if m is None:
            raise DataError("binomial model needs an 'm' column")
        return M.Binomial(m)
    return M.ConwayMaxwellPoisson(cfg.nu)


def _versions():
    return {"nebayes": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def cmd_estimate(cfg: RunConfig) -> int:
    if cfg.input is None:
        raise UsageError("estimate needs --input")
    y, m, theta = read_counts(cfg.input)
    model = _model(cfg, m)
    if model.upper is not None and y.max() > model.upper:
        raise DataError(f"count {int(y.max())} exceeds the trial count m={model.upper}")
    sample = M.CountSample(y, model)
    grid = cfg.grid()
    try:
        prep = prepare(sample, model, cfg.k, eps=cfg.eps, monotone=cfg.monotone)
        curve = select_lambda(sample, model, cfg.k, grid, theta=theta, prepared=prep)
    except InfeasibleError as exc:
        raise DataError(f"constraint set is empty ({', '.join(exc.labels)})") from exc
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    sol = curve.solution
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "estimates.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "y", "h_hat", "w_hat", "delta", "flag"])
        for i in range(y.size):
            w.writerow([i, int(y[i]), _fmt(sol.h[i]), _fmt(sol.w[i]), _fmt(sol.delta[i]), sol.flags[i]])
    with (out / "are_curve.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "are", "loss_if_oracle"])
        for j, lam in enumerate(curve.grid):
            loss = "" if curve.losses is None else _fmt(curve.losses[j])
            w.writerow([_fmt(lam), _fmt(curve.are[j]), loss])
    diag = sol.diagnostics
    manifest = {
        "config": asdict(cfg),
        "model": model.to_dict(),
        "n": int(y.size),
        "lambda_hat": float(curve.lam_hat),
        "are_at_lambda_hat": float(curve.are[curve.index]),
        "solver": {
            "status": diag.status,
            "iterations": int(diag.iterations),
            "primal_residual": float(diag.primal_residual),
            "dual_residual": float(diag.dual_residual),
            "polished": bool(diag.polished),
        },
        "versions": _versions(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    print(f"lambda_hat={_fmt(curve.lam_hat)} n={y.size} wrote {out}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    if cfg.scenario not in SCENARIO_IDS:
        raise UsageError(f"unknown scenario {cfg.scenario!r}; valid ids: {', '.join(SCENARIO_IDS)}")
    if "NEB" not in cfg.estimators:
        raise UsageError("estimators must include NEB (risk ratios are taken against it)")
    bad = [e for e in cfg.estimators if e not in ESTIMATORS]
    if bad:
        raise UsageError(f"unknown estimators {bad}; valid: {', '.join(ESTIMATORS)}")
    if cfg.reps < 2:
        raise UsageError("reps must be at least 2")
    table = run_scenario(scenario(cfg.scenario), cfg.k, cfg.n, cfg.reps, cfg.estimators, cfg.seed, cfg.grid())
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    ext = {"csv": "csv", "text": "txt", "json": "json"}[cfg.format]
    stem = f"risk_{cfg.scenario}_k{cfg.k}"
    (out / f"{stem}.{ext}").write_text(render_table(table, cfg.format), encoding="utf-8")
    with (out / f"{stem}_series.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "estimator", "risk", "se", "ratio"])
        for n in table.n_values:
            for e in table.estimators:
                c = table.risk(e, n)
                w.writerow([n, e, _fmt(c.mean), _fmt(c.se), _fmt(table.ratio(e, n))])
    print(render_table(table, "text"), end="")
    return EXIT_OK


# ----------------------------------------------------------------- selftest


def _check_rbf():
    from .stein_kernel import rbf

    return abs(rbf(0, 1, 2) - np.exp(-0.25)) < 1e-15 and rbf(3, 3, 7.0) == 1.0


def _check_kappa_matrix(fault=None):
    from .stein_kernel import build_kernel_system, empirical_ksd, kappa_double_sum

    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(6):
        n = int(rng.integers(2, 15))
        y = rng.integers(0, 7, n)
        lam = float(rng.uniform(1, 20))
        h = rng.normal(size=n)
        for k in (0, 1):
            # the fault hook swaps in the alternative exp(-d^2 / (2 lam^2)) convention on one side
            lam_m = lam**2 if fault == "kernel-convention" else lam
            a = empirical_ksd(build_kernel_system(y, lam_m, k), h)
            b = kappa_double_sum(y, h, lam, k)
            worst = max(worst, abs(a - b))
    return worst < 1e-10


def _check_population_identity():
    from .stein_kernel import population_ksd, population_ksd_kappa
    from .estimator import h0_from_pmf

    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(3):
        p = rng.dirichlet(np.ones(7))
        for k in (0, 1):
            h0 = h0_from_pmf(p, k)
            ht = h0 + rng.normal(size=7)
            lhs = population_ksd(p, ht, h0, 4.0)
            rhs = population_ksd_kappa(p, ht, 4.0, k, upper=6)
            worst = max(worst, abs(lhs - rhs))
    return worst < 1e-8


def _check_qp():
    import itertools

    from .qp import QpProblem, solve

    rng = np.random.default_rng(3)
    for _ in range(10):
        n = int(rng.integers(1, 5))
        G = rng.normal(size=(n, n))
        P = G @ G.T + 1e-3 * np.eye(n)
        q = rng.normal(size=n)
        p = int(rng.integers(0, 4))
        A = rng.normal(size=(p, n))
        b = A @ rng.normal(size=n) + rng.uniform(0, 1, p)
        sol = solve(QpProblem(P, q, A, b))
        best = None
        for r in range(p + 1):
            for S in itertools.combinations(range(p), r):
                S = list(S)
                K = np.block([[P, A[S].T], [A[S], np.zeros((r, r))]])
                z = np.linalg.solve(K, np.concatenate([-q, b[S]]))
                if np.all(A @ z[:n] <= b + 1e-9) and np.all(z[n:] >= -1e-9):
                    best = z[:n]
                    break
            if best is not None:
                break
        if sol.status != "optimal" or np.abs(sol.x - best).max() > 1e-6:
            return False
    return True


def _check_bayes():
    from .bayes_rules import bayes_rule_from_marginal, marginal_pmf, oracle_bayes

    prior = M.Mixture([M.PointMass(2.0), M.PointMass(6.0)], [0.5, 0.5])
    ok = True
    for model in (M.Poisson(), M.Binomial(6)):
        for k in (0, 1):
            p = marginal_pmf(model, prior, 30 if model.upper is None else model.upper)
            a = bayes_rule_from_marginal(model, p, k)
            b = oracle_bayes(model, prior, k, ymax=p.size - 1)
            mask = a.defined & b.defined & (p > 1e-300)
            ok &= bool(np.all(np.abs(a.values[mask] - b.values[mask]) < 1e-10))
    return ok


def _check_fit_semantics():
    rng = np.random.default_rng(2)
    y = rng.poisson(rng.uniform(1, 4, 300))
    ok = True
    for k in (0, 1):
        sol = fit(M.CountSample(y, M.Poisson()), k=k, lam=30.0)
        ok &= sol.status == "optimal"
        ok &= bool(np.all(np.diff(sol.delta_values) >= -1e-8))
        if k == 1:
            ok &= bool(np.all(sol.delta[y == 0] == 0.0))
        ok &= bool(np.all(sol.w[y > 0] > 0)) if k == 1 else bool(np.all(y + sol.h > 0))
        ok &= np.isfinite(are(y, sol, M.Poisson()))
    return ok


SELFTESTS = {
    "rbf-closed-form": _check_rbf,
    "kappa-matrix-equivalence": _check_kappa_matrix,
    "population-ksd-identity": _check_population_identity,
    "qp-vs-enumeration": _check_qp,
    "bayes-rule-equivalence": _check_bayes,
    "fit-constraint-semantics": _check_fit_semantics,
}


def cmd_selftest(cfg: RunConfig, fault: str | None = None) -> int:
    failed = 0
    for name, check in SELFTESTS.items():
        try:
            ok = check(fault) if name == "kappa-matrix-equivalence" else check()
        except Exception as exc:  # a crash is a failure, reported not raised
            logger.debug("selftest %s raised %r", name, exc)
            ok = False
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    print(f"selftest: {len(SELFTESTS) - failed}/{len(SELFTESTS)} passed")
    return EXIT_OK if failed == 0 else EXIT_FAIL


# ----------------------------------------------------------------- parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nebayes", description="Nonparametric empirical Bayes shrinkage for counts.")
    ap.add_argument("--config", help="INI file; flags override its values")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--k", type=int, choices=(0, 1))
        p.add_argument("--lam", type=float, help="fixed bandwidth (skips the ARE grid search)")
        p.add_argument("--grid-lo", type=float)
        p.add_argument("--grid-hi", type=float)
        p.add_argument("--grid-points", type=int)
        p.add_argument("--output", "-o")
        p.add_argument("--format", choices=("csv", "text", "json"))
        p.add_argument("--threads", type=int, help="upper bound on worker threads (computation is single-threaded)")

    pe = sub.add_parser("estimate", help="fit the shrinkage rule to a CSV of counts")
    common(pe)
    pe.add_argument("--input", "-i")
    pe.add_argument("--model", choices=("poisson", "binomial", "cmp"))
    pe.add_argument("--nu", type=float)
    pe.add_argument("--eps", type=float)
    pe.add_argument("--no-monotone", dest="monotone", action="store_const", const=False)

    ps = sub.add_parser("simulate", help="Monte-Carlo risk table for a built-in scenario")
    common(ps)
    ps.add_argument("--scenario")
    ps.add_argument("--n", type=int, nargs="+")
    ps.add_argument("--reps", type=int)
    ps.add_argument("--seed", type=int)
    ps.add_argument("--estimators", help="comma-separated subset of " + ",".join(ESTIMATORS))

    pt = sub.add_parser("selftest", help="fast identity and oracle checks")
    pt.add_argument("--fault", choices=("kernel-convention",), help=argparse.SUPPRESS)
    return ap


def make_config(args: argparse.Namespace) -> RunConfig:
    values = load_config(args.config)
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is None:
            continue
        if f.name == "estimators":
            v = _coerce("estimators", v)
        values[f.name] = v
    values["command"] = args.command
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = make_config(args)
        if cfg.command == "estimate":
            return cmd_estimate(cfg)
        if cfg.command == "simulate":
            return cmd_simulate(cfg)
        return cmd_selftest(cfg, getattr(args, "fault", None))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
