"""Error bounds, cost model, level selection and the rate/complexity studies."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Problem, contraction_factor, validate_problem
from .costs import cost_bound, cost_recursion_exact
from .mlp import empirical_rmse, mlp_replicate
from .randomness import derive_stream

__all__ = [
    "BoundInputs", "error_bound", "estimate_F", "cost_recursion_exact", "cost_bound",
    "choose_level", "StudyRow", "StudyReport", "rate_study", "complexity_study",
    "AprioriResult", "apriori_check", "default_apriori_epsilon", "predicted_exponent",
]

CSV_COLUMNS = ("d", "M", "n", "eps", "rmse", "rmse_ci", "bound", "F_hat", "cost_total", "wall_ms")


@dataclass(frozen=True)
class BoundInputs:
    lam: float
    L: float
    M: int
    n: int
    F: float

    def __post_init__(self):
        if not self.lam > self.L >= 0.0:
            raise ValueError(f"need lambda > L >= 0, got lambda={self.lam}, L={self.L}")
        if not self.F >= 0.0:
            raise ValueError("F must be nonnegative")
        if self.M < 1 or self.n < 0:
            raise ValueError("need M >= 1 and n >= 0")


def error_bound(b: BoundInputs) -> float:
    """F (sqrt lam - sqrt L)^{-1} M^{-n/2} (1 + (1 + sqrt M) sqrt(L/lam))^n.

    At L = 0 this is F (lam M^n)^{-1/2}.
    """
    if b.L == 0.0:
        return b.F / math.sqrt(b.lam * float(b.M) ** b.n)
    growth = 1.0 + (1.0 + math.sqrt(b.M)) * math.sqrt(b.L / b.lam)
    return b.F / (math.sqrt(b.lam) - math.sqrt(b.L)) * growth**b.n / math.sqrt(float(b.M) ** b.n)


def _forcing_draws(p: Problem, x, rate: float, n_mc: int, seed: int, tag: int) -> np.ndarray:
    """|g(x + sqrt(s) B z, 0)|^2 with s ~ Exp(rate), z ~ N(0, I)."""
    gen = derive_stream(seed, (tag,)).numpy_generator()
    s = gen.exponential(1.0 / rate, size=n_mc)
    Z = gen.standard_normal((n_mc, p.d))
    X = np.asarray(x, dtype=float).reshape(1, -1) + np.sqrt(s)[:, None] * p.B.apply(Z)
    vals = p.sfpe_g_batch(X, np.zeros(n_mc))
    if not np.all(np.isfinite(vals)):
        raise ArithmeticError("non-finite nonlinearity value while estimating the forcing norm")
    return vals * vals


def estimate_F(p: Problem, x, n_mc: int, seed: int) -> tuple[float, float]:
    """Importance-sampled (int_0^inf e^{(L-lam)s} E|g(x + B W_s, 0)|^2 ds)^{1/2}.

    Returns the estimate and a 3-sigma half-width (delta method).
    """
    if not p.lam > p.L:
        raise ValueError("need lambda > L")
    if n_mc < 1000:
        raise ValueError("n_mc must be >= 1000")
    rate = p.lam - p.L
    sq = _forcing_draws(p, x, rate, n_mc, seed, 11)
    F2 = float(np.mean(sq)) / rate
    se = float(np.std(sq, ddof=1)) / math.sqrt(n_mc) / rate
    F = math.sqrt(F2)
    return F, (3.0 * se / (2.0 * F) if F > 0.0 else 0.0)


def predicted_exponent(lam: float, L: float, M: int) -> float:
    """ln(3M) / ln(1/r(M)), the accuracy exponent of the cost."""
    r = contraction_factor(lam, L, M)
    return math.log(3 * M) / math.log(1.0 / r)


def choose_level(eps: float, kappa1: float, contraction: float, m_floor: int = 0) -> int:
    """Smallest n >= m_floor with kappa1 * contraction**n <= eps."""
    if not 0.0 < contraction < 1.0:
        raise ValueError("contraction must lie in (0, 1)")
    if not kappa1 > 0.0:
        raise ValueError("kappa1 must be positive")
    n = int(m_floor)
    while kappa1 * contraction**n > eps:
        n += 1
    return n


# ---------------------------------------------------------------------------
# studies

@dataclass
class StudyRow:
    d: int
    M: int
    n: int
    eps: Optional[float]
    rmse: float
    rmse_ci: float
    bound: float
    F_hat: float
    cost_total: int
    wall_ms: float
    cost_matches: bool = True
    check_ok: bool = True


@dataclass
class StudyReport:
    kind: str
    rows: list = field(default_factory=list)
    exponents: Optional[dict] = None
    stderr: Optional[dict] = None
    predicted_alpha: Optional[float] = None
    notes: dict = field(default_factory=dict)

    @property
    def all_checks_ok(self) -> bool:
        return all(r.check_ok and r.cost_matches for r in self.rows)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.rows]

    def to_csv(self, timing: bool = False) -> str:
        """Fixed column order; ``wall_ms`` is left empty unless ``timing``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.d, r.M, r.n, "" if r.eps is None else _fmt(r.eps), _fmt(r.rmse),
                        _fmt(r.rmse_ci), _fmt(r.bound), _fmt(r.F_hat), r.cost_total,
                        _fmt(r.wall_ms) if timing else ""])
        return buf.getvalue()


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def rate_study(p: Problem, reference: Callable, x, M: int, n_max: int, K: int, seed: int, *,
               n_mc_F: int = 100_000, threads: int = 1, backend: Optional[str] = None,
               budget: Optional[int] = None) -> StudyReport:
    """RMSE of U_n(x) against ``reference`` for n = 0..n_max, with the error bound.

    The bound uses F_hat plus its half-width.  A row passes when
    rmse <= bound + 3 * rmse_ci.  Row n uses root seeds seed + n K + (0..K-1).
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    u_ref = float(reference(x))
    F_hat, F_ci = estimate_F(p, x, n_mc_F, seed)
    report = StudyReport("rate")
    for n in range(n_max + 1):
        t0 = time.perf_counter()
        samples = mlp_replicate(p, M, n, x, K, seed + n * K, threads=threads, backend=backend,
                                budget=budget)
        wall = (time.perf_counter() - t0) * 1e3
        rmse, ci = empirical_rmse(samples, u_ref)
        bound = error_bound(BoundInputs(p.lam, p.L, M, n, F_hat + F_ci))
        cost = samples[0].cost.total
        report.rows.append(StudyRow(
            p.d, M, n, None, rmse, ci, bound, F_hat, cost, wall,
            cost_matches=all(s.cost.total == cost_recursion_exact(p.d, n, M) for s in samples),
            check_ok=rmse <= bound + 3.0 * ci))
    report.notes.update(reference=u_ref, F_ci=F_ci, x=x.tolist())
    return report


def _ols(y: np.ndarray, X: np.ndarray):
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    dof = X.shape[0] - X.shape[1]
    if dof <= 0:
        return beta, np.full(X.shape[1], float("nan"))
    resid = y - X @ beta
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.pinv(X.T @ X)
    return beta, np.sqrt(np.maximum(np.diag(cov), 0.0))


def fit_exponents(rows: Sequence[StudyRow]):
    """OLS of log cost on log d and log(1/eps); regressors with one level are dropped."""
    ds = sorted({r.d for r in rows})
    es = sorted({r.eps for r in rows})
    names, cols = [], []
    if len(ds) > 1:
        names.append("d")
        cols.append([math.log(r.d) for r in rows])
    if len(es) > 1:
        names.append("eps")
        cols.append([math.log(1.0 / r.eps) for r in rows])
    if not names:
        return None, None
    X = np.column_stack([np.ones(len(rows))] + [np.array(c) for c in cols])
    y = np.array([math.log(r.cost_total) for r in rows])
    beta, se = _ols(y, X)
    return ({k: float(b) for k, b in zip(names, beta[1:])},
            {k: float(s) for k, s in zip(names, se[1:])})


def cost_affine_in_d(d_list: Sequence[int], n: int, M: int) -> bool:
    """Exact check that cost_recursion_exact(., n, M) is affine over d_list."""
    ds = sorted(set(int(d) for d in d_list))
    if len(ds) < 3:
        return True
    c = [cost_recursion_exact(d, n, M) for d in ds]
    return all((c[i] - c[0]) * (ds[1] - ds[0]) == (c[1] - c[0]) * (ds[i] - ds[0])
               for i in range(2, len(ds)))


def complexity_study(family: Callable, d_list: Sequence[int], eps_list: Sequence[float], M: int,
                     K: int, seed: int, *, n_mc_F: int = 100_000, threads: int = 1,
                     backend: Optional[str] = None, budget: Optional[int] = None) -> StudyReport:
    """Cost needed to reach accuracy eps, over dimensions and accuracies.

    ``family(d)`` returns ``(problem, reference)``; all problems share
    (lambda, L).  For each cell the level is the smallest n >= 1 with
    kappa1(d) r(M)^n <= eps, where kappa1(d) = (F_hat + ci)/(sqrt lam - sqrt L)
    at the origin.  K replications measure the RMSE there.
    """
    report = StudyReport("complexity")
    lamL = None
    levels_used = set()
    for di, d in enumerate(d_list):
        p, reference = family(int(d))
        if lamL is None:
            lamL = (p.lam, p.L)
        elif (p.lam, p.L) != lamL:
            raise ValueError("family must share lambda and L across dimensions")
        rep = validate_problem(p, M)
        if not rep.M_admissible:
            raise ValueError(f"M={M} is not admissible for lambda={p.lam}, L={p.L} "
                             f"(r(M)={rep.contraction:.4f})")
        x = np.zeros(p.d)
        u_ref = float(reference(x))
        F_hat, F_ci = estimate_F(p, x, n_mc_F, seed + di)
        kappa1 = (F_hat + F_ci) / (math.sqrt(p.lam) - math.sqrt(p.L))
        for ei, eps in enumerate(eps_list):
            n = choose_level(eps, kappa1, rep.contraction, 1)
            levels_used.add(n)
            t0 = time.perf_counter()
            base = seed + (di * len(eps_list) + ei) * K
            samples = mlp_replicate(p, M, n, x, K, base, threads=threads, backend=backend,
                                    budget=budget)
            wall = (time.perf_counter() - t0) * 1e3
            rmse, ci = empirical_rmse(samples, u_ref)
            cost = samples[0].cost.total
            report.rows.append(StudyRow(
                p.d, M, n, float(eps), rmse, ci, kappa1 * rep.contraction**n, F_hat, cost, wall,
                cost_matches=all(s.cost.total == cost_recursion_exact(p.d, n, M) for s in samples),
                check_ok=rmse <= eps + 3.0 * ci))
    report.exponents, report.stderr = fit_exponents(report.rows)
    report.predicted_alpha = predicted_exponent(lamL[0], lamL[1], M)
    report.notes["cost_affine_in_d"] = all(cost_affine_in_d(d_list, n, M) for n in levels_used)
    return report


# ---------------------------------------------------------------------------
# a priori bound

@dataclass(frozen=True)
class AprioriResult:
    lhs: float
    rhs: float
    ci: float
    eps_param: float

    @property
    def ok(self) -> bool:
        return self.lhs <= self.rhs + 3.0 * self.ci


def default_apriori_epsilon(lam: float, L: float) -> float:
    return max(2.0 * L * L / lam, (lam + L * L / lam) / 2.0)


def apriori_check(p: Problem, u_ref: Callable, x, eps_param: Optional[float] = None,
                  n_mc: int = 100_000, seed: int = 0) -> AprioriResult:
    """|u(x)| against sqrt(eps)/(sqrt(eps lam) - L) (int e^{(eps-lam)t} E|g(x+BW_t,0)|^2 dt)^{1/2}."""
    lam, L = p.lam, p.L
    eps = default_apriori_epsilon(lam, L) if eps_param is None else float(eps_param)
    if not L * L / lam < eps < lam:
        raise ValueError(f"eps_param must lie in (L^2/lam, lam) = ({L * L / lam}, {lam}), got {eps}")
    x = np.asarray(x, dtype=float).reshape(-1)
    rate = lam - eps
    sq = _forcing_draws(p, x, rate, n_mc, seed, 13)
    I = float(np.mean(sq)) / rate
    se = float(np.std(sq, ddof=1)) / math.sqrt(n_mc) / rate
    pref = math.sqrt(eps) / (math.sqrt(eps * lam) - L)
    rhs = pref * math.sqrt(I)
    ci = pref * 3.0 * se / (2.0 * math.sqrt(I)) if I > 0.0 else 0.0
    return AprioriResult(abs(float(u_ref(x))), rhs, ci, eps)
