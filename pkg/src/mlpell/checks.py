"""Built-in invariant suite run by ``mlpell check``."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import (DiffusionMatrix, LyapunovFunction, Nonlinearity, Problem, Variant,
                   lipschitz_probe, lyapunov_trace_bound)
from .costs import cost_bound, cost_recursion_exact
from .mlp import MlpParams, mlp_estimate
from .randomness import derive_stream, norm_ppf, siphash24_words


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str


def check_cost(problem: Optional[Problem] = None) -> CheckResult:
    """Measured cost equals the exact recursion and stays below (d+3)(3M)^n."""
    worst = ""
    for d in (1, 2, 10):
        for M in (2, 4):
            p = Problem.build(DiffusionMatrix.scaled_identity(1.0, d), Nonlinearity.constant(1.0), 1.0)
            for n in range(0, 4):
                est = mlp_estimate(p, MlpParams(M, n, 0), np.zeros(d))
                exact = cost_recursion_exact(d, n, M)
                if est.cost.total != exact:
                    return CheckResult("cost", False, f"d={d} M={M} n={n}: {est.cost.total} != {exact}")
                if n >= 1 and exact > cost_bound(d, n, M):
                    return CheckResult("cost", False, f"d={d} M={M} n={n}: exceeds bound")
                worst = f"{exact} units at d={d} M={M} n={n}"
    return CheckResult("cost", True, f"24 cells match; largest {worst}")


def check_lyapunov(problem: Optional[Problem] = None) -> CheckResult:
    gen = derive_stream(0, (91,)).numpy_generator()
    worst = 0.0
    for i in range(200):
        d = int(gen.integers(1, 6))
        eps = float(gen.uniform(0.01, 3.0))
        x = gen.uniform(-3.0, 3.0, size=d)
        kind = i % 3
        if kind == 0:
            B = DiffusionMatrix.scaled_identity(float(gen.uniform(0.1, 2.0)), d)
        elif kind == 1:
            B = DiffusionMatrix.diagonal(gen.uniform(-2.0, 2.0, size=d))
        else:
            B = DiffusionMatrix.dense(gen.uniform(-1.0, 1.0, size=(d, d)))
        lhs, rhs = lyapunov_trace_bound(LyapunovFunction(eps, d), B, x)
        rel = (lhs - rhs) / max(abs(rhs), 1e-300)
        worst = max(worst, rel)
    ok = worst <= 1e-9
    return CheckResult("lyapunov", ok, f"max relative excess {worst:.3e} over 200 points")


def check_randomness(problem: Optional[Problem] = None) -> CheckResult:
    # SipHash-2-4 reference: key 00..0f, message 00..0f
    k0, k1 = 0x0706050403020100, 0x0F0E0D0C0B0A0908
    if siphash24_words(k0, k1, k0, k1) != 0x3F2ACC7F57C29BDB:
        return CheckResult("randomness", False, "SipHash reference vector mismatch")
    if abs(norm_ppf(0.975) - 1.959963984540054) > 1e-14:
        return CheckResult("randomness", False, "inverse normal CDF off at 0.975")
    key = derive_stream(5, (1, 2))
    if key.child(3) != derive_stream(5, (1, 2, 3)):
        return CheckResult("randomness", False, "child derivation is not path-consistent")
    if derive_stream(5, (1, 2)).raw(0) == derive_stream(5, (2, 1)).raw(0):
        return CheckResult("randomness", False, "distinct paths collide")
    return CheckResult("randomness", True, "reference vector, ppf and path derivation ok")


def check_exactness(problem: Optional[Problem] = None) -> CheckResult:
    B = DiffusionMatrix.scaled_identity(1.0, 2)
    sfpe = Problem.build(B, Nonlinearity.constant(2.0), 1.0)
    # f(x, v) = lam v - c, so g = c and L = 0
    ell = Problem.build(B, Nonlinearity.affine(1.0, -2.0), 1.0, L=0.0, variant=Variant.ELLIPTIC)
    for n in (1, 2, 3):
        for seed in range(5):
            for p in (sfpe, ell):
                v = mlp_estimate(p, MlpParams(2, n, seed), np.zeros(2)).value
                if v != 2.0:
                    return CheckResult("exactness", False, f"n={n} seed={seed}: {v!r} != 2.0")
    return CheckResult("exactness", True, "constant forcing reproduced exactly for n <= 3")


def check_variant(problem: Optional[Problem] = None) -> CheckResult:
    """ELLIPTIC(f) against SFPE with g(x, v) = lam v - f(x, v) written out."""
    B = DiffusionMatrix.diagonal([1.0, 0.5])
    lam = 2.0
    for slope, c in ((1.7, 1.0), (2.4, 0.2)):
        L = abs(lam - slope)
        f = Nonlinearity.affine(slope, c)
        ell = Problem.build(B, f, lam, L=L, variant=Variant.ELLIPTIC)
        g = Nonlinearity.custom(lambda x, v, f=f: lam * v - f(x, v), L)
        sfpe = Problem.build(B, g, lam, L=L)
        for n in (1, 2, 3):
            a = mlp_estimate(ell, MlpParams(3, n, 11), [0.2, -0.1]).value
            b = mlp_estimate(sfpe, MlpParams(3, n, 11), [0.2, -0.1]).value
            if a != b:
                return CheckResult("variant", False, f"slope={slope} n={n}: {a!r} != {b!r}")
    return CheckResult("variant", True, "elliptic and reduced forms agree bit for bit")


def check_lipschitz(problem: Optional[Problem] = None) -> CheckResult:
    probs = [problem] if problem is not None else [
        Problem.build(DiffusionMatrix.scaled_identity(1.0, 1), Nonlinearity.affine(2.0), 3.0)]
    for p in probs:
        excess = lipschitz_probe(p, 2000, 5.0, derive_stream(0, (92,)))
        if excess > 0.0:
            return CheckResult("lipschitz", False,
                               f"declared L={p.L} violated by {excess:.3e}")
    return CheckResult("lipschitz", True, "no violation of the declared constant")


CHECKS: dict[str, Callable] = {
    "cost": check_cost,
    "lyapunov": check_lyapunov,
    "randomness": check_randomness,
    "exactness": check_exactness,
    "variant": check_variant,
    "lipschitz": check_lipschitz,
}


def run_checks(only=None, problem: Optional[Problem] = None) -> list:
    names = list(CHECKS) if not only else list(only)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown check(s): {', '.join(unknown)}")
    return [CHECKS[n](problem) for n in names]
