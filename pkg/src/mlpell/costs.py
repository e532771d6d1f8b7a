"""Exact cost recursion of the MLP estimator and its Gronwall-type bound.

Unit convention: one unit per scalar Gaussian, per exponential and per
evaluation of the nonlinearity.  A base-term sample costs d + 2 units, a
difference-term sample d + 3 units plus its two sub-estimates.
"""
from __future__ import annotations

from functools import lru_cache

INT64_MAX = 2**63 - 1


class CostOverflowError(OverflowError):
    pass


def _check(d: int, n: int, M: int):
    if d < 1 or n < 0 or M < 1:
        raise ValueError(f"need d >= 1, n >= 0, M >= 1 (got d={d}, n={n}, M={M})")


@lru_cache(maxsize=None)
def _cost(d: int, n: int, M: int) -> int:
    if n == 0:
        return 0
    total = M**n * (d + 2)
    for k in range(1, n):
        total += M ** (n - k) * (d + 3 + _cost(d, k, M) + _cost(d, k - 1, M))
    return total


def cost_recursion_exact(d: int, n: int, M: int) -> int:
    """C(0) = 0, C(n) = M^n (d+2) + sum_{k=1}^{n-1} M^{n-k} (d+3+C(k)+C(k-1))."""
    _check(d, n, M)
    c = _cost(int(d), int(n), int(M))
    if c > INT64_MAX:
        raise CostOverflowError(f"cost for d={d}, n={n}, M={M} exceeds 2^63-1")
    return c


def cost_bound(d: int, n: int, M: int) -> int:
    """(d+3)(3M)^n, the bound with alpha = d+2, beta = d+3, C_0 = 0."""
    _check(d, n, M)
    if n < 1:
        raise ValueError("the bound is stated for n >= 1")
    c = (d + 3) * (3 * M) ** n
    if c > INT64_MAX:
        raise CostOverflowError(f"cost bound for d={d}, n={n}, M={M} exceeds 2^63-1")
    return c
