"""The MLP estimator U_n(x), cost tallies and replication utilities.

The recursion runs in the compiled kernel when it is importable and the
nonlinearity is a builtin; otherwise the pure-Python kernel is used.  Both
give bit-identical values.  Set ``MLPELL_BACKEND=python`` to force the
fallback.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._pykernel import NonFiniteError, PyKernel
from .core import Problem
from .costs import CostOverflowError, cost_recursion_exact
from .randomness import derive_stream

try:
    from ._ckernel import CKernel
except ImportError:  # extension not built
    CKernel = None

DEFAULT_BUDGET = 10**9

__all__ = [
    "MlpParams", "CostTally", "MlpEstimate", "SampleBudgetExceeded", "NonFiniteError",
    "mlp_estimate", "mlp_replicate", "empirical_rmse", "compiled_available", "make_kernel",
]


class SampleBudgetExceeded(RuntimeError):
    """The requested (d, n, M) would exceed the cost-unit budget."""


@dataclass(frozen=True)
class MlpParams:
    M: int
    n: int
    root_seed: int = 0

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"M must be a positive integer, got {self.M}")
        if int(self.n) != self.n or self.n < 0:
            raise ValueError(f"n must be a nonnegative integer, got {self.n}")


@dataclass(frozen=True)
class CostTally:
    gaussians: int = 0
    exponentials: int = 0
    f_evals: int = 0

    @property
    def total(self) -> int:
        return self.gaussians + self.exponentials + self.f_evals

    def __add__(self, other: "CostTally") -> "CostTally":
        return CostTally(self.gaussians + other.gaussians,
                         self.exponentials + other.exponentials,
                         self.f_evals + other.f_evals)


@dataclass(frozen=True)
class MlpEstimate:
    value: float
    cost: CostTally
    level: int
    point: tuple


def compiled_available() -> bool:
    return CKernel is not None


def _budget(budget: Optional[int]) -> int:
    if budget is not None:
        return int(budget)
    env = os.environ.get("MLP_BUDGET")
    return int(float(env)) if env else DEFAULT_BUDGET


def make_kernel(p: Problem, M: int, backend: Optional[str] = None):
    """Pick a kernel: ``"compiled"``, ``"python"`` or ``None``/``"auto"``."""
    backend = backend or os.environ.get("MLPELL_BACKEND", "auto")
    if backend == "python":
        return PyKernel(p, M)
    if backend not in ("auto", "compiled"):
        raise ValueError(f"unknown backend {backend!r}")
    if CKernel is not None and p.f.builtin:
        return CKernel(p, M)
    if backend == "compiled":
        raise RuntimeError("compiled kernel unavailable for this problem")
    return PyKernel(p, M)


def check_budget(p: Problem, M: int, n: int, budget: Optional[int] = None) -> int:
    limit = _budget(budget)
    try:
        cost = cost_recursion_exact(p.d, n, M)
    except CostOverflowError as exc:
        raise SampleBudgetExceeded(str(exc)) from exc
    if cost > limit:
        raise SampleBudgetExceeded(
            f"U_{n} with M={M}, d={p.d} needs {cost} cost units, budget is {limit}")
    return cost


def _as_point(p: Problem, x) -> np.ndarray:
    x = np.ascontiguousarray(np.asarray(x, dtype=np.float64).reshape(-1))
    if x.shape[0] != p.d:
        raise ValueError(f"point has dimension {x.shape[0]}, problem has d={p.d}")
    return x


def _run(kernel, keys, n: int, x: np.ndarray):
    """Evaluate one estimate per key with the given kernel (sequentially)."""
    if isinstance(kernel, PyKernel):
        out = []
        for key in keys:
            v, g, e, f = kernel.estimate(key, n, x)
            out.append((v, g, e, f))
        return out
    arr = np.array([key.digest for key in keys], dtype=np.uint64).reshape(-1, 2)
    values, counts, bad, ex, ev, ef = kernel.estimate_many(arr, n, x)
    if bad >= 0:
        raise NonFiniteError(ex.tolist(), ev, ef)
    return [(float(values[i]), int(counts[i, 0]), int(counts[i, 1]), int(counts[i, 2]))
            for i in range(len(values))]


def mlp_estimate(p: Problem, params: MlpParams, x, idx: Sequence[int] = (), *,
                 backend: Optional[str] = None, budget: Optional[int] = None,
                 observer=None) -> MlpEstimate:
    """One realisation of U^idx_n(x) under root seed ``params.root_seed``.

    ``observer`` (Python backend only) receives ``(path, level, x)`` on entry
    to every sub-estimator.
    """
    x = _as_point(p, x)
    if params.n == 0:
        return MlpEstimate(0.0, CostTally(), 0, tuple(x.tolist()))
    check_budget(p, params.M, params.n, budget)
    key = derive_stream(params.root_seed, idx)
    if observer is not None:
        kernel = PyKernel(p, params.M)
        v, g, e, f = kernel.estimate(key, params.n, x, observer=observer)
    else:
        kernel = make_kernel(p, params.M, backend)
        (v, g, e, f), = _run(kernel, [key], params.n, x)
    return MlpEstimate(v, CostTally(g, e, f), params.n, tuple(x.tolist()))


def mlp_replicate(p: Problem, M: int, n: int, x, K: int, seed_base: int, *,
                  idx: Sequence[int] = (), threads: int = 1, backend: Optional[str] = None,
                  budget: Optional[int] = None) -> list[MlpEstimate]:
    """K independent realisations with root seeds seed_base, ..., seed_base + K - 1.

    Each realisation depends only on its own seed, so the result is the same
    for any ``threads``; chunks are merged in seed order.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    params = MlpParams(M, n, seed_base)
    x = _as_point(p, x)
    pt = tuple(x.tolist())
    if n == 0:
        return [MlpEstimate(0.0, CostTally(), 0, pt) for _ in range(K)]
    check_budget(p, params.M, n, budget)
    kernel = make_kernel(p, params.M, backend)
    keys = [derive_stream(seed_base + i, idx) for i in range(K)]
    threads = max(1, int(threads))
    if threads == 1 or K == 1:
        rows = _run(kernel, keys, n, x)
    else:
        size = math.ceil(K / threads)
        chunks = [keys[i:i + size] for i in range(0, K, size)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda ks: _run(kernel, ks, n, x), chunks))
        rows = [r for part in parts for r in part]
    return [MlpEstimate(v, CostTally(g, e, f), n, pt) for v, g, e, f in rows]


def empirical_rmse(samples, reference: float) -> tuple[float, float]:
    """Root mean squared deviation from ``reference`` and a 3-sigma half-width.

    The half-width is taken on the mean squared deviation (sample variance of
    the squared deviations, normal approximation, 3 sigma) and mapped through
    the square root: ``sqrt(mse + 3 se) - rmse``.
    """
    vals = np.array([s.value if isinstance(s, MlpEstimate) else s for s in samples], dtype=float)
    if vals.size < 2:
        raise ValueError("need at least two samples")
    sq = (vals - reference) ** 2
    mse = float(np.mean(sq))
    rmse = math.sqrt(mse)
    se_mse = float(np.std(sq, ddof=1)) / math.sqrt(vals.size)
    return rmse, math.sqrt(mse + 3.0 * se_mse) - rmse
