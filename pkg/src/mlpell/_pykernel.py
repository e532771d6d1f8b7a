"""Pure-Python MLP recursion.

Reference implementation and fallback for the compiled kernel.  Every
floating-point operation is ordered exactly as in ``_ckernel.pyx`` so both
backends return bit-identical values for builtin nonlinearities.
"""
from __future__ import annotations

import math

from .core import Problem
from .randomness import StreamKey, sample_point


class NonFiniteError(ArithmeticError):
    """The nonlinearity returned a non-finite value."""

    def __init__(self, x, v, value=None):
        self.x = list(x)
        self.v = v
        self.value = value
        super().__init__(f"nonlinearity is not finite at x={self.x}, v={v!r} (got {value!r})")


class PyKernel:
    name = "python"

    def __init__(self, problem: Problem, M: int):
        self.problem = problem
        self.M = int(M)
        self.g = problem.sfpe_g()
        self.B = problem.B
        self.lam = problem.lam
        self.d = problem.d

    def estimate(self, key: StreamKey, n: int, x, observer=None):
        """Return ``(value, gaussians, exponentials, f_evals)`` for U_n(x).

        ``observer(path, level, x)`` is called on entry to every
        sub-estimator with the index path relative to ``key``.
        """
        self._counts = [0, 0, 0]
        x = [float(v) for v in x]
        val = self._U(key, int(n), x, () if observer else None, observer)
        g, e, f = self._counts
        return val, g, e, f

    def _eval(self, y, v):
        out = self.g(y, v)
        self._counts[2] += 1
        if not math.isfinite(out):
            raise NonFiniteError(y, v, out)
        return out

    def _U(self, key, n, x, path, observer):
        if observer is not None:
            observer(path, n, tuple(x))
        if n == 0:
            return 0.0
        M, B, lam, d = self.M, self.B, self.lam, self.d
        counts = self._counts
        total = 0.0
        for k in range(n):
            Mk = M ** (n - k)
            kk = key.child(k)
            s = 0.0
            for m in range(1, Mk + 1):
                km = kk.child(m)
                y, _, _ = sample_point(x, B, lam, km.point_stream())
                counts[0] += d
                counts[1] += 1
                if k == 0:
                    val = self._eval(y, 0.0)
                else:
                    a = self._U(km, k, y, None if path is None else path + (k, m), observer)
                    if k - 1 > 0:
                        b = self._U(kk.child(-m), k - 1, y,
                                    None if path is None else path + (k, -m), observer)
                    else:
                        if observer is not None:
                            observer(path + (k, -m), 0, tuple(y))
                        b = 0.0
                    fa = self._eval(y, a)
                    fb = self._eval(y, b)
                    val = fa - fb
                s += val
            total += s / (lam * float(Mk))
        return total
