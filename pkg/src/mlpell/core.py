"""Problem definitions: diffusion matrices, nonlinearities, Lyapunov analytics.

Builtin nonlinearities are described by plain parameters so the compiled
kernel can evaluate them without calling back into Python.  The scalar
evaluators below fix the floating-point operation order that the kernel
reproduces exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .randomness import StreamKey


class Variant(str, Enum):
    SFPE = "SFPE"
    ELLIPTIC = "ELLIPTIC"


class DiffusionMatrix:
    """A constant d x d diffusion matrix B of one of three kinds.

    Parameters
    ----------
    kind : {"scaled-identity", "diagonal", "dense"}
    d : int
    scale : float, for ``scaled-identity``
    entries : array_like, length-d vector for ``diagonal``, d x d for ``dense``
    """

    KINDS = ("scaled-identity", "diagonal", "dense")

    def __init__(self, kind: str, d: int, scale: float = 1.0, entries=None):
        if kind not in self.KINDS:
            raise ValueError(f"unknown diffusion kind {kind!r}")
        if int(d) != d or d < 1:
            raise ValueError(f"dimension must be a positive integer, got {d}")
        self.kind = kind
        self.d = int(d)
        self.scale = float(scale)
        if kind == "scaled-identity":
            if not math.isfinite(self.scale):
                raise ValueError("scale must be finite")
            self.entries = None
        else:
            arr = np.array(entries, dtype=float)
            shape = (self.d,) if kind == "diagonal" else (self.d, self.d)
            if arr.shape != shape:
                raise ValueError(f"{kind} entries must have shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError("diffusion entries must be finite")
            arr.setflags(write=False)
            self.entries = arr
        self._opnorm = None

    @classmethod
    def scaled_identity(cls, scale: float, d: int) -> "DiffusionMatrix":
        return cls("scaled-identity", d, scale=scale)

    @classmethod
    def diagonal(cls, entries) -> "DiffusionMatrix":
        entries = np.asarray(entries, dtype=float)
        return cls("diagonal", len(entries), entries=entries)

    @classmethod
    def dense(cls, entries) -> "DiffusionMatrix":
        entries = np.asarray(entries, dtype=float)
        return cls("dense", entries.shape[0], entries=entries)

    def __repr__(self):
        if self.kind == "scaled-identity":
            return f"DiffusionMatrix(scaled-identity, d={self.d}, scale={self.scale!r})"
        return f"DiffusionMatrix({self.kind}, d={self.d})"

    def to_dense(self) -> np.ndarray:
        if self.kind == "scaled-identity":
            return self.scale * np.eye(self.d)
        if self.kind == "diagonal":
            return np.diag(self.entries)
        return np.array(self.entries)

    def apply(self, z) -> np.ndarray:
        """Vectorised B z; ``z`` may be a vector or an (n, d) batch of rows."""
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.d:
            raise ValueError(f"vector length {z.shape[-1]} does not match d={self.d}")
        if self.kind == "scaled-identity":
            return self.scale * z
        if self.kind == "diagonal":
            return self.entries * z
        return z @ self.entries.T

    def apply_list(self, z: Sequence[float]) -> list[float]:
        """B z with the summation order used by the compiled kernel."""
        d = self.d
        if len(z) != d:
            raise ValueError(f"vector length {len(z)} does not match d={d}")
        if self.kind == "scaled-identity":
            s = self.scale
            return [s * zi for zi in z]
        if self.kind == "diagonal":
            e = self.entries
            return [float(e[i]) * z[i] for i in range(d)]
        rows = self.entries.tolist()
        out = []
        for i in range(d):
            row = rows[i]
            acc = 0.0
            for j in range(d):
                acc += row[j] * z[j]
            out.append(acc)
        return out

    def gram_diagonal(self) -> np.ndarray:
        """Diagonal of B B^T."""
        if self.kind == "scaled-identity":
            return np.full(self.d, self.scale * self.scale)
        if self.kind == "diagonal":
            return self.entries * self.entries
        return np.einsum("ij,ij->i", self.entries, self.entries)

    def frobenius_sq(self) -> float:
        return float(np.sum(self.gram_diagonal()))

    def trace_gram(self) -> float:
        """Tr(B B^T)."""
        return self.frobenius_sq()

    def operator_norm(self, rtol: float = 1e-10, max_iter: int = 10_000) -> float:
        """sup_{y != 0} |By| / |y|; power iteration on B^T B for dense B."""
        if self._opnorm is not None:
            return self._opnorm
        if self.kind == "scaled-identity":
            val = abs(self.scale)
        elif self.kind == "diagonal":
            val = float(np.max(np.abs(self.entries)))
        else:
            val = _power_iteration_norm(self.entries, rtol, max_iter)
        self._opnorm = val
        return val


def _power_iteration_norm(B: np.ndarray, rtol: float, max_iter: int) -> float:
    G = B.T @ B
    if not np.any(G):
        return 0.0
    # deterministic start vector with no special alignment
    v = np.cos(np.arange(1, G.shape[0] + 1) * 0.7) + 1.5
    v /= np.linalg.norm(v)
    rho = 0.0
    for _ in range(max_iter):
        w = G @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # start vector in the null space; restart along the largest column
            v = G[:, np.argmax(np.abs(G).sum(axis=0))]
            v = v / np.linalg.norm(v)
            continue
        new = float(v @ w)
        v = w / nw
        if abs(new - rho) <= rtol * abs(new):
            rho = new
            break
        rho = new
    return math.sqrt(max(rho, 0.0))


def apply_diffusion(B: DiffusionMatrix, z) -> np.ndarray:
    return B.apply(z)


# ---------------------------------------------------------------------------
# nonlinearities

PSI_KINDS = ("sin", "arctan")
TARGET_KINDS = ("gaussian-bump", "cosine-mean")


@dataclass(frozen=True)
class ManufacturedForcing:
    """Parameters of f(x, v) = lam v - psi(v) + h(x) for a manufactured u*.

    ``h(x) = 1/2 Tr(B B^T Hess u*(x)) - lam u*(x) + psi(u*(x))`` so that u*
    solves 1/2 Tr(B B^T Hess u) = f(x, u).
    """

    target: str
    alpha: float
    amplitude: float
    psi: str
    psi_scale: float
    lam: float
    B: DiffusionMatrix = field(repr=False)

    def __post_init__(self):
        if self.target not in TARGET_KINDS:
            raise ValueError(f"unknown manufactured target {self.target!r}")
        if self.psi not in PSI_KINDS:
            raise ValueError(f"unknown psi {self.psi!r}")

    # constants shared with the kernel, computed once here
    @property
    def c4(self) -> float:
        return 4.0 * self.alpha * self.alpha

    @property
    def c2(self) -> float:
        return 2.0 * self.alpha * self.B.frobenius_sq()

    @property
    def nha(self) -> float:
        return -0.5 * self.amplitude

    def psi_value(self, v: float) -> float:
        if self.psi == "sin":
            return self.psi_scale * math.sin(v)
        return self.psi_scale * math.atan(v)

    def psi_batch(self, v):
        if self.psi == "sin":
            return self.psi_scale * np.sin(v)
        return self.psi_scale * np.arctan(v)

    def forcing(self, x: Sequence[float]) -> float:
        B = self.B
        d = B.d
        if self.target == "gaussian-bump":
            q = 0.0
            for xi in x:
                q += xi * xi
            us = self.amplitude * math.exp(-self.alpha * q)
            bq = _gram_quadratic_list(B, x, q)
            ht = 0.5 * us * (self.c4 * bq - self.c2)
        else:
            gd = B.gram_diagonal().tolist()
            sc = 0.0
            sw = 0.0
            for i in range(d):
                ci = math.cos(x[i])
                sc += ci
                sw += gd[i] * ci
            us = self.amplitude * sc / d
            ht = self.nha * sw / d
        return ht - self.lam * us + self.psi_value(us)

    def forcing_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        d = self.B.d
        if self.target == "gaussian-bump":
            q = np.sum(X * X, axis=1)
            us = self.amplitude * np.exp(-self.alpha * q)
            BtX = X @ self.B.to_dense()
            bq = np.sum(BtX * BtX, axis=1)
            ht = 0.5 * us * (self.c4 * bq - self.c2)
        else:
            C = np.cos(X)
            us = self.amplitude * C.sum(axis=1) / d
            ht = self.nha * (C @ self.B.gram_diagonal()) / d
        return ht - self.lam * us + self.psi_batch(us)


def _gram_quadratic_list(B: DiffusionMatrix, x, q: float) -> float:
    """|B^T x|^2 in kernel order; ``q`` is the precomputed |x|^2."""
    if B.kind == "scaled-identity":
        return B.scale * B.scale * q
    d = B.d
    if B.kind == "diagonal":
        e = B.entries.tolist()
        bq = 0.0
        for i in range(d):
            t = e[i] * x[i]
            bq += t * t
        return bq
    rows = B.entries.tolist()
    bq = 0.0
    for j in range(d):
        t = 0.0
        for i in range(d):
            t += rows[i][j] * x[i]
        bq += t * t
    return bq


class Nonlinearity:
    """A nonlinearity f(x, v) with a declared Lipschitz constant.

    Builtin kinds (evaluable by the compiled kernel):

    ``constant``      f = c
    ``affine``        f = slope * v + c
    ``linear``        f = <a, x>
    ``quadratic-x``   f = |x|^2
    ``manufactured``  f = lam v - psi(v) + h(x), see :class:`ManufacturedForcing`

    ``custom`` wraps an arbitrary Python callable ``f(x, v)``.
    """

    def __init__(self, kind: str, declared_L: float, *, c: float = 0.0, slope: float = 0.0,
                 a=None, manufactured: Optional[ManufacturedForcing] = None,
                 func: Optional[Callable] = None, batch_func: Optional[Callable] = None):
        if not (declared_L >= 0.0 and math.isfinite(declared_L)):
            raise ValueError(f"declared Lipschitz constant must be finite and >= 0, got {declared_L}")
        self.kind = kind
        self.declared_L = float(declared_L)
        self.c = float(c)
        self.slope = float(slope)
        self.a = None if a is None else np.array(a, dtype=float)
        self.manufactured = manufactured
        self.func = func
        self.batch_func = batch_func
        if kind == "linear" and self.a is None:
            raise ValueError("linear nonlinearity needs a coefficient vector")
        if kind == "manufactured" and manufactured is None:
            raise ValueError("manufactured nonlinearity needs its forcing parameters")
        if kind == "custom" and func is None:
            raise ValueError("custom nonlinearity needs a callable")
        if kind not in ("constant", "affine", "linear", "quadratic-x", "manufactured", "custom"):
            raise ValueError(f"unknown nonlinearity kind {kind!r}")
        self._a_list = None if self.a is None else self.a.tolist()

    @classmethod
    def constant(cls, c: float) -> "Nonlinearity":
        return cls("constant", 0.0, c=c)

    @classmethod
    def affine(cls, slope: float, c: float = 0.0, declared_L: Optional[float] = None) -> "Nonlinearity":
        return cls("affine", abs(slope) if declared_L is None else declared_L, slope=slope, c=c)

    @classmethod
    def linear(cls, a) -> "Nonlinearity":
        return cls("linear", 0.0, a=a)

    @classmethod
    def quadratic_x(cls) -> "Nonlinearity":
        return cls("quadratic-x", 0.0)

    @classmethod
    def custom(cls, func: Callable, declared_L: float, batch_func: Optional[Callable] = None):
        return cls("custom", declared_L, func=func, batch_func=batch_func)

    @property
    def v_independent(self) -> bool:
        return self.kind in ("constant", "linear", "quadratic-x")

    @property
    def builtin(self) -> bool:
        return self.kind != "custom"

    def __repr__(self):
        return f"Nonlinearity({self.kind}, L={self.declared_L})"

    def __call__(self, x, v: float) -> float:
        k = self.kind
        if k == "constant":
            return self.c
        if k == "affine":
            return self.slope * v + self.c
        if k == "linear":
            a = self._a_list
            s = 0.0
            for i in range(len(a)):
                s += a[i] * x[i]
            return s
        if k == "quadratic-x":
            s = 0.0
            for xi in x:
                s += xi * xi
            return s
        if k == "manufactured":
            m = self.manufactured
            return m.lam * v - m.psi_value(v) + m.forcing(x)
        return float(self.func(np.asarray(x, dtype=float), float(v)))

    def evaluate_batch(self, X, V) -> np.ndarray:
        """Vectorised f over rows of X with values V (no bit-exactness promise)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        V = np.broadcast_to(np.asarray(V, dtype=float), (X.shape[0],))
        k = self.kind
        if k == "constant":
            return np.full(X.shape[0], self.c)
        if k == "affine":
            return self.slope * V + self.c
        if k == "linear":
            return X @ self.a
        if k == "quadratic-x":
            return np.sum(X * X, axis=1)
        if k == "manufactured":
            m = self.manufactured
            return m.lam * V - m.psi_batch(V) + m.forcing_batch(X)
        if self.batch_func is not None:
            return np.asarray(self.batch_func(X, V), dtype=float)
        return np.array([float(self.func(X[i], float(V[i]))) for i in range(X.shape[0])])


@dataclass(frozen=True)
class Problem:
    """A semilinear problem instance.

    SFPE variant:     lam u - 1/2 Tr(B B^T Hess u) = f(x, u)
    ELLIPTIC variant: 1/2 Tr(B B^T Hess u) = f(x, u), solved through
                      g(x, v) = lam v - f(x, v) in the SFPE form.
    """

    d: int
    B: DiffusionMatrix
    f: Nonlinearity
    lam: float
    L: float
    variant: Variant = Variant.SFPE

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not (math.isfinite(self.lam) and math.isfinite(self.L)):
            raise ValueError("lambda and L must be finite")
        if self.L < 0.0:
            raise ValueError(f"L must be nonnegative, got {self.L}")
        if not self.lam > self.L:
            raise ValueError(f"need lambda > L for a contraction, got lambda={self.lam}, L={self.L}")
        if self.B.d != self.d:
            raise ValueError(f"B is {self.B.d}x{self.B.d} but d={self.d}")
        if self.f.kind == "linear" and len(self.f.a) != self.d:
            raise ValueError(f"linear coefficient has length {len(self.f.a)}, expected {self.d}")
        if self.f.kind == "manufactured" and self.f.manufactured.B.d != self.d:
            raise ValueError("manufactured forcing built for a different dimension")

    @classmethod
    def build(cls, B: DiffusionMatrix, f: Nonlinearity, lam: float, L: Optional[float] = None,
              variant=Variant.SFPE) -> "Problem":
        return cls(B.d, B, f, float(lam), f.declared_L if L is None else float(L), Variant(variant))

    def sfpe_g(self) -> Callable:
        """Scalar nonlinearity of the SFPE form (g for ELLIPTIC, f itself for SFPE)."""
        f = self.f
        if self.variant is Variant.SFPE:
            return f
        lam = self.lam

        def g(x, v):
            return lam * v - f(x, v)

        return g

    def sfpe_g_batch(self, X, V) -> np.ndarray:
        if self.variant is Variant.SFPE:
            return self.f.evaluate_batch(X, V)
        V = np.asarray(V, dtype=float)
        return self.lam * V - self.f.evaluate_batch(X, V)

    def as_sfpe(self) -> "Problem":
        """Equivalent SFPE-variant problem with a custom g = lam v - f."""
        if self.variant is Variant.SFPE:
            return self
        g = self.sfpe_g()
        return Problem(self.d, self.B,
                       Nonlinearity.custom(g, self.L, batch_func=self.sfpe_g_batch),
                       self.lam, self.L, Variant.SFPE)


def contraction_factor(lam: float, L: float, M: int) -> float:
    """Per-level error factor M^{-1/2} (1 + (1 + sqrt M) sqrt(L/lam))."""
    sM = math.sqrt(M)
    return (1.0 + (1.0 + sM) * math.sqrt(L / lam)) / sM


@dataclass(frozen=True)
class ValidationReport:
    lambda_gt_L: bool
    M_admissible: bool
    contraction: float
    M_threshold: float


def validate_problem(p: Problem, M: int) -> ValidationReport:
    """Check lam > L and that M is large enough for r(M) < 1.

    The admissibility flag r(M) < 1 is decided in exact arithmetic; it is the
    same condition as M > (sqrt lam + sqrt L)^2 / (sqrt lam - sqrt L)^2.
    """
    lam, L = p.lam, p.L
    if not (math.isfinite(lam) and math.isfinite(L)):
        raise ValueError("non-finite constants")
    if not lam > L:
        raise ValueError(f"lambda={lam} must exceed L={L}")
    if int(M) != M or M < 1:
        raise ValueError(f"M must be a positive integer, got {M}")
    r = contraction_factor(lam, L, int(M))
    threshold = (math.sqrt(lam) + math.sqrt(L)) ** 2 / (math.sqrt(lam) - math.sqrt(L)) ** 2
    return ValidationReport(True, _admissible_exact(lam, L, int(M)), r, threshold)


def _admissible_exact(lam: float, L: float, M: int) -> bool:
    """r(M) < 1 decided in exact rational arithmetic.

    r(M) < 1  <=>  (1 + sqrt M) sqrt(L/lam) < sqrt M - 1
              <=>  M > 1 and (1 + sqrt M)^2 L < (sqrt M - 1)^2 lam.
    Writing s = sqrt M, the last condition is (lam - L)(M + 1) > 2 s (lam + L),
    and both sides are nonnegative, so squaring is an equivalence.
    """
    from fractions import Fraction

    if M <= 1:
        return False
    lam_q, L_q = Fraction(lam), Fraction(L)
    lhs = (lam_q - L_q) * (M + 1)
    if lhs <= 0:
        return False
    rhs_sq = 4 * M * (lam_q + L_q) ** 2
    return lhs * lhs > rhs_sq


def lipschitz_probe(p: Problem, n_samples: int, box_radius: float, rng: StreamKey) -> float:
    """Largest observed excess of the Lipschitz residual over L|v - w|.

    Draws x in [-R, R]^d and v, w in [-R, R].  For SFPE the residual is
    |f(x,v) - f(x,w)|, for ELLIPTIC |f(x,v) - f(x,w) - lam (v - w)|.
    Returns 0 when no violation beyond rounding was observed.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    gen = rng.numpy_generator()
    R = float(box_radius)
    X = gen.uniform(-R, R, size=(n_samples, p.d))
    v = gen.uniform(-R, R, size=n_samples)
    w = gen.uniform(-R, R, size=n_samples)
    fv = p.f.evaluate_batch(X, v)
    fw = p.f.evaluate_batch(X, w)
    diff = fv - fw
    if p.variant is Variant.ELLIPTIC:
        diff = diff - p.lam * (v - w)
    excess = np.abs(diff) - p.L * np.abs(v - w)
    # rounding allowance for the cancellation in f(x,v) - f(x,w) - lam (v - w)
    slack = 64 * np.finfo(float).eps * (np.abs(fv) + np.abs(fw) + p.lam * np.abs(v - w) + 1.0)
    excess = np.where(excess > slack, excess, 0.0)
    return float(np.max(excess, initial=0.0))


# ---------------------------------------------------------------------------
# Lyapunov function V(x) = exp(eps (1 + |x|^2)^{1/2})

@dataclass(frozen=True)
class LyapunovFunction:
    epsilon: float
    d: int

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise ValueError("epsilon must be positive")

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise ValueError(f"expected a point of dimension {self.d}, got shape {x.shape}")
        return x

    def value(self, x) -> float:
        x = self._check(x)
        return math.exp(self.epsilon * math.sqrt(1.0 + float(x @ x)))

    def gradient(self, x) -> np.ndarray:
        x = self._check(x)
        s = math.sqrt(1.0 + float(x @ x))
        return self.epsilon * x / s * math.exp(self.epsilon * s)

    def hessian(self, x) -> np.ndarray:
        x = self._check(x)
        eps = self.epsilon
        q = 1.0 + float(x @ x)
        s = math.sqrt(q)
        xx = np.outer(x, x)
        return (eps * eps * xx / q + eps * np.eye(self.d) / s - eps * xx / (q * s)) * math.exp(eps * s)


def lyapunov_value(V: LyapunovFunction, x) -> float:
    return V.value(x)


def lyapunov_trace_bound(V: LyapunovFunction, B: DiffusionMatrix, x) -> tuple[float, float]:
    """Return (Tr(B B^T Hess V(x)), (eps^2 + eps d) |B|_op^2 V(x))."""
    if B.d != V.d:
        raise ValueError("dimension mismatch between V and B")
    Bd = B.to_dense()
    lhs = float(np.sum((Bd @ Bd.T) * V.hessian(x)))
    eps = V.epsilon
    rhs = (eps * eps + eps * V.d) * B.operator_norm() ** 2 * V.value(x)
    return lhs, rhs
