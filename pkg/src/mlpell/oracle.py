"""Reference solutions: closed forms, manufactured solutions, a 1-D Picard solver.

All reference functions accept a single point of shape (d,) or a batch of
shape (n, d) and return a float or an (n,) array respectively.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import DiffusionMatrix, ManufacturedForcing, Nonlinearity, Problem, Variant
from .randomness import derive_stream


class OracleError(RuntimeError):
    pass


def _batch(x):
    X = np.asarray(x, dtype=float)
    return np.atleast_2d(X), X.ndim == 1


@dataclass(frozen=True)
class ManufacturedSpec:
    """A target solution u* together with a Lipschitz psi.

    target      ``gaussian-bump``: u*(x) = amplitude * exp(-alpha |x|^2)
                ``cosine-mean``:   u*(x) = amplitude * (1/d) sum_i cos(x_i)
    psi         ``sin`` or ``arctan``, multiplied by ``psi_scale``;
                Lip(psi) = |psi_scale|.
    """

    target: str = "gaussian-bump"
    psi: str = "sin"
    alpha: float = 1.0
    psi_scale: float = 1.0
    amplitude: float = 1.0

    @property
    def lipschitz(self) -> float:
        return abs(self.psi_scale)

    def value(self, x):
        X, single = _batch(x)
        if self.target == "gaussian-bump":
            out = self.amplitude * np.exp(-self.alpha * np.sum(X * X, axis=1))
        else:
            out = self.amplitude * np.mean(np.cos(X), axis=1)
        return float(out[0]) if single else out

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.target == "gaussian-bump":
            return -2.0 * self.alpha * x * self.value(x)
        return -self.amplitude * np.sin(x) / x.size

    def hessian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.target == "gaussian-bump":
            a = self.alpha
            return (4.0 * a * a * np.outer(x, x) - 2.0 * a * np.eye(x.size)) * self.value(x)
        return np.diag(-self.amplitude * np.cos(x) / x.size)

    def generator_term(self, B: DiffusionMatrix, x) -> float:
        """1/2 Tr(B B^T Hess u*(x)) from the closed-form Hessian."""
        Bd = B.to_dense()
        return 0.5 * float(np.sum((Bd @ Bd.T) * self.hessian(x)))


def manufacture(spec: ManufacturedSpec, B: DiffusionMatrix, lam: float) -> Problem:
    """ELLIPTIC problem whose exact solution is ``spec``'s target u*.

    f(x, v) = lam v - psi(v) + h(x) with
    h(x) = 1/2 Tr(B B^T Hess u*)(x) - lam u*(x) + psi(u*(x)).
    """
    if not lam > spec.lipschitz:
        raise ValueError(f"need lambda > Lip(psi) = {spec.lipschitz}, got {lam}")
    forcing = ManufacturedForcing(spec.target, float(spec.alpha), float(spec.amplitude), spec.psi,
                                  float(spec.psi_scale), float(lam), B)
    f = Nonlinearity("manufactured", spec.lipschitz, manufactured=forcing)
    return Problem(B.d, B, f, float(lam), spec.lipschitz, Variant.ELLIPTIC)


def closed_form_solution(f: Nonlinearity, B: DiffusionMatrix, lam: float) -> Callable:
    """Solution of lam u - 1/2 Tr(B B^T Hess u) = f for v-independent builtins.

    constant c  -> c / lam
    linear a    -> <a, x> / lam
    quadratic-x -> |x|^2 / lam + Tr(B B^T) / lam^2
    """
    if f.kind == "constant":
        c = f.c

        def u(x):
            X, single = _batch(x)
            out = np.full(X.shape[0], c / lam)
            return float(out[0]) if single else out
    elif f.kind == "linear":
        a = np.array(f.a)

        def u(x):
            X, single = _batch(x)
            out = (X @ a) / lam
            return float(out[0]) if single else out
    elif f.kind == "quadratic-x":
        shift = B.trace_gram() / lam**2

        def u(x):
            X, single = _batch(x)
            out = np.sum(X * X, axis=1) / lam + shift
            return float(out[0]) if single else out
    else:
        raise OracleError(f"no closed form for nonlinearity kind {f.kind!r}")
    return u


def reference_for(p: Problem, spec: Optional[ManufacturedSpec] = None) -> Callable:
    """Exact solution of ``p`` when one is known (manufactured or closed form)."""
    if spec is not None:
        return spec.value
    if p.variant is Variant.SFPE and p.f.v_independent:
        return closed_form_solution(p.f, p.B, p.lam)
    raise OracleError("no reference solution available for this problem")


# ---------------------------------------------------------------------------
# 1-D Picard quadrature solver

@dataclass
class GridFunction:
    nodes: np.ndarray
    values: np.ndarray
    A: float
    h: float
    residual: float = float("nan")
    iterations: int = 0
    history: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.nodes) % 2 == 0:
            raise ValueError("node count must be odd so the grid contains 0")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")

    def __call__(self, x):
        """Piecewise-linear interpolation, constant beyond [-A, A]."""
        X = np.asarray(x, dtype=float)
        if X.ndim == 0:
            return float(np.interp(X, self.nodes, self.values))
        pts = X[..., 0] if X.shape[-1] == 1 and X.ndim >= 1 else X
        out = np.interp(pts, self.nodes, self.values)
        return float(out) if np.ndim(out) == 0 else out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node", "value"])
        for z, v in zip(self.nodes, self.values):
            w.writerow([format(float(z), ".17g"), format(float(v), ".17g")])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "GridFunction":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["node", "value"]:
            raise ValueError("grid CSV must start with the header 'node,value'")
        data = np.array([[float(a), float(b)] for a, b in rows[1:]])
        nodes, values = data[:, 0], data[:, 1]
        A = float(nodes[-1])
        h = float(nodes[1] - nodes[0]) if len(nodes) > 1 else 0.0
        return cls(nodes, values, A, h)


def laplace_density(y, lam: float, b: float):
    """Density of b W_R with R ~ Exp(lam): sqrt(2 lam)/(2|b|) exp(-sqrt(2 lam)|y|/|b|)."""
    rate = math.sqrt(2.0 * lam) / abs(b)
    return 0.5 * rate * np.exp(-rate * np.abs(y))


def picard_solve_1d(p: Problem, A: float = 8.0, nodes: int = 2001, tol: float = 1e-8,
                    max_iter: int = 200) -> GridFunction:
    """Fixed point of u = (1/lam) E[g(x + b W_R, u(x + b W_R))] on a uniform grid.

    The expectation is a convolution with the Laplace density of b W_R,
    discretised by the trapezoidal rule on the grid spacing; the kernel
    weights are renormalised to sum to one.  u is extended by its edge values
    outside [-A, A].
    """
    if p.d != 1:
        raise ValueError("picard_solve_1d needs d = 1")
    if nodes < 3 or nodes % 2 == 0:
        raise ValueError("nodes must be odd and >= 3")
    b = float(p.B.to_dense()[0, 0])
    if b == 0.0:
        raise ValueError("diffusion coefficient must be nonzero")
    lam = p.lam
    if not lam > p.L:
        raise ValueError("need lambda > L")
    rate = math.sqrt(2.0 * lam) / abs(b)
    tail = 0.5 * math.exp(-rate * A / 2.0)  # mass of the kernel on (A/2, inf)
    if tail >= 1e-8:
        warnings.warn(f"kernel tail mass beyond A/2 is {tail:.2e} >= 1e-8; increase A", stacklevel=2)
    sfpe = p.as_sfpe()
    h = 2.0 * A / (nodes - 1)
    grid = -A + h * np.arange(nodes)
    grid[nodes // 2] = 0.0
    P = int(math.ceil(math.log(1e14) / rate / h))
    offsets = h * np.arange(-P, P + 1)
    w = h * laplace_density(offsets, lam, b)
    w /= w.sum()
    z = -A + h * np.arange(-P, nodes + P)
    X = z.reshape(-1, 1)

    u = np.zeros(nodes)
    history = []
    for it in range(1, max_iter + 1):
        u_ext = np.concatenate([np.full(P, u[0]), u, np.full(P, u[-1])])
        F = sfpe.f.evaluate_batch(X, u_ext)
        if not np.all(np.isfinite(F)):
            raise OracleError("non-finite nonlinearity values during Picard iteration")
        new = np.convolve(F, w, mode="valid") / lam
        change = float(np.max(np.abs(new - u)))
        history.append(change)
        u = new
        if change < tol:
            return GridFunction(grid, u, float(A), h, change, it, history)
    raise OracleError(f"Picard iteration did not converge in {max_iter} iterations "
                      f"(last change {history[-1]:.3e})")


def fixed_point_residual(u: Callable, p: Problem, x, n_mc: int, seed: int) -> tuple[float, float]:
    """|u(x) - (1/lam) MC-mean g(X, u(X))| with X = x + B W_R, and its 3-sigma half-width."""
    if n_mc < 100:
        raise ValueError("n_mc must be >= 100")
    x = np.asarray(x, dtype=float).reshape(-1)
    gen = derive_stream(seed, (7, 1)).numpy_generator()
    s = gen.exponential(1.0 / p.lam, size=n_mc)
    Z = gen.standard_normal((n_mc, p.d))
    X = x + np.sqrt(s)[:, None] * p.B.apply(Z)
    vals = p.sfpe_g_batch(X, u(X))
    est = float(np.mean(vals)) / p.lam
    ci = 3.0 * float(np.std(vals, ddof=1)) / math.sqrt(n_mc) / p.lam
    return abs(float(u(x)) - est), ci
