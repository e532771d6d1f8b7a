"""YAML run configuration for the command-line front end.

Top-level blocks: ``problem``, ``run``, ``study``, ``oracle``, ``output``.
Unknown keys anywhere are rejected.  Example::

    problem:
      d: 1
      lambda: 10
      variant: elliptic
      B: {kind: scaled-identity, scale: 1.0}
      nonlinearity: {kind: manufactured, target: gaussian-bump, psi: sin}
    run: {M: 10, n: 3, K: 20, seed: 0, x: [[0.0], [0.5]]}
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import yaml

from .core import DiffusionMatrix, Nonlinearity, Problem, Variant
from .oracle import ManufacturedSpec, manufacture


class ConfigError(ValueError):
    pass


PROBLEM_KEYS = {"d", "lambda", "L", "variant", "B", "nonlinearity"}
B_KEYS = {"kind", "scale", "entries"}
F_KEYS = {"kind", "c", "slope", "a", "target", "psi", "alpha", "psi_scale", "amplitude"}
RUN_KEYS = {"M", "n", "eps", "K", "seed", "x", "threads", "backend"}
STUDY_KEYS = {"d_list", "eps_list", "n_max", "n_mc", "x"}
ORACLE_KEYS = {"A", "nodes", "tol", "max_iter", "n_mc", "points"}
OUTPUT_KEYS = {"csv", "meta", "samples"}
TOP_KEYS = {"problem", "run", "study", "oracle", "output"}


def _check_keys(block, allowed, where):
    if block is None:
        return {}
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be a mapping")
    extra = sorted(set(block) - allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(map(str, extra))}")
    return block


def _num(v, what, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{what} must be a number, got {v!r}")
    if integer:
        if int(v) != v:
            raise ConfigError(f"{what} must be an integer, got {v!r}")
        return int(v)
    if not math.isfinite(v):
        raise ConfigError(f"{what} must be finite")
    return float(v)


@dataclass
class ProblemSpec:
    d: int = 1
    lam: float = 1.0
    L: Optional[float] = None
    variant: Optional[str] = None
    B: dict = field(default_factory=lambda: {"kind": "scaled-identity", "scale": 1.0})
    nonlinearity: dict = field(default_factory=lambda: {"kind": "constant", "c": 1.0})

    def manufactured_spec(self) -> Optional[ManufacturedSpec]:
        f = self.nonlinearity
        if f.get("kind") != "manufactured":
            return None
        return ManufacturedSpec(f.get("target", "gaussian-bump"), f.get("psi", "sin"),
                                float(f.get("alpha", 1.0)), float(f.get("psi_scale", 1.0)),
                                float(f.get("amplitude", 1.0)))

    def diffusion(self, d: Optional[int] = None) -> DiffusionMatrix:
        d = self.d if d is None else d
        b = _check_keys(self.B, B_KEYS, "problem.B")
        kind = b.get("kind", "scaled-identity")
        try:
            if kind == "scaled-identity":
                return DiffusionMatrix.scaled_identity(_num(b.get("scale", 1.0), "B.scale"), d)
            if kind in ("diagonal", "dense"):
                if "entries" not in b:
                    raise ConfigError(f"B of kind {kind} needs entries")
                if d != self.d:
                    raise ConfigError(f"B of kind {kind} cannot be resized to d={d}")
                return getattr(DiffusionMatrix, kind)(b["entries"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"problem.B: {exc}") from exc
        raise ConfigError(f"unknown B kind {kind!r}")

    def build(self, d: Optional[int] = None) -> Problem:
        """Problem instance, optionally at another dimension (scaled-identity B)."""
        B = self.diffusion(d)
        f = _check_keys(self.nonlinearity, F_KEYS, "problem.nonlinearity")
        kind = f.get("kind")
        try:
            spec = self.manufactured_spec()
            if spec is not None:
                if self.variant not in (None, "elliptic"):
                    raise ConfigError("manufactured problems use the elliptic variant")
                p = manufacture(spec, B, self.lam)
                return p if self.L is None else replace(p, L=self.L)
            if kind == "constant":
                nl = Nonlinearity.constant(_num(f.get("c", 1.0), "c"))
            elif kind == "affine":
                nl = Nonlinearity.affine(_num(f.get("slope", 0.0), "slope"),
                                         _num(f.get("c", 0.0), "c"))
            elif kind == "linear":
                a = f.get("a")
                if a is None:
                    raise ConfigError("linear nonlinearity needs 'a'")
                if not isinstance(a, list):
                    a = [a] * B.d
                nl = Nonlinearity.linear([_num(v, "a") for v in a])
            elif kind == "quadratic-x":
                nl = Nonlinearity.quadratic_x()
            else:
                raise ConfigError(f"unknown nonlinearity kind {kind!r}")
            variant = Variant((self.variant or "sfpe").upper())
            L = self.L
            if L is None and variant is Variant.ELLIPTIC:
                # Lipschitz constant of g(x, v) = lam v - f(x, v)
                L = abs(self.lam - nl.slope) if kind == "affine" else self.lam
            return Problem.build(B, nl, self.lam, L, variant)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"problem: {exc}") from exc


@dataclass
class RunConfig:
    problem: ProblemSpec
    M: int = 4
    n: Optional[int] = None
    eps: Optional[float] = None
    K: int = 10
    seed: int = 0
    x: list = field(default_factory=list)
    threads: int = 1
    backend: Optional[str] = None
    d_list: list = field(default_factory=list)
    eps_list: list = field(default_factory=list)
    n_max: int = 3
    n_mc: int = 100_000
    study_x: Optional[list] = None
    oracle: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    def points(self) -> list:
        """Evaluation points; the origin when none are configured."""
        if not self.x:
            return [[0.0] * self.problem.d]
        return self.x


def _points(v, d, where):
    if v is None:
        return []
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{where} must be a point or a list of points")
    pts = v if isinstance(v[0], list) else [v]
    out = []
    for pt in pts:
        if not isinstance(pt, list) or len(pt) != d:
            raise ConfigError(f"{where}: every point needs {d} coordinates")
        out.append([_num(c, where) for c in pt])
    return out


def parse_x_flag(text: str) -> list:
    try:
        return [float(t) for t in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"--x expects comma-separated numbers, got {text!r}") from exc


def parse_config(data) -> RunConfig:
    if data is None:
        data = {}
    top = _check_keys(data, TOP_KEYS, "config")
    pb = _check_keys(top.get("problem"), PROBLEM_KEYS, "problem")
    variant = pb.get("variant")
    if variant is not None:
        variant = str(variant).lower()
        if variant not in ("sfpe", "elliptic"):
            raise ConfigError(f"unknown variant {variant!r}")
    d = _num(pb.get("d", 1), "problem.d", integer=True)
    if d < 1:
        raise ConfigError("problem.d must be >= 1")
    ps = ProblemSpec(d, _num(pb.get("lambda", 1.0), "problem.lambda"),
                     None if pb.get("L") is None else _num(pb["L"], "problem.L"), variant,
                     pb.get("B") or {"kind": "scaled-identity", "scale": 1.0},
                     pb.get("nonlinearity") or {"kind": "constant", "c": 1.0})
    _check_keys(ps.B, B_KEYS, "problem.B")
    _check_keys(ps.nonlinearity, F_KEYS, "problem.nonlinearity")

    run = _check_keys(top.get("run"), RUN_KEYS, "run")
    study = _check_keys(top.get("study"), STUDY_KEYS, "study")
    oracle = _check_keys(top.get("oracle"), ORACLE_KEYS, "oracle")
    output = _check_keys(top.get("output"), OUTPUT_KEYS, "output")
    backend = run.get("backend")
    if backend not in (None, "auto", "python", "compiled"):
        raise ConfigError(f"unknown backend {backend!r}")
    cfg = RunConfig(
        ps,
        M=_num(run.get("M", 4), "run.M", integer=True),
        n=None if run.get("n") is None else _num(run["n"], "run.n", integer=True),
        eps=None if run.get("eps") is None else _num(run["eps"], "run.eps"),
        K=_num(run.get("K", 10), "run.K", integer=True),
        seed=_num(run.get("seed", 0), "run.seed", integer=True),
        x=_points(run.get("x"), d, "run.x"),
        threads=_num(run.get("threads", 1), "run.threads", integer=True),
        backend=backend,
        d_list=[_num(v, "study.d_list", integer=True) for v in study.get("d_list", [])],
        eps_list=[_num(v, "study.eps_list") for v in study.get("eps_list", [])],
        n_max=_num(study.get("n_max", 3), "study.n_max", integer=True),
        n_mc=_num(study.get("n_mc", 100_000), "study.n_mc", integer=True),
        study_x=(_points(study.get("x"), d, "study.x") or [None])[0],
        oracle=dict(oracle),
        output={k: str(v) for k, v in output.items()},
    )
    validate(cfg)
    return cfg


def validate(cfg: RunConfig):
    if cfg.M < 1:
        raise ConfigError("run.M must be >= 1")
    if cfg.n is not None and cfg.n < 0:
        raise ConfigError("run.n must be >= 0")
    if cfg.eps is not None and not cfg.eps > 0.0:
        raise ConfigError("run.eps must be positive")
    if cfg.K < 1:
        raise ConfigError("run.K must be >= 1")
    if cfg.threads < 1:
        raise ConfigError("run.threads must be >= 1")
    if any(d < 1 for d in cfg.d_list):
        raise ConfigError("study.d_list entries must be >= 1")
    if any(not e > 0.0 for e in cfg.eps_list):
        raise ConfigError("study.eps_list entries must be positive")
    cfg.problem.build()


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from exc
    return parse_config(data)


def describe(cfg: RunConfig) -> dict:
    """Plain-data descriptor of the problem for metadata sidecars."""
    ps = cfg.problem
    p = ps.build()
    return {"d": ps.d, "lambda": p.lam, "L": p.L, "variant": p.variant.value,
            "B": ps.B, "nonlinearity": ps.nonlinearity}
