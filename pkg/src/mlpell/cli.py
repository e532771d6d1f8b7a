"""Command-line front end: ``mlpell <subcommand> [config.yaml] [flags]``.

Exit codes: 0 success, 1 check failure, 2 config error, 3 budget or
overflow guard, 4 numeric fault.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from typing import Optional

import numpy as np

from . import __version__
from .analysis import choose_level, complexity_study, estimate_F, rate_study
from .checks import run_checks
from .config import (ConfigError, RunConfig, describe, load_config, parse_config, parse_x_flag,
                     validate)
from .core import validate_problem
from .costs import CostOverflowError
from .mlp import NonFiniteError, SampleBudgetExceeded, mlp_replicate
from .oracle import OracleError, fixed_point_residual, picard_solve_1d, reference_for

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_GUARD, EXIT_NUMERIC = 0, 1, 2, 3, 4


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _emit(text: str, path: Optional[str]):
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _write_meta(cfg: RunConfig, extra: dict, default_from: Optional[str]):
    path = cfg.output.get("meta") or (default_from + ".meta.json" if default_from else None)
    if not path:
        return
    meta = {"version": __version__, "problem": describe(cfg), "M": cfg.M, "K": cfg.K,
            "seed": cfg.seed}
    meta.update(extra)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def _reference(cfg: RunConfig, p):
    spec = cfg.problem.manufactured_spec()
    try:
        return reference_for(p, spec)
    except OracleError:
        if p.d != 1:
            raise ConfigError("no reference solution for this problem (need a manufactured, "
                              "v-independent SFPE or one-dimensional problem)")
        o = cfg.oracle
        return picard_solve_1d(p, float(o.get("A", 8.0)), int(o.get("nodes", 2001)),
                               float(o.get("tol", 1e-8)), int(o.get("max_iter", 200)))


def _level(cfg: RunConfig, p, x) -> int:
    if cfg.n is not None:
        return cfg.n
    if cfg.eps is None:
        raise ConfigError("run.n or run.eps is required")
    rep = validate_problem(p, cfg.M)
    if not rep.M_admissible:
        raise ConfigError(f"M={cfg.M} is not admissible (r(M)={rep.contraction:.6g})")
    F, ci = estimate_F(p, x, cfg.n_mc, cfg.seed)
    kappa1 = (F + ci) / (math.sqrt(p.lam) - math.sqrt(p.L))
    return choose_level(cfg.eps, kappa1, rep.contraction, 1)


def cmd_estimate(cfg: RunConfig, args) -> int:
    p = cfg.problem.build()
    pts = cfg.points()
    n = _level(cfg, p, np.array(pts[0]))
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["point", "x", "n", "M", "K", "mean", "ci", "cost_total", "gaussians",
                "exponentials", "f_evals"])
    samples_buf = io.StringIO()
    sw = csv.writer(samples_buf, lineterminator="\n")
    sw.writerow(["point", "seed", "value"])
    for i, x in enumerate(pts):
        res = mlp_replicate(p, cfg.M, n, x, cfg.K, cfg.seed, threads=cfg.threads,
                            backend=cfg.backend)
        vals = np.array([r.value for r in res])
        ci = 3.0 * float(np.std(vals, ddof=1)) / math.sqrt(len(vals)) if len(vals) > 1 else 0.0
        c = res[0].cost
        w.writerow([i, ";".join(_fmt(v) for v in x), n, cfg.M, cfg.K, _fmt(vals.mean()), _fmt(ci),
                    c.total, c.gaussians, c.exponentials, c.f_evals])
        for j, v in enumerate(vals):
            sw.writerow([i, cfg.seed + j, _fmt(v)])
    _emit(out.getvalue(), cfg.output.get("csv"))
    if cfg.output.get("samples"):
        _emit(samples_buf.getvalue(), cfg.output["samples"])
    return EXIT_OK


def cmd_rate_study(cfg: RunConfig, args) -> int:
    p = cfg.problem.build()
    ref = _reference(cfg, p)
    x = np.array(cfg.study_x if cfg.study_x is not None else cfg.points()[0])
    report = rate_study(p, ref, x, cfg.M, cfg.n_max, cfg.K, cfg.seed, n_mc_F=cfg.n_mc,
                        threads=cfg.threads, backend=cfg.backend)
    _emit(report.to_csv(timing=args.timing), cfg.output.get("csv"))
    _write_meta(cfg, {"kind": "rate", "x": x.tolist(), "n_max": cfg.n_max,
                      "all_bounds_ok": report.all_checks_ok}, cfg.output.get("csv"))
    failed = [r.n for r in report.rows if not (r.check_ok and r.cost_matches)]
    if failed:
        print(f"bound or cost check failed at n = {failed}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_complexity_study(cfg: RunConfig, args) -> int:
    d_list = cfg.d_list or [cfg.problem.d]
    eps_list = cfg.eps_list or ([cfg.eps] if cfg.eps is not None else [])
    if not eps_list:
        raise ConfigError("study.eps_list (or run.eps) is required")

    def family(d):
        p = cfg.problem.build(d)
        return p, _reference(cfg, p)

    report = complexity_study(family, d_list, eps_list, cfg.M, cfg.K, cfg.seed, n_mc_F=cfg.n_mc,
                              threads=cfg.threads, backend=cfg.backend)
    _emit(report.to_csv(timing=args.timing), cfg.output.get("csv"))
    summary = {"kind": "complexity", "exponents": report.exponents, "stderr": report.stderr,
               "predicted_alpha": report.predicted_alpha,
               "cost_affine_in_d": report.notes["cost_affine_in_d"],
               "all_checks_ok": report.all_checks_ok}
    _write_meta(cfg, summary, cfg.output.get("csv"))
    if report.exponents is None:
        print("single cell: no exponent fit", file=sys.stderr)
    else:
        for k in sorted(report.exponents):
            print(f"exponent[{k}] = {report.exponents[k]:.6g} +/- {report.stderr[k]:.3g}",
                  file=sys.stderr)
    print(f"predicted alpha = {report.predicted_alpha:.6g}", file=sys.stderr)
    return EXIT_OK if report.all_checks_ok else EXIT_CHECK


def cmd_oracle(cfg: RunConfig, args) -> int:
    p = cfg.problem.build()
    if p.d != 1:
        raise ConfigError("the quadrature oracle needs problem.d = 1")
    o = cfg.oracle
    grid = picard_solve_1d(p, float(o.get("A", 8.0)), int(o.get("nodes", 2001)),
                           float(o.get("tol", 1e-8)), int(o.get("max_iter", 200)))
    _emit(grid.to_csv(), cfg.output.get("csv"))
    n_mc = int(o.get("n_mc", 10_000))
    points = o.get("points", [0.0])
    lines = [f"iterations = {grid.iterations}", f"last change = {grid.residual:.6e}"]
    residuals = []
    for z in points:
        r, ci = fixed_point_residual(grid, p, [float(z)], n_mc, cfg.seed)
        residuals.append([float(z), r, ci])
        lines.append(f"residual at {float(z):g} = {r:.3e} (ci {ci:.3e})")
    extra = {"kind": "oracle", "iterations": grid.iterations, "last_change": grid.residual,
             "residuals": residuals}
    spec = cfg.problem.manufactured_spec()
    if spec is not None:
        err = float(np.max(np.abs(grid.values - spec.value(grid.nodes.reshape(-1, 1)))))
        extra["sup_error"] = err
        lines.append(f"sup error vs exact = {err:.3e}")
    _write_meta(cfg, extra, cfg.output.get("csv"))
    print("\n".join(lines), file=sys.stderr)
    return EXIT_OK


def cmd_check(cfg: Optional[RunConfig], args) -> int:
    only = [s for s in (args.only or "").split(",") if s]
    problem = cfg.problem.build() if cfg is not None else None
    try:
        results = run_checks(only, problem)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from exc
    for r in results:
        print(f"{r.name:<12}{'pass' if r.ok else 'FAIL':<6}{r.detail}")
    return EXIT_OK if all(r.ok for r in results) else EXIT_CHECK


COMMANDS = {
    "estimate": cmd_estimate,
    "rate-study": cmd_rate_study,
    "complexity-study": cmd_complexity_study,
    "oracle": cmd_oracle,
    "check": cmd_check,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mlpell", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"mlpell {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", nargs="?" if name == "check" else None,
                        help="YAML configuration file")
        sp.add_argument("--M", type=int)
        sp.add_argument("--n", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--eps", type=float)
        sp.add_argument("--x", help="evaluation point as 'v1,v2,...'")
        sp.add_argument("--threads", type=int)
        sp.add_argument("--timing", action="store_true", help="fill the wall_ms column")
        if name == "check":
            sp.add_argument("--only", help="comma-separated subset of checks")
    return ap


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    for key in ("M", "n", "seed", "eps", "threads"):
        v = getattr(args, key)
        if v is not None:
            setattr(cfg, key, v)
    if args.eps is not None and args.n is None:
        cfg.n = None
    if args.x is not None:
        pt = parse_x_flag(args.x)
        if len(pt) != cfg.problem.d:
            raise ConfigError(f"--x has {len(pt)} coordinates, problem has d={cfg.problem.d}")
        cfg.x = [pt]
        cfg.study_x = pt
    validate(cfg)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is None:
            cfg = None
            if any(getattr(args, k) is not None for k in ("M", "n", "seed", "eps", "x", "threads")):
                cfg = _apply_flags(parse_config({}), args)
        else:
            cfg = _apply_flags(load_config(args.config), args)
        return COMMANDS[args.command](cfg, args)
    except (SampleBudgetExceeded, CostOverflowError, OverflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (NonFiniteError, OracleError, ArithmeticError) as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
