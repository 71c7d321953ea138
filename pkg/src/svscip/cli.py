"""Command-line driver: ``python -m svscip --problem kovasznay --p 7``.

Exit codes: 0 success, 2 configuration error, 3 solver abort, 4 IP/SCIP
equivalence failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .analysis import diagnostics
from .condense import SaddleSingularError
from .mesh import gen_crisscross, gen_wedge, load_mesh
from .problems import (
    KOVASZNAY_RECT, FlowProblem, Form, bisector_eddies,
    kovasznay_problem, moffatt_problem,
)
from .solve import (
    ABORTED, IP, SCIP, PenaltyConfig, discretize, ip_solve, sample_grid,
    scip_solve, solution_difference, write_field, write_history,
)

log = logging.getLogger("svscip")

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_EQUIV = 0, 2, 3, 4
EQUIV_TOL = 1e-8


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    problem: str = "kovasznay"
    mesh: Optional[str] = None
    nx: int = 4
    ny: int = 4
    p: int = 4
    lam: float = 1e3
    div_tol: float = 1e-10
    max_iters: int = 8
    method: str = SCIP
    history_out: Optional[str] = None
    field_out: Optional[str] = None
    grid: str = "41x33"
    diagnostics: Optional[str] = None
    nu: float = 0.1
    dirichlet: Optional[list] = None
    source: Optional[list] = None
    sweep_p: Optional[list] = None
    sweep_lambda: Optional[list] = None
    summary_out: Optional[str] = None

    def validate(self):
        if self.problem not in ("kovasznay", "moffatt", "custom"):
            raise ConfigError(f"unknown problem {self.problem!r}")
        if self.method not in (IP, SCIP, "both"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.p < 4:
            raise ConfigError("p must be >= 4")
        if not self.lam > 0:
            raise ConfigError("lambda must be positive")
        if self.max_iters < 1:
            raise ConfigError("max-iters must be >= 1")
        if self.div_tol < 0:
            raise ConfigError("div-tol must be nonnegative")
        if self.nx < 1 or self.ny < 1:
            raise ConfigError("nx and ny must be >= 1")
        if not self.nu > 0:
            raise ConfigError("nu must be positive")
        if self.problem == "custom" and (self.mesh is None or self.dirichlet is None):
            raise ConfigError("the custom problem needs a mesh file and Dirichlet expressions")
        parse_grid(self.grid)
        return self


def parse_grid(spec):
    try:
        nx, ny = (int(v) for v in str(spec).lower().split("x"))
    except ValueError:
        raise ConfigError(f"grid must look like NXxNY, got {spec!r}") from None
    if nx < 2 or ny < 2:
        raise ConfigError("grid needs at least 2 points per direction")
    return nx, ny


_EXPR_NS = {k: getattr(np, k) for k in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "pi",
                                        "sinh", "cosh", "tanh", "where")}


def _expr_field(exprs):
    if not isinstance(exprs, (list, tuple)) or len(exprs) != 2:
        raise ConfigError("vector fields need two expressions")
    try:
        code = [compile(str(e), "<config>", "eval") for e in exprs]
    except SyntaxError as exc:
        raise ConfigError(f"bad expression: {exc}") from None

    def f(x, y):
        ns = dict(_EXPR_NS, x=x, y=y)
        return np.array([np.broadcast_to(eval(c, {"__builtins__": {}}, ns), np.shape(x)) for c in code],
                        dtype=float)

    try:
        f(np.zeros(2), np.zeros(2))
    except Exception as exc:  # anything the expression raises is a config problem
        raise ConfigError(f"bad expression: {exc}") from None
    return f


def build_problem(cfg):
    if cfg.problem == "kovasznay":
        return kovasznay_problem(cfg.nu)
    if cfg.problem == "moffatt":
        return moffatt_problem()
    g = _expr_field(cfg.dirichlet)
    f = _expr_field(cfg.source) if cfg.source else None
    return FlowProblem("custom", Form("stokes", nu=cfg.nu), dirichlet=g, source=f)


def build_mesh(cfg):
    if cfg.mesh:
        return load_mesh(cfg.mesh)
    if cfg.problem == "moffatt":
        return gen_wedge()
    return gen_crisscross(cfg.nx, cfg.ny, KOVASZNAY_RECT)


# --------------------------------------------------------------------------

def _solve(mesh, cfg, problem, method, disc):
    pc = PenaltyConfig(lam=cfg.lam, div_tol=cfg.div_tol, max_iters=cfg.max_iters, method=method)
    fn = ip_solve if method == IP else scip_solve
    return fn(mesh, cfg.p, problem, pc, disc=disc)


def _suffixed(path, tag):
    p = Path(path)
    return str(p.with_name(f"{p.stem}_{tag}{p.suffix}"))


def _report(sol, out):
    last = sol.history[-1]
    line = (f"{sol.method}: status={sol.status} iterations={len(sol.history)} "
            f"div_norm={last.div_norm:.3e} system_size={sol.meta['system_size']} "
            f"factorizations={sol.meta['factorizations']}")
    if last.rel_H1_err is not None:
        line += f" rel_H1_err={last.rel_H1_err:.3e} rel_L2_press_err={last.rel_L2_press_err:.3e}"
    print(line, file=out)


def run(cfg, out=None):
    """Run one configuration; returns the exit status."""
    out = out or sys.stdout
    cfg.validate()
    mesh = build_mesh(cfg)
    problem = build_problem(cfg)
    disc = discretize(mesh, cfg.p, problem)
    methods = [IP, SCIP] if cfg.method == "both" else [cfg.method]
    sols = {m: _solve(mesh, cfg, problem, m, disc) for m in methods}
    status = EXIT_OK
    for m, sol in sols.items():
        _report(sol, out)
        if cfg.history_out:
            path = cfg.history_out if len(sols) == 1 else _suffixed(cfg.history_out, m)
            write_history(sol.history, path)
        if sol.status == ABORTED:
            print(f"{m}: aborted: {sol.meta['abort_reason']}", file=out)
            status = EXIT_ABORT
    main_sol = sols[SCIP] if SCIP in sols else sols[IP]
    if cfg.method == "both":
        du, dq = solution_difference(sols[IP], sols[SCIP])
        print(f"equivalence: rel_H1_diff={du:.3e} rel_L2_press_diff={dq:.3e}", file=out)
        if not du <= EQUIV_TOL and status == EXIT_OK:
            status = EXIT_EQUIV
    if cfg.problem == "moffatt":
        ed = bisector_eddies(main_sol)
        ratios = " ".join(f"{r:.1f}" for r in ed.ratios) or "none"
        print(f"eddies: count={ed.count} peak_ratios={ratios}", file=out)
    if cfg.field_out:
        nx, ny = parse_grid(cfg.grid)
        write_field(sample_grid(main_sol, nx, ny), cfg.field_out)
    if cfg.diagnostics is not None:
        elements = main_sol.meta.get("elements")
        rep = diagnostics(mesh, cfg.p, elements)
        out.write(rep.to_text())
        if cfg.diagnostics != "-":
            Path(cfg.diagnostics).write_text(rep.to_keyvalue())
    return status


SUMMARY_COLUMNS = ("p", "lambda", "iterations", "status", "final_div_norm", "rel_H1_err",
                   "rel_L2_press_err", "mean_decay_ratio")


def decay_ratios(history, floor=1e-12):
    d = [r.div_norm for r in history]
    return [b / a for a, b in zip(d[:-1], d[1:]) if a > floor and b > floor]


def sweep(cfg, p_list, lam_list, out=None):
    """Run every ``(p, lambda)`` pair; returns ``(exit status, summary rows)``."""
    out = out or sys.stdout
    cfg.validate()
    mesh = build_mesh(cfg)
    problem = build_problem(cfg)
    rows = []
    status = EXIT_OK
    best_err = {}
    for p in p_list:
        disc = discretize(mesh, p, problem)
        for lam in lam_list:
            c = replace(cfg, p=p, lam=lam).validate()
            method = IP if cfg.method == IP else SCIP
            sol = _solve(mesh, c, problem, method, disc)
            last = sol.history[-1]
            if cfg.history_out:
                write_history(sol.history, _suffixed(cfg.history_out, f"p{p}_lam{lam:g}"))
            ratios = decay_ratios(sol.history)
            rows.append({
                "p": p, "lambda": f"{lam:g}", "iterations": len(sol.history), "status": sol.status,
                "final_div_norm": f"{last.div_norm:.6e}",
                "rel_H1_err": "" if last.rel_H1_err is None else f"{last.rel_H1_err:.6e}",
                "rel_L2_press_err": "" if last.rel_L2_press_err is None else f"{last.rel_L2_press_err:.6e}",
                "mean_decay_ratio": f"{float(np.exp(np.mean(np.log(ratios)))):.6e}" if ratios else "",
            })
            print(f"p={p} lambda={lam:g} status={sol.status} div_norm={last.div_norm:.3e}"
                  + (f" rel_H1_err={last.rel_H1_err:.3e}" if last.rel_H1_err is not None else "")
                  + (" ratios=" + ",".join(f"{r:.2e}" for r in ratios)), file=out)
            if sol.status == ABORTED:
                status = EXIT_ABORT
            if last.rel_H1_err is not None:
                lower = [e for q, e in best_err.items() if q < p]
                if lower and last.rel_H1_err > min(lower):
                    msg = (f"p={p}: plateau error {last.rel_H1_err:.2e} exceeds the best lower-degree "
                           f"plateau {min(lower):.2e}; likely conditioning of the Bernstein basis")
                    warnings.warn(msg, RuntimeWarning, stacklevel=2)
                    print(f"warning: {msg}", file=out)
                best_err[p] = min(best_err.get(p, np.inf), last.rel_H1_err)
    if cfg.summary_out:
        with open(cfg.summary_out, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
            wr.writeheader()
            wr.writerows(rows)
    return status, rows


# --------------------------------------------------------------------------

def _float_list(s):
    try:
        return [float(v) for v in s.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


def _int_list(s):
    try:
        return [int(v) for v in s.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def make_parser():
    ap = argparse.ArgumentParser(prog="svscip", description=(
        "Scott-Vogelius flow solver with the iterated penalty method and its "
        "statically condensed variant."))
    ap.add_argument("--config", help="JSON file with any of the options below (flags override it)")
    ap.add_argument("--problem", choices=["kovasznay", "moffatt", "custom"])
    ap.add_argument("--mesh", help="mesh file; default is the problem's generated mesh")
    ap.add_argument("--nx", type=int, help="criss-cross cells in x (kovasznay)")
    ap.add_argument("--ny", type=int, help="criss-cross cells in y (kovasznay)")
    ap.add_argument("--p", type=int, help="polynomial degree (>= 4)")
    ap.add_argument("--lambda", dest="lam", type=float, help="penalty parameter")
    ap.add_argument("--div-tol", dest="div_tol", type=float)
    ap.add_argument("--max-iters", dest="max_iters", type=int)
    ap.add_argument("--method", choices=[IP, SCIP, "both"])
    ap.add_argument("--history-out", dest="history_out", help="iteration history CSV")
    ap.add_argument("--field-out", dest="field_out", help="sampled field table 'x y u1 u2 p'")
    ap.add_argument("--grid", help="sampling grid NXxNY for --field-out")
    ap.add_argument("--diagnostics", nargs="?", const="-",
                    help="print mesh/operator diagnostics; with a path also write key=value file")
    ap.add_argument("--nu", type=float, help="viscosity")
    ap.add_argument("--sweep-p", dest="sweep_p", type=_int_list, help="run a sweep over these degrees")
    ap.add_argument("--sweep-lambda", dest="sweep_lambda", type=_float_list,
                    help="penalty values for the sweep")
    ap.add_argument("--summary-out", dest="summary_out", help="sweep summary CSV")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(args):
    base = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        if not isinstance(base, dict):
            raise ConfigError("config file must hold a JSON object")
        if "lambda" in base:
            base["lam"] = base.pop("lambda")
        base = {k.replace("-", "_"): v for k, v in base.items()}
    known = {f.name for f in fields(RunConfig)}
    unknown = set(base) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for k in known:
        v = getattr(args, k, None)
        if v is not None:
            base[k] = v
    try:
        return RunConfig(**base).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def main(argv=None):
    ap = make_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if cfg.sweep_p or cfg.sweep_lambda:
            status, _ = sweep(cfg, cfg.sweep_p or [cfg.p], cfg.sweep_lambda or [cfg.lam])
            return status
        return run(cfg)
    except SaddleSingularError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (ValueError, OSError) as exc:
        # ConfigError and MeshError are ValueErrors; so are problem-data checks
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
