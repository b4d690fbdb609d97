"""Command-line entry point ``afred <command> [--config path] [flags]``.

Exit codes: 0 when every audit passes, 1 on an audit failure (the report is
still written, with ``"passed": false``), 2 on a usage or configuration error.
"""

import argparse
import csv
import io
import itertools
import json
import math
import os
import sys
import time
from importlib import resources

import jsonschema
import numpy as np

from . import __version__
from .diagnostics import SamplePlan, adiabatic_regularity_audit, estimate_moduli, verify_family
from .errors import AfredError, ConfigError
from .models import FAMILIES, get_family, strip_aux_forward, strip_aux_inverse, strip_boundary_defect
from .reduction import (GridError, brute_force_zeros, find_reduced_zeros, reduce_grid, regularity_profile,
                        zero_equivalence)
from .sampling import halton
from .solver import Solver, point_box, sample_radii
from .spaces import TangentVector, norm_lower_bound_audit

COMMANDS = ("verify", "reduce", "zeros", "profile", "strip-check")
DEFAULTS = {"family_params": {}, "tol": 1e-10, "zero_tol": 1e-8, "match_tol": 1e-6, "theta": 0.5,
            "n_eps": 16, "n_dirs": 256, "n_gamma": 8, "levels": 10, "level": 1, "n_samples": 100,
            "beyond_plan": "solve", "out_dir": "."}


def load_schema(name):
    return json.loads(resources.files("afred").joinpath("schemas", name).read_text())


# serialization ---------------------------------------------------------------

def to_plain(obj):
    """Convert numpy scalars/arrays, tuples and report objects into JSON-ready values."""
    if hasattr(obj, "to_dict"):
        return to_plain(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def format_float(x):
    """17 significant digits; non-finite values become strings."""
    if math.isnan(x):
        return '"NaN"'
    if math.isinf(x):
        return '"Infinity"' if x > 0 else '"-Infinity"'
    return format(x, ".17g")


def dumps(obj, indent=0):
    """Deterministic JSON text with 17-significant-digit floats."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(k)}: {dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, float):
        return format_float(obj)
    return json.dumps(obj)


def _finite_for_schema(obj):
    """Mirror of the on-disk encoding, used for schema validation."""
    if isinstance(obj, dict):
        return {k: _finite_for_schema(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite_for_schema(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return json.loads(format_float(obj))
    return obj


def write_report(report, out_dir, meta):
    """Write ``report.json`` (validated) and the ``report.meta.json`` sidecar."""
    plain = to_plain(report)
    jsonschema.validate(_finite_for_schema(plain), load_schema("report.schema.json"))
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "report.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(plain) + "\n")
    with open(os.path.join(out_dir, "report.meta.json"), "w", encoding="utf-8") as fh:
        fh.write(dumps(to_plain(meta)) + "\n")
    return path


def grid_csv(result, m, dK, dC):
    """CSV text with header ``epsilon..., k..., f..., df..., residual, iterations``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ([f"epsilon_{i}" for i in range(m)] + [f"k_{i}" for i in range(dK)] + [f"f_{i}" for i in range(dC)]
              + [f"df_{i}_{j}" for i in range(dC) for j in range(dK)] + ["residual", "iterations"])
    w.writerow(header)
    for row in result.grid:
        eps = [format(float(x), ".17g") for x in row.epsilon]
        k = [format(float(x), ".17g") for x in row.k]
        if isinstance(row, GridError):
            w.writerow(eps + k + [""] * (dC + dC * dK + 2))
            continue
        f = [format(float(x), ".17g") for x in row.f]
        df = [format(float(x), ".17g") for x in row.df.ravel()]
        w.writerow(eps + k + f + df + [format(float(row.residual), ".17g"), str(row.iterations)])
    return buf.getvalue()


# argument handling -----------------------------------------------------------

def _grid_spec(text):
    """``lo:hi:n`` (inclusive linspace) or a comma list of values."""
    try:
        if ":" in text:
            lo, hi, n = text.split(":")
            n = int(n)
            if n < 1:
                raise ValueError
            return [float(x) for x in np.linspace(float(lo), float(hi), n)]
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid spec {text!r}; use lo:hi:n or a,b,c") from None


def _vector(text):
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad parameter vector {text!r}") from None


def _param(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError("family parameters are key=value")
    k, v = text.split("=", 1)
    try:
        v = json.loads(v)
    except json.JSONDecodeError:
        pass
    return k, v


def build_parser():
    p = argparse.ArgumentParser(prog="afred", description="Audits and finite-dimensional reductions of "
                                "adiabatic Fredholm families.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--family", choices=sorted(FAMILIES))
    p.add_argument("--family-param", dest="family_params", action="append", type=_param, metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--zero-tol", dest="zero_tol", type=float)
    p.add_argument("--match-tol", dest="match_tol", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--eps", action="append", type=_vector, metavar="E1[,E2...]",
                   help="parameter point; repeat for several points")
    p.add_argument("--tau", type=float, help="second parameter appended to each --eps (toy families)")
    p.add_argument("--k-grid", dest="k_grid", action="append", type=_grid_spec, metavar="LO:HI:N",
                   help="grid for one kernel coordinate; repeat per coordinate")
    p.add_argument("--k-radius", dest="k_radius", type=float)
    p.add_argument("--n-eps", dest="n_eps", type=int)
    p.add_argument("--n-dirs", dest="n_dirs", type=int)
    p.add_argument("--n-gamma", dest="n_gamma", type=int)
    p.add_argument("--levels", type=int)
    p.add_argument("--level", type=int)
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--beyond-plan", dest="beyond_plan", choices=("record", "solve"))
    p.add_argument("--workers", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    return p


def resolve_config(args):
    """Defaults, then the config file, then flags; validated against the config schema."""
    cfg = {"command": args.command}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg.update(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        cfg["command"] = args.command
    flags = {k: v for k, v in vars(args).items() if v is not None and k not in ("config", "command", "tau")}
    if "family_params" in flags:
        flags["family_params"] = {**cfg.get("family_params", {}), **dict(flags["family_params"])}
    cfg.update(flags)
    if args.tau is not None:
        cfg["eps"] = [list(e) + [args.tau] for e in cfg.get("eps", [[0.0]])]
    if "seed" not in cfg:
        cfg["seed"] = 0
    try:
        jsonschema.validate(cfg, load_schema("config.schema.json"))
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid config: {exc.message}") from exc
    if "family" not in cfg:
        raise ConfigError("a family is required")
    out = {**DEFAULTS, **cfg}
    if "workers" not in cfg:
        env = os.environ.get("AFRED_WORKERS")
        try:
            out["workers"] = int(env) if env else 1
        except ValueError:
            raise ConfigError(f"AFRED_WORKERS={env!r} is not an integer") from None
    return out


# commands --------------------------------------------------------------------

def _plan(cfg):
    return SamplePlan(n_eps=cfg["n_eps"], n_dirs=cfg["n_dirs"], n_gamma=cfg["n_gamma"], levels=cfg["levels"],
                      seed=cfg["seed"])


def _eps_list(fam, cfg):
    pts = cfg.get("eps") or [fam.delta.distinguished_zero.tolist()]
    out = []
    for e in pts:
        e = np.array(e, dtype=float)
        if e.shape != (fam.delta.m,):
            raise ConfigError(f"parameter {e.tolist()} has {e.size} components, family needs {fam.delta.m}")
        out.append(e)
    return out


def _k_grid(cfg, dK, default_radius):
    specs = cfg.get("k_grid")
    if not specs and dK > 2:
        # a product grid is exponential in dim K: use the origin and +-0.9 r_K on each axis
        axes = 0.9 * default_radius * np.eye(dK)
        return [np.zeros(dK)] + [s * a for a in axes for s in (-1.0, 1.0)]
    if not specs:
        specs = [list(np.linspace(-0.9 * default_radius, 0.9 * default_radius, 5))] * dK
    if len(specs) != dK:
        raise ConfigError(f"need {dK} --k-grid specs (one per kernel coordinate), got {len(specs)}")
    return [np.array(p) for p in itertools.product(*specs)]


def _solver_for(fam, cfg, eps_list):
    hi = np.max(np.array(eps_list), axis=0)
    plan = sample_radii(fam, theta=cfg["theta"], box=point_box(fam, hi), seed=cfg["seed"])
    return Solver(fam, plan=plan), plan


def cmd_verify(fam, cfg):
    rep = verify_family(fam, _plan(cfg))
    consts = estimate_moduli(fam, report=rep)
    return {"definition": rep, "constants": consts}, rep.failed()


def cmd_reduce(fam, cfg):
    eps_list = _eps_list(fam, cfg)
    solver, plan = _solver_for(fam, cfg, eps_list)
    ks = _k_grid(cfg, solver.kc.dim_K, plan.r_K)
    res = reduce_grid(fam, eps_list, ks, solver=solver, tol=cfg["tol"], beyond_plan=cfg["beyond_plan"],
                      workers=cfg["workers"])
    errors = [g for g in res.errors() if not (cfg["beyond_plan"] == "record" and g.error == "OutOfDomain")]
    failed = ["grid"] if errors else []
    csv_text = grid_csv(res, fam.delta.m, solver.kc.dim_K, solver.kc.dim_C)
    return {"reduction": res, "uncertified_points": sum(1 for r in res.rows() if not r.certified)}, failed, csv_text


def cmd_zeros(fam, cfg):
    eps_list = _eps_list(fam, cfg)
    solver, plan = _solver_for(fam, cfg, eps_list)
    radius = cfg.get("k_radius", plan.r_K)
    mode = "solve" if radius > plan.r_K or cfg["beyond_plan"] == "solve" else "error"
    out, failed = [], []
    for e in eps_list:
        z = find_reduced_zeros(fam, e, solver=solver, plan=plan, zero_tol=cfg["zero_tol"],
                               match_tol=cfg["match_tol"], radius=radius, seed=cfg["seed"], beyond_plan=mode)
        b = brute_force_zeros(fam, e, plan.delta_sigma, seed=cfg["seed"], zero_tol=cfg["zero_tol"],
                              match_tol=cfg["match_tol"], kc=solver.kc, k_radius=radius)
        audit = zero_equivalence(fam, z, b, solver.kc, solver=solver, match_tol=cfg["match_tol"])
        if not audit.passed:
            failed.append(f"zero_equivalence@{e.tolist()}")
        out.append({"epsilon": e, "reduced": z, "full": b, "audit": audit})
    return {"plan": plan, "search_radius": radius, "zeros": out}, failed


def cmd_profile(fam, cfg):
    path = _eps_list(fam, cfg) if cfg.get("eps") else dyadic_default(fam, cfg["levels"])
    hi = np.max(np.array(path), axis=0)
    plan = sample_radii(fam, theta=cfg["theta"], box=point_box(fam, hi), seed=cfg["seed"])
    solver = Solver(fam, plan=plan)
    ks = _k_grid(cfg, solver.kc.dim_K, plan.r_K)
    rep = regularity_profile(fam, path, ks, order=2, plan=plan, solver=solver)
    return {"profile": rep}, ([] if rep.passed else ["regularity_profile"])


def dyadic_default(fam, levels):
    if fam.delta.is_trivial:
        return [fam.delta.distinguished_zero]
    return fam.delta.dyadic_path(levels) + [fam.delta.distinguished_zero]


def cmd_strip_check(fam, cfg):
    grid = getattr(fam, "grid", None)
    if grid is None:
        raise ConfigError("strip-check needs the discrete-strip family")
    n = cfg["n_samples"]
    h = halton(n, grid.N_t * grid.N_s * grid.d + grid.N_s * grid.Lambda0.shape[1], cfg["seed"]) - 0.5
    worst_fi, worst_if = 0.0, 0.0
    for row in h:
        eta = row[: grid.N_t * grid.N_s * grid.d].reshape(grid.N_t, grid.N_s, grid.d)
        lam = row[grid.N_t * grid.N_s * grid.d:].reshape(grid.N_s, -1)
        xi = strip_aux_inverse(grid, eta, lam)
        e2, l2 = strip_aux_forward(grid, xi)
        worst_fi = max(worst_fi, float(np.abs(e2 - eta).max()), float(np.abs(l2 - lam).max()))
        xi2 = strip_aux_inverse(grid, e2, l2)
        worst_if = max(worst_if, float(np.abs(xi2 - xi).max()),
                       float(np.abs(strip_boundary_defect(grid, xi)).max()))
    lb = norm_lower_bound_audit(fam.gamma_norms, [np.array([e]) for e in (1.0, 0.25, 0.0625)], 1000, cfg["seed"])
    tvs = t_constant_tangents(fam, cfg["seed"])
    plan = _plan(cfg)
    sol = adiabatic_regularity_audit(fam, 1, plan, tangents=tvs)
    neg = adiabatic_regularity_audit(fam, 1, plan, mode="generic")
    checks = {"forward_inverse": worst_fi <= 1e-12, "inverse_forward": worst_if <= 1e-12,
              "lower_bound": lb.passed, "pointwise_solutions": sol.passed}
    failed = [k for k, v in checks.items() if not v]
    return {"round_trip": {"forward_inverse": worst_fi, "inverse_forward": worst_if, "n_samples": n},
            "lower_bound": lb, "pointwise_solutions": sol, "negative_control": neg,
            "negative_control_decays": neg.details["decays"], "checks": checks}, failed


def t_constant_tangents(fam, seed, n=4):
    """Level-1 tangent vectors of t-constant strip fields whose values lie in ``Lambda0``."""
    g = fam.grid
    rows = halton(2 * n, g.N_s * g.Lambda0.shape[1], seed + 3) - 0.5
    out = []
    for i in range(n):
        fields = []
        for r in rows[2 * i: 2 * i + 2]:
            slice_ = r.reshape(g.N_s, -1) @ g.Lambda0.T
            fields.append(np.tile(slice_[None], (g.N_t + 1, 1, 1)).ravel())
        out.append(TangentVector(1, fields[0], [fields[1]]))
    return out


HANDLERS = {"verify": cmd_verify, "reduce": cmd_reduce, "zeros": cmd_zeros, "profile": cmd_profile,
            "strip-check": cmd_strip_check}


def run(cfg):
    """Execute a resolved config; returns ``(exit_code, report_path)``."""
    started = time.time()
    try:
        fam = get_family(cfg["family"], **cfg["family_params"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    out = HANDLERS[cfg["command"]](fam, cfg)
    results, failed = out[0], out[1]
    report = {"command": cfg["command"], "version": __version__, "family": fam.describe(),
              "config": {k: v for k, v in cfg.items() if k not in ("out_dir", "workers")},
              "passed": not failed, "failed": failed, "results": results}
    meta = {"started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
            "seconds": time.time() - started, "workers": cfg["workers"], "argv": sys.argv[1:]}
    path = write_report(report, cfg["out_dir"], meta)
    if len(out) > 2:
        with open(os.path.join(cfg["out_dir"], "grid.csv"), "w", encoding="utf-8", newline="") as fh:
            fh.write(out[2])
    return (0 if not failed else 1), path


VALUE_FLAGS = ("--k-grid", "--eps")


def _attach_values(argv):
    """Join ``--k-grid -0.1:0.1:5`` into ``--k-grid=-0.1:0.1:5`` so negative specs parse."""
    out, it = [], iter(argv)
    for tok in it:
        if tok in VALUE_FLAGS:
            nxt = next(it, None)
            out.append(tok if nxt is None else f"{tok}={nxt}")
        else:
            out.append(tok)
    return out


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(_attach_values(sys.argv[1:] if argv is None else list(argv)))
    try:
        cfg = resolve_config(args)
        code, path = run(cfg)
    except ConfigError as exc:
        print(f"afred: error: {exc}", file=sys.stderr)
        return 2
    except AfredError as exc:
        print(f"afred: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(f"{'PASS' if code == 0 else 'FAIL'} {cfg['command']} {cfg['family']} -> {path}")
    return code


if __name__ == "__main__":
    sys.exit(main())
