"""Command-line interface.

Exit status: 0 on success, 2 on a numerical failure, 3 on a configuration
or usage error.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import MISSING, fields

import numpy as np

from . import output
from .choreography import build_nonrotating, classify_report, partial_label
from .collocation import ConstraintSet, RotatingOrbit, discretization_error_estimate, newton_solve
from .continuation import ContinuationSettings, StopAt, continue_branch
from .errors import ConfigError, DNLSError, NoBracket
from .floquet import integrate_verify, monodromy, multipliers, one_period_error
from .lattice import LatticeParams
from .pipeline import (RunConfig, load_preset, parse_ratio, preset_names, run, stage_lock)
from .spectral import lyapunov_starter, normal_modes

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 2, 3
_SCALAR_FIELDS = ("name", "alpha", "mode_k", "which", "a_init", "eps", "a_min", "a_max",
                  "max_den", "N", "degree", "tol", "max_iter", "unfolding", "ds0", "ds_min",
                  "ds_max", "max_steps", "lock_ds0", "lock_max_steps", "fold_tol", "tol_unit",
                  "tol_stab", "verify_periods", "verify_tol", "n_samples", "render", "n",
                  "xn0_target")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _value(text):
    """JSON literal if it parses, else the raw string."""
    try:
        return json.loads(text)
    except ValueError:
        return text


def _emit(obj, path=None):
    text = output.dumps(obj)
    if path:
        output.write_text(path, text)
    else:
        sys.stdout.write(text)


def _load_orbit(path):
    try:
        return RotatingOrbit.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read orbit {path}: {exc}") from exc


def _constraint_set(args, default_free, default_flags):
    free = tuple(args.free.split(",")) if args.free else default_free
    flags = args.constraints.split(",") if args.constraints else default_flags
    known = ("rotation_lock", "pin_xn0", "fix_E", "fix_A", "fix_ratio")
    bad = [f for f in flags if f and f not in known]
    if bad:
        raise ConfigError(f"unknown constraints {bad}")
    cs = ConstraintSet(free=free, unfolding=args.unfolding, **{f: f in flags for f in known})
    return cs.validate()


def _settings(args, direction):
    return ContinuationSettings(ds0=args.ds0, ds_min=args.ds_min, ds_max=args.ds_max,
                                max_steps=args.max_steps, tol=args.tol, direction=direction,
                                direction_param=args.direction_param)


def _add_continuation_flags(p):
    p.add_argument("--free", help="comma separated free parameters")
    p.add_argument("--constraints", help="comma separated active constraints")
    p.add_argument("--unfolding", default="literal", choices=("literal", "gradient"))
    p.add_argument("--direction", type=int, default=1, choices=(-1, 1))
    p.add_argument("--direction-param", default=None)
    p.add_argument("--ds0", type=float, default=0.01)
    p.add_argument("--ds-min", type=float, default=1e-6)
    p.add_argument("--ds-max", type=float, default=0.05)
    p.add_argument("--max-steps", type=int, default=300)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--branch-out", help="branch CSV path")
    p.add_argument("--out", help="orbit JSON for the last point")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_spectrum(args):
    spec = normal_modes(LatticeParams(args.n, args.a, args.alpha))
    text = spec.to_csv()
    if args.out:
        output.write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_start(args):
    p = LatticeParams(args.n, args.a, args.alpha)
    orbit = lyapunov_starter(p, args.k, args.eps, args.which, args.N, args.degree)
    cs = ConstraintSet(free=("xn0", "T", "p1", "p2"), pin_xn0=True).validate()
    orbit = newton_solve(orbit, cs, args.tol)
    orbit.meta["mode_k"] = args.k
    output.export_orbit(orbit, args.out)
    _emit(orbit.monitors())
    return EXIT_OK


def cmd_continue(args):
    orbit = _load_orbit(args.orbit)
    cs = _constraint_set(args, ("a", "T", "p1", "p2"), ["rotation_lock", "pin_xn0"])
    stops = []
    for text in args.stop or []:
        name, _, val = text.partition("=")
        if not val:
            raise ConfigError(f"--stop expects name=value, got {text!r}")
        stops.append(StopAt(name, float(val)))
    orbit = newton_solve(orbit, cs, args.tol)
    branch = continue_branch(orbit, cs, _settings(args, args.direction), stops)
    if args.branch_out:
        output.export_branch(branch, args.branch_out)
    if args.out:
        output.export_orbit(branch.points[-1].orbit, args.out)
    _emit({"points": len(branch.points), "stop": branch.stop_reason,
           "last": branch.points[-1].monitors})
    return EXIT_OK


def cmd_locate(args):
    """Continue until the ratio crosses the requested resonance."""
    ell, m = parse_ratio(args.ratio)
    orbit = _load_orbit(args.orbit)
    cs = _constraint_set(args, ("a", "T", "p1", "p2"), ["rotation_lock", "pin_xn0"])
    orbit = newton_solve(orbit, cs, args.tol)
    for d in ((args.direction,) if args.one_way else (args.direction, -args.direction)):
        branch = continue_branch(orbit, cs, _settings(args, d), [StopAt("ratio", ell / m)])
        if branch.stop_reason.startswith("ratio="):
            found = branch.points[-1].orbit
            if args.branch_out:
                output.export_branch(branch, args.branch_out)
            if args.out:
                output.export_orbit(found, args.out)
            _emit(found.monitors())
            return EXIT_OK
    raise NoBracket(f"ratio {args.ratio} not reached")


def cmd_lock(args):
    ell, m = parse_ratio(args.ratio)
    orbit = _load_orbit(args.orbit)
    cfg = RunConfig(n=orbit.n, xn0_target=orbit.xn0, alpha=orbit.params.alpha,
                    lock_ds0=args.ds0, lock_max_steps=args.max_steps, tol=args.tol,
                    fold_tol=args.fold_tol, unfolding=args.unfolding)
    branch = stage_lock(cfg, orbit, ell, m, args.target_a)
    if args.branch_out:
        output.export_branch(branch, args.branch_out)
    if args.out:
        output.export_orbit(branch.points[-1].orbit, args.out)
    _emit({"points": len(branch.points), "stop": branch.stop_reason,
           "last": branch.points[-1].monitors})
    return EXIT_OK


def cmd_floquet(args):
    orbit = _load_orbit(args.orbit)
    M = monodromy(orbit, args.method)
    fs = multipliers(M, args.tol_unit, args.tol_stab)
    if args.out:
        output.write_text(args.out, fs.to_csv())
    _emit({"classification": fs.classification, "flag": fs.flag, "n_trivial": fs.n_trivial,
           "n_unstable": fs.n_unstable, "max_deviation": fs.max_deviation,
           "det": float(np.linalg.det(M))})
    return EXIT_OK


def cmd_verify(args):
    orbit = _load_orbit(args.orbit)
    rep = integrate_verify(orbit, args.periods, args.tol)
    _emit({"periods": args.periods, "dE": rep.dE, "dA": rep.dA,
           "max_distance": rep.max_distance,
           "discretization_error": discretization_error_estimate(orbit),
           "nodal_error": one_period_error(orbit)},
          args.out)
    return EXIT_OK


def _mode_k(args, orbit):
    k = args.k if args.k is not None else orbit.meta.get("mode_k", orbit.meta.get("k"))
    if k is None:
        raise ConfigError("mode index unknown: pass --k")
    return int(k)


def cmd_classify(args):
    orbit = _load_orbit(args.orbit)
    ell, m = parse_ratio(args.ratio) if args.ratio else (None, None)
    rep = classify_report(orbit, _mode_k(args, orbit), ell, m, args.samples, args.max_den)
    _emit(rep, args.out)
    return EXIT_OK


def cmd_render(args):
    orbit = _load_orbit(args.orbit)
    if args.frame == "rotating":
        svg = output.render_svg(output.rotating_curves(orbit, args.samples), "sites")
    else:
        if not args.ratio:
            raise ConfigError("--ratio is required for the non-rotating frame")
        ell, m = parse_ratio(args.ratio)
        label = partial_label(orbit.n, _mode_k(args, orbit), orbit.params.alpha, ell, m)
        trace = build_nonrotating(orbit, label, args.samples)
        svg = output.render_svg([trace.samples[:, j] for j in range(orbit.n)], "gradient")
    output.write_text(args.out, svg)
    return EXIT_OK


def cmd_run(args):
    if args.list_presets:
        sys.stdout.write("\n".join(preset_names()) + "\n")
        return EXIT_OK
    if args.config and args.preset:
        raise ConfigError("use either --config or --preset")
    if args.config:
        base = RunConfig.load(args.config).to_dict()
    elif args.preset:
        base = load_preset(args.preset).to_dict()
    else:
        base = {}
    for name in _SCALAR_FIELDS:
        val = getattr(args, name)
        if val is not None:
            base[name] = _value(val)
    if args.resonance:
        base["resonances"] = list(args.resonance)
    cfg = RunConfig.from_dict(base)
    outdir = args.out or cfg.output or os.path.join("runs", cfg.name)
    summary = run(cfg, outdir, scan_all=args.scan_all)
    summary.pop("reports", None)
    _emit({"status": summary["status"], "output": outdir,
           "candidates": [{k: c[k] for k in ("k", "which", "success", "errors")}
                          for c in summary["candidates"]]})
    return EXIT_OK if summary["status"] == "ok" else EXIT_NUMERIC


# --------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="dnls-choreo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("spectrum", help="normal modes of the polygonal equilibrium")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--alpha", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("start", help="Lyapunov starter orbit")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--alpha", type=int, default=1)
    p.add_argument("--which", type=int, default=0)
    p.add_argument("--eps", type=float)
    p.add_argument("--N", type=int, default=100)
    p.add_argument("--degree", type=int, default=4)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_start)

    p = sub.add_parser("continue", help="pseudo-arclength continuation")
    p.add_argument("--orbit", required=True)
    p.add_argument("--stop", action="append", help="name=value, may repeat")
    _add_continuation_flags(p)
    p.set_defaults(func=cmd_continue)

    p = sub.add_parser("locate", help="continue to a resonance l:m")
    p.add_argument("--orbit", required=True)
    p.add_argument("--ratio", required=True)
    p.add_argument("--one-way", action="store_true")
    _add_continuation_flags(p)
    p.set_defaults(func=cmd_locate)

    p = sub.add_parser("lock", help="ratio-locked continuation in a")
    p.add_argument("--orbit", required=True)
    p.add_argument("--ratio", required=True)
    p.add_argument("--target-a", type=float, required=True)
    p.add_argument("--fold-tol", type=float, default=5e-7)
    p.add_argument("--unfolding", default="literal", choices=("literal", "gradient"))
    p.add_argument("--ds0", type=float, default=0.005)
    p.add_argument("--max-steps", type=int, default=400)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--branch-out")
    p.add_argument("--out")
    p.set_defaults(func=cmd_lock)

    p = sub.add_parser("floquet", help="Floquet multipliers and stability")
    p.add_argument("--orbit", required=True)
    p.add_argument("--method", default="collocation", choices=("collocation", "variational"))
    p.add_argument("--tol-unit", type=float, default=1e-4)
    p.add_argument("--tol-stab", type=float, default=1e-3)
    p.add_argument("--out", help="multiplier CSV")
    p.set_defaults(func=cmd_floquet)

    p = sub.add_parser("verify", help="long-time integration check")
    p.add_argument("--orbit", required=True)
    p.add_argument("--periods", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("classify", help="choreography classification")
    p.add_argument("--orbit", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--ratio")
    p.add_argument("--samples", type=int, default=4096)
    p.add_argument("--max-den", type=int, default=32)
    p.add_argument("--out")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("render", help="SVG of an orbit")
    p.add_argument("--orbit", required=True)
    p.add_argument("--frame", default="rotating", choices=("rotating", "nonrotating"))
    p.add_argument("--k", type=int)
    p.add_argument("--ratio")
    p.add_argument("--samples", type=int, default=4096)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("run", help="full pipeline")
    p.add_argument("--config")
    p.add_argument("--preset")
    p.add_argument("--list-presets", action="store_true")
    p.add_argument("--out")
    p.add_argument("--scan-all", action="store_true")
    p.add_argument("--resonance", action="append", help="l:m, may repeat")
    defaults = {f.name: f.default for f in fields(RunConfig)}
    for name in _SCALAR_FIELDS:
        flag = "--" + name.replace("_", "-")
        hint = "" if defaults[name] is MISSING else f" (default {defaults[name]!r})"
        p.add_argument(flag, dest=name, default=None, help=f"RunConfig.{name}{hint}")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except (DNLSError, np.linalg.LinAlgError, RuntimeError) as exc:
        sys.stderr.write(f"numerical failure: {type(exc).__name__}: {exc}\n")
        return EXIT_NUMERIC
    except ValueError as exc:
        sys.stderr.write(f"invalid input: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
