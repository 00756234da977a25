"""Staged computation from the polygonal equilibrium to resonant orbits.

Stages of :func:`run`:

1. normal modes at ``a_init`` and a Lyapunov starter per candidate mode;
2. continuation in ``x_n(0)`` to ``xn0_target``;
3. continuation in ``a`` with ``x_n(0)`` pinned, monitoring ``T/T0``;
4. location of the requested resonances and ratio-locked continuation to
   the requested amplitudes;
5. Floquet analysis, long-time integration, classification and rendering.
"""
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from math import gcd

import numpy as np

from . import output
from .choreography import build_nonrotating, classify_report, partial_label
from .collocation import ConstraintSet, discretization_error_estimate, newton_solve
from .continuation import (ContinuationSettings, StopAt, continue_branch, detect_resonances,
                           lock_ratio_continue, locate_resonance)
from .errors import ConfigError, DNLSError, NoBracket, StallError
from .floquet import floquet, integrate_verify, one_period_error
from .lattice import LatticeParams
from .spectral import lyapunov_starter, normal_modes

log = logging.getLogger(__name__)

DEFAULT_STAGES = {
    "pin": {"free": ["xn0", "T", "p1", "p2"], "constraints": ["rotation_lock", "pin_xn0"]},
    "main": {"free": ["a", "T", "p1", "p2"], "constraints": ["rotation_lock", "pin_xn0"]},
    "lock": {"free": ["a", "T", "xn0", "p1", "p2"],
             "constraints": ["rotation_lock", "pin_xn0", "fix_ratio"]},
}
_FLAGS = ("rotation_lock", "pin_xn0", "fix_E", "fix_A", "fix_ratio")


def parse_ratio(text):
    """``"l:m"`` -> ``(l, m)`` in lowest terms with ``m > 0``."""
    try:
        a, b = str(text).split(":")
        ell, m = int(a), int(b)
    except ValueError as exc:
        raise ConfigError(f"resonance {text!r} is not of the form l:m") from exc
    if m <= 0 or gcd(abs(ell), m) != 1:
        raise ConfigError(f"resonance {text!r} must have m > 0 and gcd(|l|, m) = 1")
    return ell, m


@dataclass
class RunConfig:
    n: int
    xn0_target: float
    name: str = "run"
    alpha: int = 1
    mode_k: object = "scan"
    which: object = None
    a_init: float = 0.3
    eps: float = None
    stages: dict = field(default_factory=lambda: json.loads(json.dumps(DEFAULT_STAGES)))
    resonances: list = field(default_factory=list)
    lock_targets: list = field(default_factory=list)
    a_min: float = 0.01
    a_max: float = 2.0
    max_den: int = 32
    N: int = 100
    degree: int = 4
    tol: float = 1e-10
    max_iter: int = 10
    unfolding: str = "literal"
    ds0: float = 0.01
    ds_min: float = 1e-6
    ds_max: float = 0.05
    max_steps: int = 300
    lock_ds0: float = 0.005
    lock_max_steps: int = 400
    fold_tol: float = 5e-7
    tol_unit: float = 1e-4
    tol_stab: float = 1e-3
    verify_periods: int = 100
    verify_tol: float = 1e-10
    n_samples: int = 4096
    render: bool = True
    output: str = None
    aspirational: bool = False
    expected: dict = field(default_factory=dict)
    description: str = ""

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        for key in ("n", "xn0_target"):
            if key not in d:
                raise ConfigError(f"missing config key {key!r}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d)

    def to_dict(self):
        return asdict(self)

    def constraint_set(self, stage):
        spec = self.stages[stage]
        flags = {f: f in spec.get("constraints", []) for f in _FLAGS}
        return ConstraintSet(free=tuple(spec["free"]), unfolding=self.unfolding, **flags)

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(isinstance(self.n, int) and self.n >= 3, "n must be an integer >= 3")
        need(isinstance(self.alpha, int) and 1 <= self.alpha <= self.n,
             f"alpha must lie in 1..{self.n}")
        need(self.mode_k == "scan" or (isinstance(self.mode_k, int) and 1 <= self.mode_k < self.n),
             f"mode_k must be 'scan' or an integer in 1..{self.n - 1}")
        need(self.which is None or (isinstance(self.which, int) and self.which >= 0),
             "which must be null or a non-negative integer")
        need(self.a_init > 0, "a_init must be positive")
        need(self.eps is None or self.eps > 0, "eps must be positive")
        need(0 <= self.a_min < self.a_max, "need 0 <= a_min < a_max")
        need(self.a_min <= self.a_init <= self.a_max, "a_init must lie in [a_min, a_max]")
        need(isinstance(self.N, int) and self.N >= 4, "N must be an integer >= 4")
        need(isinstance(self.degree, int) and 1 <= self.degree <= 8, "degree must lie in 1..8")
        need(self.tol > 0 and self.max_iter >= 1, "tol > 0 and max_iter >= 1 required")
        need(0 < self.ds_min <= self.ds0 <= self.ds_max, "need 0 < ds_min <= ds0 <= ds_max")
        need(0 < self.lock_ds0 <= self.ds_max, "need 0 < lock_ds0 <= ds_max")
        need(self.max_steps >= 1 and self.lock_max_steps >= 1, "step limits must be >= 1")
        need(self.max_den >= 1, "max_den must be >= 1")
        need(0 < self.tol_unit and 0 < self.tol_stab, "stability tolerances must be positive")
        need(self.verify_periods >= 0, "verify_periods must be >= 0")
        need(self.n_samples >= 16, "n_samples must be >= 16")
        need(self.unfolding in ("literal", "gradient"), "unfolding must be 'literal' or 'gradient'")
        for r in self.resonances:
            parse_ratio(r)
        for t in self.lock_targets:
            need(isinstance(t, dict) and "ratio" in t and "a" in t,
                 "lock targets need 'ratio' and 'a'")
            need(t["ratio"] in self.resonances,
                 f"lock target ratio {t['ratio']} is not among the resonances")
        for stage in ("pin", "main", "lock"):
            need(stage in self.stages, f"stage plan lacks stage {stage!r}")
            spec = self.stages[stage]
            bad = set(spec.get("constraints", [])) - set(_FLAGS)
            need(not bad, f"stage {stage!r}: unknown constraints {sorted(bad)}")
            try:
                self.constraint_set(stage).validate()
            except ConfigError as exc:
                raise ConfigError(f"stage {stage!r}: {exc}") from exc
        need("xn0" in self.stages["pin"]["free"], "stage 'pin' must free xn0")
        need("a" in self.stages["main"]["free"], "stage 'main' must free a")
        return self

    def settings(self, direction=1, lock=False, stability=False):
        return ContinuationSettings(
            ds0=self.lock_ds0 if lock else self.ds0, ds_min=self.ds_min, ds_max=self.ds_max,
            max_steps=self.lock_max_steps if lock else self.max_steps, tol=self.tol,
            max_iter=self.max_iter, direction=direction, stability=stability)


# --------------------------------------------------------------------------
# presets
# --------------------------------------------------------------------------

def preset_names():
    root = resources.files(__package__) / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name):
    """Shipped configuration; ``table1-rowN`` is an alias of ``table1-orbitN``."""
    if name.startswith("table1-row"):
        name = "table1-orbit" + name[len("table1-row"):]
    path = resources.files(__package__) / "presets" / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return RunConfig.from_dict(json.loads(path.read_text()))


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------

def candidate_modes(cfg):
    """``(k, which)`` pairs to try at ``a_init``, in ascending ``k``."""
    spec = normal_modes(LatticeParams(cfg.n, cfg.a_init, cfg.alpha))
    ks = range(1, cfg.n) if cfg.mode_k == "scan" else [cfg.mode_k]
    out = []
    for k in ks:
        nus = spec.for_k(k)
        idx = range(len(nus)) if cfg.which is None else [cfg.which]
        out += [(k, w) for w in idx if w < len(nus)]
    return spec, out


def _error(stage, exc, **ctx):
    rec = {"stage": stage, "error": type(exc).__name__, "message": str(exc)}
    rec.update(ctx)
    return rec


def stage_start(cfg, k, which):
    orbit = lyapunov_starter(LatticeParams(cfg.n, cfg.a_init, cfg.alpha), k, cfg.eps, which,
                             cfg.N, cfg.degree)
    orbit.meta["mode_k"] = k
    return newton_solve(orbit, cfg.constraint_set("pin"), cfg.tol, cfg.max_iter)


def stage_pin(cfg, start):
    direction = 1 if cfg.xn0_target > start.xn0 else -1
    st = cfg.settings(direction)
    st.direction_param = "xn0"
    stop = [StopAt("xn0", cfg.xn0_target)]
    branch = continue_branch(start, cfg.constraint_set("pin"), st, stop)
    if not branch.stop_reason.startswith("xn0="):
        raise NoBracket(f"x_n(0) = {cfg.xn0_target} not reached ({branch.stop_reason})")
    return branch


def stage_main(cfg, pinned):
    """Branches in ``a`` up and down from the pinned orbit."""
    cs = cfg.constraint_set("main")
    out = {}
    for label, d, bound in (("up", 1, cfg.a_max), ("down", -1, cfg.a_min)):
        st = cfg.settings(d)
        st.direction_param = "a"
        try:
            out[label] = continue_branch(pinned, cs, st, [StopAt("a", bound)])
        except StallError as exc:
            log.info("main branch %s stalled after %d points", label, len(exc.branch.points))
            out[label] = exc.branch
    return out


def stage_locate(cfg, branches, ell, m):
    st = cfg.settings()
    for label in ("up", "down"):
        try:
            return locate_resonance(branches[label], ell, m, st), label
        except NoBracket:
            continue
    raise NoBracket(f"{ell}:{m} not bracketed on the main branches")


def stage_lock(cfg, located, ell, m, target_a):
    d = 1 if target_a > located.params.a else -1
    st = cfg.settings(d, lock=True, stability=True)
    stop = [StopAt("a", target_a, fold_tol=cfg.fold_tol)]
    branch = lock_ratio_continue(located, ell, m, st, stop=stop, cs=cfg.constraint_set("lock"))
    if not branch.stop_reason.startswith(f"a={target_a}"):
        raise NoBracket(f"a = {target_a} not reached on the {ell}:{m} locked branch "
                        f"({branch.stop_reason})")
    return branch


def analyse_orbit(cfg, orbit, ell, m, k, outdir=None, tag="orbit"):
    """Floquet, a posteriori integration, classification and rendering."""
    rec = {"tag": tag, "ratio": f"{ell}:{m}", "k": k, "monitors": orbit.monitors(),
           "errors": []}
    fs = floquet(orbit, tol_unit=cfg.tol_unit, tol_stab=cfg.tol_stab)
    rec["floquet"] = {"classification": fs.classification, "flag": fs.flag,
                      "n_trivial": fs.n_trivial, "n_unstable": fs.n_unstable,
                      "max_deviation": fs.max_deviation}
    if outdir:
        output.export_orbit(orbit, os.path.join(outdir, f"{tag}.json"))
        output.write_text(os.path.join(outdir, f"{tag}_multipliers.csv"), fs.to_csv())
    if cfg.verify_periods:
        try:
            rep = integrate_verify(orbit, cfg.verify_periods, cfg.verify_tol)
            rec["verify"] = {"periods": cfg.verify_periods, "dE": rep.dE, "dA": rep.dA,
                             "max_distance": rep.max_distance,
                             "discretization_error": discretization_error_estimate(orbit),
                             "nodal_error": one_period_error(orbit)}
        except (DNLSError, RuntimeError) as exc:
            rec["errors"].append(_error("verify", exc))
    try:
        cls = classify_report(orbit, k, ell, m, cfg.n_samples)
        rec["classification"] = cls
        if outdir:
            output.write_json(os.path.join(outdir, f"{tag}_classify.json"), cls)
    except DNLSError as exc:
        rec["errors"].append(_error("classify", exc))
    if outdir and cfg.render:
        label = partial_label(orbit.n, k, orbit.params.alpha, ell, m)
        trace = build_nonrotating(orbit, label, cfg.n_samples)
        output.write_text(os.path.join(outdir, f"{tag}_rotating.svg"),
                          output.render_svg(output.rotating_curves(orbit), "sites"))
        output.write_text(os.path.join(outdir, f"{tag}_nonrotating.svg"),
                          output.render_svg([trace.samples[:, j] for j in range(orbit.n)],
                                            "gradient"))
    return rec


def run_candidate(cfg, k, which, outdir=None):
    """Stages 2-5 for one starting mode.  Returns a report dict."""
    rep = {"k": k, "which": which, "stages": {}, "orbits": [], "errors": [], "located": {},
           "side_branches": {}}
    t0 = time.perf_counter()

    def done(stage, **info):
        rep["stages"][stage] = dict(status="ok", seconds=time.perf_counter() - t0, **info)

    def fail(stage, exc, **ctx):
        rep["stages"][stage] = {"status": "failed", "seconds": time.perf_counter() - t0}
        rep["errors"].append(_error(stage, exc, **ctx))

    try:
        start = stage_start(cfg, k, which)
        done("start", T=start.T, nu=start.meta.get("nu"))
    except (DNLSError, ValueError) as exc:
        fail("start", exc)
        return rep
    try:
        pin = stage_pin(cfg, start)
        pinned = pin.points[-1].orbit
        rep["side_branches"]["pin"] = pin
        done("pin", points=len(pin.points), T=pinned.T)
        if outdir:
            output.export_branch(pin, os.path.join(outdir, "branch_pin.csv"))
    except DNLSError as exc:
        fail("pin", exc)
        return rep
    branches = stage_main(cfg, pinned)
    events = []
    for label, br in branches.items():
        events += [(ell, m, label) for ell, m, _ in detect_resonances(br, cfg.max_den)]
        if outdir:
            output.export_branch(br, os.path.join(outdir, f"branch_main_{label}.csv"))
    done("main", points={lbl: len(b.points) for lbl, b in branches.items()},
         stop={lbl: b.stop_reason for lbl, b in branches.items()},
         a_range=[min(float(b.monitor("a").min()) for b in branches.values()),
                  max(float(b.monitor("a").max()) for b in branches.values())],
         n_resonances=len(events),
         low_order=sorted({f"{e[0]}:{e[1]}" for e in events if e[1] <= 12 and abs(e[0]) <= 24}))
    rep["branches"] = branches
    if not cfg.resonances:
        rep["success"] = True
        rep["results"] = []
        return rep
    located_all = True
    for text in cfg.resonances:
        ell, m = parse_ratio(text)
        try:
            orbit, side = stage_locate(cfg, branches, ell, m)
            orbit.meta["mode_k"] = k
            rep["located"][text] = orbit
            rep["orbits"].append(("located", text, orbit))
        except DNLSError as exc:
            located_all = False
            rep["errors"].append(_error("locate", exc, ratio=text))
            continue
        for tgt in cfg.lock_targets:
            if tgt["ratio"] != text:
                continue
            tag = tgt.get("tag", f"lock_{ell}_{m}_a{tgt['a']}")
            try:
                lb = stage_lock(cfg, orbit, ell, m, float(tgt["a"]))
                rep["side_branches"][tag] = lb
                if outdir:
                    output.export_branch(lb, os.path.join(outdir, f"branch_{tag}.csv"))
                rep["orbits"].append((tag, text, lb.points[-1].orbit))
            except DNLSError as exc:
                rep["errors"].append(_error("lock", exc, ratio=text, target=tgt["a"]))
    rep["success"] = located_all
    done("locate", located=sorted(rep["located"]))
    results = []
    for tag, text, orbit in rep["orbits"]:
        ell, m = parse_ratio(text)
        try:
            results.append(analyse_orbit(cfg, orbit, ell, m, k, outdir, tag))
        except (DNLSError, np.linalg.LinAlgError) as exc:
            rep["errors"].append(_error("analyse", exc, tag=tag))
    rep["results"] = results
    done("analyse", orbits=len(results))
    return rep


def run(cfg, outdir=None, scan_all=False):
    """Execute all stages; returns the summary dict (also written to ``summary.json``).

    With ``mode_k = "scan"`` candidate modes are tried in order until one
    locates every requested resonance (all of them if `scan_all`).
    """
    outdir = outdir or cfg.output
    if outdir:
        output.ensure_dir(outdir)
        output.write_json(os.path.join(outdir, "config.json"), cfg.to_dict())
    t0 = time.perf_counter()
    summary = {"format": output.FORMAT_VERSION, "name": cfg.name, "candidates": [],
               "status": "failed"}
    try:
        spec, cands = candidate_modes(cfg)
    except (DNLSError, ValueError) as exc:
        summary["errors"] = [_error("spectrum", exc)]
        return summary
    if outdir:
        output.write_text(os.path.join(outdir, "spectrum.csv"), spec.to_csv())
    if not cands:
        summary["errors"] = [{"stage": "spectrum", "error": "NoAdmissibleMode",
                              "message": f"no admissible mode at a = {cfg.a_init}"}]
        return summary
    reports = []
    for k, which in cands:
        sub = os.path.join(outdir, f"k{k}_w{which}") if outdir else None
        if sub:
            output.ensure_dir(sub)
        log.info("candidate k=%d which=%d", k, which)
        rep = run_candidate(cfg, k, which, sub)
        reports.append(rep)
        summary["candidates"].append(_summarise(rep))
        if rep.get("success") and not scan_all:
            break
    ok = [r for r in reports if r.get("success")]
    summary["status"] = "ok" if ok else "failed"
    summary["seconds"] = time.perf_counter() - t0
    if outdir:
        output.write_json(os.path.join(outdir, "summary.json"), summary)
    summary["reports"] = reports
    return summary


def _summarise(rep):
    out = {k: rep[k] for k in ("k", "which", "stages", "errors")}
    out["success"] = bool(rep.get("success"))
    out["results"] = rep.get("results", [])
    return out
