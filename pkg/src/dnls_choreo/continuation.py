"""Pseudo-arclength continuation of orbit families and resonance handling."""
import logging
from dataclasses import dataclass, field
from math import ceil, floor, gcd

import numpy as np

from .collocation import (Arclength, CollocationSystem, FixParam, FixRatio, newton_solve,
                          tangent_vector)
from .errors import NoBracket, NoConvergence, NotCoprime, SingularJacobian, StallError

log = logging.getLogger(__name__)

CSV_COLUMNS = ("step", "s", "a", "T", "T0", "ratio", "E", "A", "xn0", "p1", "p2",
               "n_unstable", "stability_flag")


@dataclass
class ContinuationSettings:
    ds0: float = 0.01
    ds_min: float = 1e-6
    ds_max: float = 0.05
    max_steps: int = 200
    tol: float = 1e-10
    max_iter: int = 10
    grow: float = 1.3
    fast_iters: int = 3
    direction: int = 1
    direction_param: str = None
    stability: bool = False


@dataclass
class BranchPoint:
    orbit: object
    monitors: dict
    arclength: float
    stability: object = None


@dataclass
class ResonanceEvent:
    ell: int
    m: int
    index: int
    orbit: object = None


@dataclass
class Branch:
    points: list
    constraint_set: object
    direction: int = 1
    events: list = field(default_factory=list)
    stop_reason: str = ""

    def monitor(self, name):
        return np.array([pt.monitors[name] for pt in self.points])

    def to_csv(self):
        lines = [",".join(CSV_COLUMNS)]
        for i, pt in enumerate(self.points):
            mon = pt.monitors
            if pt.stability is not None:
                nu, flag = str(pt.stability.n_unstable), pt.stability.flag
            else:
                nu, flag = "", ""
            vals = [str(i), _fmt(pt.arclength)]
            vals += [_fmt(mon[k]) for k in ("a", "T", "T0", "ratio", "E", "A", "xn0", "p1", "p2")]
            vals += [nu, flag]
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"


def _fmt(x):
    return format(float(x), ".17g")


@dataclass
class StopAt:
    """Stop when monitor `name` crosses `value`; the crossing is located exactly.

    With ``fold_tol > 0`` a fold of the monitor whose extreme value lies
    within ``fold_tol`` of `value` also counts as reaching it; the fold point
    is then returned.
    """

    name: str
    value: float
    fold_tol: float = 0.0

    def crossed(self, prev, new):
        f0 = prev.monitors[self.name] - self.value
        f1 = new.monitors[self.name] - self.value
        return f1 == 0.0 or f0 * f1 < 0.0

    def folded(self, p0, p1, p2):
        if self.fold_tol <= 0:
            return False
        f = [pt.monitors[self.name] for pt in (p0, p1, p2)]
        if (f[1] - f[0]) * (f[2] - f[1]) >= 0:
            return False
        return abs(f[1] - self.value) <= max(self.fold_tol, abs(f[2] - f[0]))


def make_point(orbit, arclength, stability=False):
    from .floquet import floquet

    pt = BranchPoint(orbit, orbit.monitors(), arclength)
    if stability:
        pt.stability = floquet(orbit)
    return pt


def _weighted_norm(system, v):
    return float(np.sqrt(np.dot(system.arclength_weights() * v, v)))


def _direction_guess(system, settings):
    guess = np.zeros(system.size)
    name = settings.direction_param or system.free[0]
    guess[system.nU + system.free.index(name)] = 1.0
    return settings.direction * guess


def continue_branch(start, cs, settings=None, stop=(), callback=None):
    """Trace the solution family through `start` by pseudo-arclength steps.

    `stop` holds :class:`StopAt` predicates or callables ``f(prev, new) ->
    bool``.  The first step follows the null-space tangent, oriented so that
    ``settings.direction_param`` (default: first free parameter) moves in the
    sense of ``settings.direction``; later steps use the secant.

    Raises :class:`StallError` (carrying the partial branch) when the step
    size drops below ``ds_min``.
    """
    settings = settings or ContinuationSettings()
    system = CollocationSystem(start, cs, None)
    branch = Branch([make_point(start, 0.0, settings.stability)], cs, settings.direction)
    X_prev = None
    X_cur = system.pack(start)
    tau = tangent_vector(start, cs, _direction_guess(system, settings))
    ds = settings.ds0
    s = 0.0
    cur = start
    for step in range(settings.max_steps):
        while True:
            X_pred = X_cur + ds * tau
            guess = system.unpack(X_pred)
            try:
                new = newton_solve(guess, cs, settings.tol, settings.max_iter,
                                   closure=Arclength(X_cur, tau, ds))
                break
            except (NoConvergence, SingularJacobian) as exc:
                ds *= 0.5
                log.debug("step %d failed (%s); ds -> %.3g", step, exc, ds)
                if ds < settings.ds_min:
                    branch.stop_reason = "stall"
                    raise StallError(f"step size below {settings.ds_min} at step {step}",
                                     branch) from exc
        X_new = system.pack(new)
        chord = _weighted_norm(system, X_new - X_cur)
        s += chord
        pt = make_point(new, s, settings.stability)
        prev_pt = branch.points[-1]
        branch.points.append(pt)
        if callback is not None:
            callback(pt)
        for pred in stop:
            if isinstance(pred, StopAt):
                if len(branch.points) >= 3 and pred.folded(*branch.points[-3:]):
                    fold = _locate_fold([p.orbit for p in branch.points[-3:]], cs, pred.name,
                                        settings)
                    if abs(fold.monitors()[pred.name] - pred.value) <= pred.fold_tol:
                        s_loc = prev_pt.arclength + _weighted_norm(
                            system, system.pack(fold) - X_cur)
                        branch.points[-1] = make_point(fold, s_loc, settings.stability)
                        branch.stop_reason = f"{pred.name}={pred.value} (fold)"
                        return branch
                if pred.crossed(prev_pt, pt):
                    located = _locate_crossing(cur, new, cs, pred, settings)
                    s_loc = prev_pt.arclength + _weighted_norm(
                        system, system.pack(located) - X_cur)
                    branch.points[-1] = make_point(located, s_loc, settings.stability)
                    branch.stop_reason = f"{pred.name}={pred.value}"
                    return branch
            elif pred(prev_pt, pt):
                branch.stop_reason = getattr(pred, "__name__", "predicate")
                return branch
        X_prev, X_cur, cur = X_cur, X_new, new
        tau = (X_cur - X_prev) / chord
        if new.newton_iterations <= settings.fast_iters:
            ds = min(ds * settings.grow, settings.ds_max)
        ds = max(ds, settings.ds_min)
    branch.stop_reason = "max_steps"
    return branch


def _interpolate(system, o0, o1, lam):
    X0, X1 = system.pack(o0), system.pack(o1)
    return system.unpack((1 - lam) * X0 + lam * X1)


def _locate_crossing(o0, o1, cs, pred, settings):
    """Solve for the point where a monitor equals a target between two solutions."""
    system = CollocationSystem(o0, cs, None)
    if pred.name == "ratio":
        f0, f1 = o0.ratio - pred.value, o1.ratio - pred.value
        closure = FixRatio(pred.value)
    elif pred.name in cs.free:
        f0, f1 = o0.get(pred.name) - pred.value, o1.get(pred.name) - pred.value
        closure = FixParam(pred.name, pred.value)
    else:
        return _locate_by_arclength(o0, o1, cs, lambda o: o.monitors()[pred.name] - pred.value,
                                    settings)
    lam = f0 / (f0 - f1) if f0 != f1 else 0.5
    guess = _interpolate(system, o0, o1, lam)
    try:
        return newton_solve(guess, cs, settings.tol, settings.max_iter, closure=closure)
    except (NoConvergence, SingularJacobian):
        g = (lambda o: o.ratio - pred.value) if pred.name == "ratio" else (
            lambda o: o.get(pred.name) - pred.value)
        return _locate_by_arclength(o0, o1, cs, g, settings)


def _locate_fold(orbits, cs, name, settings, iters=6):
    """Extremum of monitor `name` near the middle of three consecutive solutions.

    Successive parabolic interpolation in the chord coordinate through the
    middle point, with a full Newton solve at each new abscissa.
    """
    system = CollocationSystem(orbits[1], cs, None)
    X1 = system.pack(orbits[1])
    W = system.arclength_weights()
    d = system.pack(orbits[2]) - system.pack(orbits[0])
    tau = d / np.sqrt(np.dot(W * d, d))
    pts = [(float(np.dot(W * (system.pack(o) - X1), tau)), o.monitors()[name], o)
           for o in orbits]
    sign = 1.0 if pts[1][1] >= pts[0][1] else -1.0
    best = pts[1]
    for _ in range(iters):
        (x0, f0, _), (x1, f1, _), (x2, f2, _) = sorted(pts, key=lambda q: q[0])
        den = (x1 - x0) * (f1 - f2) - (x1 - x2) * (f1 - f0)
        if den == 0:
            break
        xs = x1 - 0.5 * ((x1 - x0) ** 2 * (f1 - f2) - (x1 - x2) ** 2 * (f1 - f0)) / den
        new = newton_solve(system.unpack(X1 + xs * tau), cs, settings.tol, settings.max_iter,
                           closure=Arclength(X1, tau, xs))
        cand = (xs, new.monitors()[name], new)
        if abs(cand[0] - best[0]) < 1e-12:
            best = max(best, cand, key=lambda q: sign * q[1])
            break
        pts = sorted(pts + [cand], key=lambda q: -sign * q[1])[:3]
        best = pts[0]
    return best[2]


def _locate_by_arclength(o0, o1, cs, func, settings, ftol=1e-11, max_iter=60):
    """Illinois (regula falsi) iteration on the chord arclength between two points."""
    system = CollocationSystem(o0, cs, None)
    X0, X1 = system.pack(o0), system.pack(o1)
    chord = _weighted_norm(system, X1 - X0)
    tau = (X1 - X0) / chord

    def solve_at(ds):
        guess = system.unpack(X0 + ds * tau)
        return newton_solve(guess, cs, settings.tol, settings.max_iter,
                            closure=Arclength(X0, tau, ds))

    a, b = 0.0, chord
    fa, fb = func(o0), func(o1)
    side = 0
    best = o0 if abs(fa) < abs(fb) else o1
    for _ in range(max_iter):
        c = (a * fb - b * fa) / (fb - fa)
        oc = solve_at(c)
        fc = func(oc)
        best = oc
        if abs(fc) <= ftol:
            return oc
        if fc * fb > 0:
            b, fb = c, fc
            if side == -1:
                fa *= 0.5
            side = -1
        else:
            a, fa = c, fc
            if side == 1:
                fb *= 0.5
            side = 1
    raise NoConvergence(max_iter, abs(func(best)), "arclength secant did not converge")


# --------------------------------------------------------------------------
# Resonances
# --------------------------------------------------------------------------

def farey_sequence(N):
    """Coprime fractions ``h/k`` in [0, 1] with ``k <= N``, ascending."""
    a, b, c, d = 0, 1, 1, N
    out = [(a, b)]
    while c <= N:
        k = (N + b) // d
        a, b, c, d = c, d, k * c - a, k * d - b
        out.append((a, b))
    return out


def rationals_between(lo, hi, max_den, closed=False):
    """Coprime ``(ell, m)`` with ``m <= max_den`` and ``lo < ell/m < hi``, ascending.

    With ``closed=True`` the end points are included.
    """
    if hi < lo:
        lo, hi = hi, lo
    base = farey_sequence(max_den)
    out = []
    for q in range(floor(lo), ceil(hi) + 1):
        for h, k in base[:-1]:
            ell = q * k + h
            val = ell / k
            if lo < val < hi or (closed and (val == lo or val == hi)):
                out.append((ell, k))
    return out


def detect_resonances(branch, max_den=32):
    """All coprime ``ell:m`` (``m <= max_den``) at which ``T/T0 - ell/m`` changes sign.

    Returns ``(ell, m, i)`` with the crossing between points ``i`` and ``i+1``.
    A ratio hitting ``ell/m`` exactly at a point is reported once, on the
    segment ending there.
    """
    r = branch.monitor("ratio")
    events = []
    for i in range(len(r) - 1):
        if r[i] == r[i + 1]:
            continue
        for ell, m in rationals_between(r[i], r[i + 1], max_den, closed=True):
            v = ell / m
            if r[i] != v and (r[i] - v) * (r[i + 1] - v) <= 0:
                events.append((ell, m, i))
    return events


def locate_resonance(branch, ell, m, settings=None):
    """Converged orbit on `branch` with ``T/T0 = ell/m``.

    The target is solved for directly with the ratio as closing equation,
    starting from the interpolated bracket; on failure the crossing is found
    by secant iteration on arclength with full Newton re-solves.
    """
    if m <= 0 or gcd(abs(ell), m) != 1:
        raise NotCoprime(f"{ell}:{m} is not a reduced resonance")
    settings = settings or ContinuationSettings()
    target = ell / m
    r = branch.monitor("ratio")
    for i in range(len(r) - 1):
        f0, f1 = r[i] - target, r[i + 1] - target
        if f0 == 0.0:
            return branch.points[i].orbit
        if f0 * f1 < 0:
            o0, o1 = branch.points[i].orbit, branch.points[i + 1].orbit
            return _locate_crossing(o0, o1, branch.constraint_set,
                                    StopAt("ratio", target), settings)
    if r[-1] == target:
        return branch.points[-1].orbit
    raise NoBracket(f"ratio {ell}/{m} not bracketed on branch (range "
                    f"{r.min():.6g}..{r.max():.6g})")


def lock_ratio_continue(start, ell, m, settings=None, base_cs=None, stop=(), cs=None):
    """Continue `start` in the amplitude ``a`` with ``T/T0 = ell/m`` held fixed.

    The constraint set is `cs` when given (it must fix the ratio); otherwise
    it is derived from `base_cs` by adding the ratio constraint and freeing
    ``a`` and, when ``x_n(0)`` is pinned, ``xn0`` to keep the balance.
    """
    settings = settings or ContinuationSettings()
    target = ell / m
    if abs(start.ratio - target) > 1e-10:
        raise ValueError(f"start ratio {start.ratio!r} does not match {ell}/{m}")
    if cs is None:
        free = ["a", "T"]
        if base_cs.pin_xn0:
            free.append("xn0")
        free += ["p1", "p2"]
        cs = base_cs.replace(fix_ratio=True, free=tuple(free))
    elif not cs.fix_ratio:
        raise ValueError("locked continuation needs a constraint set with fix_ratio")
    start = start.with_values(r=target)
    if settings.direction_param is None:
        settings = _replace_settings(settings, direction_param="a")
    return continue_branch(start, cs, settings, stop)


def _replace_settings(settings, **kw):
    from dataclasses import replace

    return replace(settings, **kw)
