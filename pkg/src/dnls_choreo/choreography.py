r"""Resonance arithmetic and choreography checks in the non-rotating frame.

An orbit of the rotating-frame equations with period ``T`` is ``l:m``
resonant when ``T / T0 = l / m`` with ``gcd(|l|, m) = 1``.  Multiplying by
``exp(i omega t)`` gives the non-rotating motion ``q_j``, which closes after
``m`` orbit periods.  Phases below are normalised so that one orbit period
is ``2 pi``.
"""
from dataclasses import dataclass
from math import gcd

import numpy as np
from scipy.spatial import cKDTree

from .collocation import _eval
from .errors import CenterOnCurve, NotCoprime, RatioMismatch
from .lattice import to_complex

FULL = "Full"
PARTIAL = "Partial"
NON_RESONANT = "NonResonant"


def _check_coprime(ell, m):
    if m <= 0:
        raise NotCoprime(f"m must be positive, got {m}")
    if gcd(abs(int(ell)), int(m)) != 1:
        raise NotCoprime(f"{ell}:{m} is not in lowest terms")


def modular_inverse(ell, m):
    """``l*`` in ``[0, m)`` with ``l * l* = 1 (mod m)``; 0 when ``m == 1``."""
    if m <= 0:
        raise NotCoprime(f"m must be positive, got {m}")
    if m == 1:
        return 0
    if gcd(int(ell) % m, m) != 1:
        raise NotCoprime(f"{ell} has no inverse modulo {m}")
    return pow(int(ell), -1, int(m))


@dataclass(frozen=True)
class ResonanceLabel:
    n: int
    ell: int
    m: int
    k: int
    alpha: int
    r: int
    ell_star: int
    k_tilde: int

    @property
    def s(self):
        return self.k * self.ell - self.alpha * self.m

    def __str__(self):
        return f"{self.ell}:{self.m}"


def resonance_admissible(n, k, alpha, ell, m):
    """Completed :class:`ResonanceLabel` if ``n`` divides ``k l - alpha m``, else None."""
    _check_coprime(ell, m)
    s = k * ell - alpha * m
    if s % n:
        return None
    ell_star = modular_inverse(ell, m)
    return ResonanceLabel(n, ell, m, k, alpha, s // n, ell_star, k - s * ell_star)


@dataclass(frozen=True)
class ChoreographyType:
    kind: str
    curves: int

    def to_dict(self):
        return {"type": self.kind, "curves": self.curves}


def classify_orbit(n, k, alpha, ell, m):
    """Full, or Partial with ``n / gcd(|k l - alpha m|, n)`` closed curves.

    ``g = 1`` is reported as Partial with ``n`` curves.
    """
    _check_coprime(ell, m)
    g = gcd(abs(k * ell - alpha * m), n)
    if g == n:
        return ChoreographyType(FULL, 1)
    return ChoreographyType(PARTIAL, n // g)


def partial_label(n, k, alpha, ell, m):
    """Label data for any coprime resonance, admissible or not.

    For a partial choreography ``k_tilde = k - s l*`` still relates the
    sites that share the curve of site ``n``; ``r`` is ``s / n`` rounded
    towards zero.
    """
    _check_coprime(ell, m)
    s = k * ell - alpha * m
    ell_star = modular_inverse(ell, m)
    return ResonanceLabel(n, ell, m, k, alpha, int(s / n), ell_star, k - s * ell_star)


# --------------------------------------------------------------------------
# traces
# --------------------------------------------------------------------------

@dataclass
class NonrotatingTrace:
    """Sampled non-rotating motion over one choreography period ``m T``.

    ``samples[i, j]`` is ``q_{j+1}`` at phase ``phase[i]``; the phase runs
    over ``[0, 2 pi m)`` in steps of ``2 pi / S`` with ``S`` samples per
    orbit period.
    """

    samples: np.ndarray
    phase: np.ndarray
    period: float
    label: ResonanceLabel
    orbit: object = None
    per_period: int = 0

    @property
    def times(self):
        return self.phase / (2.0 * np.pi) * self.period / self.label.m

    def closure_error(self):
        q_end = _q_at(self.orbit, np.array([2.0 * np.pi * self.label.m]))[0]
        return float(np.max(np.abs(q_end - self.samples[0])))


def _q_at(orbit, phase):
    """Non-rotating sites at the given orbit phases (any real values)."""
    s = np.mod(phase / (2.0 * np.pi), 1.0)
    u = to_complex(_eval(orbit, s, 0))
    rot = np.exp(1j * (orbit.params.omega * orbit.T / (2.0 * np.pi)) * phase)
    return rot[:, None] * u


def _per_period(n, m, n_samples):
    """Samples per orbit period: a multiple of ``n`` with ``m S >= n_samples``."""
    per = -(-n_samples // m)
    return n * max(1, -(-per // n))


def build_nonrotating(orbit, label, n_samples=4096, tol=1e-9):
    """Sample ``q_j`` over ``m`` orbit periods.

    At least `n_samples` points are taken; the count per orbit period is a
    multiple of ``n`` so that site shifts by ``k zeta`` fall on the grid.
    """
    if abs(orbit.ratio - label.ell / label.m) > tol:
        raise RatioMismatch(f"orbit ratio {orbit.ratio:.12g} differs from {label}")
    S = _per_period(orbit.n, label.m, n_samples)
    phase = 2.0 * np.pi * np.arange(label.m * S) / S
    q = _q_at(orbit, phase)
    return NonrotatingTrace(q, phase, label.m * orbit.T, label, orbit, S)


def choreography_residual(trace, sites=None, k_tilde=None):
    """Max over sites and samples of ``|q_j(t) - q_n(t + j k~ zeta)|``.

    `sites` restricts the check (1-based site numbers); `k_tilde` overrides
    the label's shift.
    """
    orbit = trace.orbit
    n = orbit.n
    kt = trace.label.k_tilde if k_tilde is None else k_tilde
    sites = range(1, n + 1) if sites is None else sites
    zeta = 2.0 * np.pi / n
    err = 0.0
    for j in sites:
        shifted = _q_at(orbit, trace.phase + j * kt * zeta)[:, n - 1]
        err = max(err, float(np.max(np.abs(trace.samples[:, j - 1] - shifted))))
    return err


def winding_number(trace, center=None, site=None):
    """Signed turns of ``q_site`` (default: site n) about `center`.

    Counterclockwise is positive; the default centre is the sample mean.
    """
    site = trace.samples.shape[1] if site is None else site
    z = trace.samples[:, site - 1]
    c = np.mean(z) if center is None else complex(center)
    w = z - c
    if np.min(np.abs(w)) < 1e-12:
        raise CenterOnCurve(f"centre {c} lies on the curve")
    dphi = np.angle(np.roll(w, -1) / w)
    return int(round(float(np.sum(dphi)) / (2.0 * np.pi)))


def _to_xy(z):
    return np.column_stack([z.real, z.imag])


def _directed_hausdorff(P, Q):
    """Max over points of `P` of the distance to the closed polyline `Q`."""
    Pxy, Qxy = _to_xy(P), _to_xy(Q)
    _, idx = cKDTree(Qxy).query(Pxy)
    best = np.full(len(P), np.inf)
    for off in (-1, 0):
        a = Qxy[(idx + off) % len(Q)]
        b = Qxy[(idx + off + 1) % len(Q)]
        ab = b - a
        t = np.sum((Pxy - a) * ab, axis=1) / np.maximum(np.sum(ab * ab, axis=1), 1e-300)
        t = np.clip(t, 0.0, 1.0)
        d = np.linalg.norm(Pxy - (a + t[:, None] * ab), axis=1)
        best = np.minimum(best, d)
    return float(np.max(best))


def hausdorff(P, Q):
    """Symmetric Hausdorff distance between two closed sampled curves."""
    return max(_directed_hausdorff(P, Q), _directed_hausdorff(Q, P))


def rotation_symmetry_error(trace, site=None):
    """Hausdorff distance between ``q_site`` and its rotation by ``2 pi / m``."""
    site = trace.samples.shape[1] if site is None else site
    z = trace.samples[:, site - 1]
    return hausdorff(z, z * np.exp(2j * np.pi / trace.label.m))


def count_curves(trace, threshold):
    """Number of distinct site curves, grouping sites within `threshold` (Hausdorff)."""
    n = trace.samples.shape[1]
    reps = []
    for j in range(n):
        z = trace.samples[:, j]
        if not any(hausdorff(z, trace.samples[:, i]) <= threshold for i in reps):
            reps.append(j)
    return len(reps)


def detect_wave_index(orbit, samples=64):
    """Mode index ``k`` best satisfying ``u_j(t) = exp(i j alpha zeta) u_n(t + j k zeta)``.

    Returns ``(k, residual)``.
    """
    n = orbit.n
    alpha = orbit.params.alpha
    zeta = 2.0 * np.pi / n
    s = np.arange(samples) / samples
    u = to_complex(_eval(orbit, s, 0))
    best = (None, np.inf)
    for k in range(1, n):
        err = 0.0
        for j in range(1, n):
            sh = np.mod(s + j * k / n, 1.0)
            un = to_complex(_eval(orbit, sh, 0))[:, n - 1]
            err = max(err, float(np.max(np.abs(u[:, j - 1] - np.exp(1j * j * alpha * zeta) * un))))
        if err < best[1]:
            best = (k, err)
    return best


def match_resonance(ratio, max_den=32, tol=1e-8):
    """Reduced ``(l, m)`` with ``m <= max_den`` and ``|ratio - l/m| <= tol``, or None."""
    for m in range(1, max_den + 1):
        ell = int(round(ratio * m))
        if gcd(abs(ell), m) == 1 and abs(ratio - ell / m) <= tol:
            return ell, m
    return None


def classify_report(orbit, k, ell=None, m=None, n_samples=4096, max_den=32):
    """Classification summary of an orbit: type, curves, winding and errors."""
    n, alpha = orbit.n, orbit.params.alpha
    if ell is None:
        hit = match_resonance(orbit.ratio, max_den)
        if hit is None:
            return {"type": NON_RESONANT, "curves": None, "winding": None,
                    "residual": None, "symmetry_error": None, "ratio": orbit.ratio}
        ell, m = hit
    kind = classify_orbit(n, k, alpha, ell, m)
    label = resonance_admissible(n, k, alpha, ell, m) or partial_label(n, k, alpha, ell, m)
    trace = build_nonrotating(orbit, label, n_samples)
    if kind.kind == FULL:
        residual = choreography_residual(trace)
    else:
        step = kind.curves
        residual = choreography_residual(trace, sites=range(step, n + 1, step))
    return {"type": kind.kind, "curves": kind.curves, "ell": ell, "m": m, "k": k,
            "k_tilde": label.k_tilde, "winding": winding_number(trace),
            "residual": residual, "symmetry_error": rotation_symmetry_error(trace),
            "geometric_curves": count_curves(trace, 1e-4 * orbit.params.a),
            "ratio": orbit.ratio}
