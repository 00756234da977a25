"""Monodromy matrices, Floquet multipliers and a posteriori integration."""
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .collocation import collocation_tables, evaluate_derivative, _eval
from .lattice import (amplitude_norm, hamiltonian, rhs_blocks, to_complex,
                      to_flat, vector_field)

STABLE = "Stable"
ALMOST_STABLE = "AlmostStable"
UNSTABLE = "Unstable"


def _jacobian_dense(u, T, omega):
    """Dense ``T * D vector_field`` for an array of points ``u`` of shape (P, n)."""
    bs, bp, bm = rhs_blocks(u, T, omega)
    P, n = u.shape
    M = np.zeros((P, 2 * n, 2 * n))
    for k in range(n):
        r = slice(2 * k, 2 * k + 2)
        kp, km = (k + 1) % n, (k - 1) % n
        M[:, r, r] += bs[:, k]
        M[:, r, 2 * kp:2 * kp + 2] += bp[:, k]
        M[:, r, 2 * km:2 * km + 2] += bm[:, k]
    return M


def monodromy_collocation(orbit):
    """Monodromy from the collocation discretisation by interval condensation.

    On each interval the linearised collocation equations express the
    right-end node value through the left-end one, ``v_{i+1} = G_i v_i``;
    the monodromy matrix is the ordered product of the ``G_i``.
    """
    m = orbit.degree
    n2 = 2 * orbit.n
    _, g, _, L, D = collocation_tables(m)
    h = np.diff(orbit.mesh)
    I = np.eye(n2)
    M = np.eye(n2)
    tg = (orbit.mesh[:-1, None] + h[:, None] * g[None, :])
    ug = to_complex(_eval(orbit, tg.ravel(), 0)).reshape(orbit.N, m, orbit.n)
    for i in range(orbit.N):
        Jl = _jacobian_dense(ug[i], orbit.T, orbit.params.omega)  # (m, n2, n2)
        A = np.zeros((m * n2, m * n2))
        B = np.zeros((m * n2, n2))
        for l in range(m):
            rows = slice(l * n2, (l + 1) * n2)
            B[rows] = D[l, 0] / h[i] * I - L[l, 0] * Jl[l]
            for j in range(1, m + 1):
                A[rows, (j - 1) * n2:j * n2] = D[l, j] / h[i] * I - L[l, j] * Jl[l]
        G = np.linalg.solve(A, -B)[(m - 1) * n2:]
        M = G @ M
    return M


def monodromy_variational(orbit, rtol=1e-12, atol=1e-12):
    """Monodromy by integrating the variational equations over one period."""
    n = orbit.n
    n2 = 2 * n
    p = orbit.params

    def rhs(t, y):
        z = y[:n2]
        u = to_complex(z)
        Phi = y[n2:].reshape(n2, n2)
        J = _jacobian_dense(u[None, :], 1.0, p.omega)[0]
        return np.concatenate([to_flat(vector_field(u, p)), (J @ Phi).ravel()])

    y0 = np.concatenate([orbit.values[0], np.eye(n2).ravel()])
    sol = solve_ivp(rhs, (0.0, orbit.T), y0, method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(f"variational integration failed: {sol.message}")
    return sol.y[n2:, -1].reshape(n2, n2)


def monodromy(orbit, method="collocation"):
    """Time-``T`` fundamental matrix of the linearisation along `orbit`."""
    if method == "collocation":
        return monodromy_collocation(orbit)
    if method == "variational":
        return monodromy_variational(orbit)
    raise ValueError(f"unknown monodromy method {method!r}")


@dataclass
class FloquetSpectrum:
    multipliers: np.ndarray
    n_trivial: int
    n_unstable: int
    classification: str
    max_deviation: float

    @property
    def is_stable(self):
        return self.classification in (STABLE, ALMOST_STABLE)

    @property
    def flag(self):
        return "S" if self.is_stable else "U"

    def to_csv(self):
        lines = ["re,im,modulus"]
        for lam in self.multipliers:
            lines.append(f"{lam.real:.17g},{lam.imag:.17g},{abs(lam):.17g}")
        return "\n".join(lines) + "\n"


def multipliers(M, tol_unit=1e-4, tol_stab=1e-3, max_trivial=4):
    """Floquet multipliers of `M` and a stability classification.

    Multipliers within `tol_unit` of +1 are trivial (at most `max_trivial`,
    closest first) and excluded.  With ``d = max | |lam| - 1 |`` over the rest:
    ``d <= tol_stab`` is Stable, ``d <= 10 tol_stab`` AlmostStable, otherwise
    Unstable.  ``n_unstable`` counts multipliers with ``|lam| > 1 + 10 tol_stab``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] % 2:
        raise ValueError("monodromy must be square with even dimension")
    lam = np.linalg.eigvals(M)
    if not np.all(np.isfinite(lam)):
        raise np.linalg.LinAlgError("eigensolver failure")
    order = np.argsort(np.abs(lam - 1.0))
    n_trivial = int(min(np.sum(np.abs(lam - 1.0) <= tol_unit), max_trivial))
    rest = lam[order[n_trivial:]]
    dev = np.abs(np.abs(rest) - 1.0)
    d = float(np.max(dev)) if rest.size else 0.0
    n_unstable = int(np.sum(np.abs(rest) > 1.0 + 10.0 * tol_stab))
    if d <= tol_stab:
        cls = STABLE
    elif d <= 10.0 * tol_stab:
        cls = ALMOST_STABLE
    else:
        cls = UNSTABLE
    lam_sorted = lam[np.lexsort((lam.imag, np.abs(lam)))]
    return FloquetSpectrum(lam_sorted, n_trivial, n_unstable, cls, d)


def floquet(orbit, method="collocation", **kw):
    return multipliers(monodromy(orbit, method), **kw)


def pairing_error(lam):
    """Max over multipliers of ``| |lam| * |mu| - 1 |`` for the best partner ``mu``.

    Partners are matched greedily, each multiplier with the one whose
    modulus is closest to its reciprocal.
    """
    mods = np.sort(np.abs(np.asarray(lam)))
    return float(np.max(np.abs(mods * mods[::-1] - 1.0)))


# --------------------------------------------------------------------------
# a posteriori integration
# --------------------------------------------------------------------------

@dataclass
class VerifyReport:
    max_distance: float
    dE: float
    dA: float
    distances: np.ndarray
    times: np.ndarray


def _align(orbit, z, s0, iters=12):
    """Distance of states `z` (P, 2n) to the orbit modulo time shift and gauge.

    ``s0`` holds initial guesses for the scaled orbit time of each state.
    Time shift and gauge phase are fitted jointly since the two directions
    can be nearly parallel.
    """
    u = to_complex(z)
    s = np.mod(s0, 1.0)
    o = to_complex(_eval(orbit, s, 0))
    phi = np.angle(np.sum(np.conj(o) * u, axis=1))
    for _ in range(iters):
        e = np.exp(1j * phi)[:, None]
        o = to_complex(_eval(orbit, s, 0))
        c1 = e * to_complex(evaluate_derivative(orbit, s))
        c2 = 1j * e * o
        r = e * o - u
        a11 = np.sum(np.abs(c1) ** 2, axis=1)
        a22 = np.sum(np.abs(c2) ** 2, axis=1)
        a12 = np.sum((np.conj(c1) * c2).real, axis=1)
        b1 = np.sum((np.conj(c1) * r).real, axis=1)
        b2 = np.sum((np.conj(c2) * r).real, axis=1)
        det = a11 * a22 - a12 ** 2
        det = np.where(det > 0, det, 1e-300)
        ds = (a22 * b1 - a12 * b2) / det
        dphi = (a11 * b2 - a12 * b1) / det
        s = np.mod(s - ds, 1.0)
        phi = phi - dphi
        if np.max(np.abs(ds)) < 1e-15:
            break
    o = to_complex(_eval(orbit, s, 0))
    return np.linalg.norm(np.exp(1j * phi)[:, None] * o - u, axis=1), s


def _nearest_phase(orbit, z, K=2048):
    """Coarse scaled time of the orbit sample closest (mod gauge) to each state."""
    grid = np.arange(K) / K
    o = to_complex(_eval(orbit, grid, 0))
    u = to_complex(z)
    best = np.empty(len(u))
    on2 = np.sum(np.abs(o) ** 2, axis=1)
    for start in range(0, len(u), 512):
        chunk = u[start:start + 512]
        ip = np.abs(np.conj(o) @ chunk.T)  # (K, P)
        d2 = on2[:, None] - 2 * ip
        best[start:start + 512] = grid[np.argmin(d2, axis=0)]
    return best


def orbital_distance(orbit, z):
    """Distance of states to the orbit, minimised over time shift and gauge phase."""
    z = np.atleast_2d(z)
    d, _ = _align(orbit, z, _nearest_phase(orbit, z))
    return d


def integrate_verify(orbit, n_periods=100, tol=1e-10, samples_per_period=40,
                     perturbation=None):
    """Integrate the rotating-frame equations from ``u(0)`` for `n_periods`.

    Returns relative drifts of ``H_omega`` and ``A`` and the distance from the
    stored orbit after aligning time and gauge phase.  `perturbation` (flat
    vector) is added to the initial state.
    """
    if n_periods < 1:
        raise ValueError("n_periods must be >= 1")
    p = orbit.params
    z0 = orbit.values[0].copy()
    if perturbation is not None:
        z0 = z0 + perturbation

    def rhs(t, z):
        return to_flat(vector_field(to_complex(z), p))

    t_eval = np.linspace(0.0, n_periods * orbit.T, n_periods * samples_per_period + 1)
    sol = solve_ivp(rhs, (0.0, t_eval[-1]), z0, method="DOP853", rtol=tol, atol=tol,
                    t_eval=t_eval)
    if not sol.success:
        raise RuntimeError(f"integration failed: {sol.message}")
    Z = sol.y.T
    u = to_complex(Z)
    H = hamiltonian(u, p)
    A = amplitude_norm(u)
    dE = float(np.max(np.abs(H - H[0])) / max(abs(H[0]), 1e-300))
    dA = float(np.max(np.abs(A - A[0])) / max(abs(A[0]), 1e-300))
    s_guess = _nearest_phase(orbit, Z)
    dist, _ = _align(orbit, Z, s_guess)
    return VerifyReport(float(np.max(dist)), dE, dA, dist, sol.t)


def one_period_error(orbit, rtol=1e-13):
    """Max distance between the stored orbit and a tight integration over one period."""
    p = orbit.params

    def rhs(t, z):
        return to_flat(vector_field(to_complex(z), p))

    ts = orbit.node_times()
    sol = solve_ivp(rhs, (0.0, orbit.T), orbit.values[0], method="DOP853", rtol=rtol,
                    atol=rtol, t_eval=ts * orbit.T)
    return float(np.max(np.abs(sol.y.T - orbit.values)))


def unstable_direction(M):
    """Real unit vector along the eigenvector of the largest-modulus multiplier."""
    lam, V = np.linalg.eig(M)
    i = int(np.argmax(np.abs(lam)))
    v = V[:, i]
    v = v * np.exp(-1j * np.angle(v[np.argmax(np.abs(v))]))
    v = v.real
    return v / np.linalg.norm(v), lam[i]
