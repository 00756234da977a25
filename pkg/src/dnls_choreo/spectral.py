"""Linearisation at the polygonal equilibrium and Lyapunov starters."""
from dataclasses import dataclass

import numpy as np

from .collocation import RotatingOrbit, uniform_mesh
from .lattice import (LatticeParams, _real_blocks, blocks_to_dense, polygonal_equilibrium,
                      to_flat)

# symplectic structure (x, y) -> (y, -x) on every site
_J2 = np.array([[0.0, 1.0], [-1.0, 0.0]])


def symplectic_matrix(n):
    return np.kron(np.eye(n), _J2)


def hessian(u, p):
    """Real symmetric second derivative of ``H_omega`` in flat coordinates."""
    u = np.asarray(u, dtype=complex)
    one = np.ones(u.shape, dtype=complex)
    zero = np.zeros(u.shape, dtype=complex)
    blocks = (_real_blocks(-2.0 + 2.0 * np.abs(u) ** 2 + p.omega, u ** 2),
              _real_blocks(one, zero), _real_blocks(one, zero))
    return blocks_to_dense(blocks)


def stability_matrix(u, p):
    return symplectic_matrix(p.n) @ hessian(u, p)


def _cos_theta(p):
    c = np.cos(p.alpha * p.zeta)
    return 0.0 if abs(c) < 1e-12 else c


def mode_denominator(p, k):
    return 2.0 * _cos_theta(p) * np.sin(k * np.pi / p.n) ** 2


def mode_condition(p, k):
    """Whether wave number `k` carries a normal-mode pair at amplitude ``p.a``.

    A non-positive denominator lies outside the hypothesis of the criterion
    and is reported as ``False``.
    """
    if not 1 <= k <= p.n - 1:
        raise ValueError(f"k must lie in 1..{p.n - 1}")
    den = mode_denominator(p, k)
    return bool(den > 0 and p.a ** 2 / den < 1.0)


def linear_frequencies(p, k):
    """Closed-form eigenvalues ``i*nu`` of the linearisation for wave number `k`.

    Returns the two values ``2 sin(theta) sin(q) +/- sqrt(D (D - 2 a^2))`` with
    ``q = k zeta`` and ``D = 4 cos(theta) sin^2(q/2)``; they are the imaginary
    parts of the eigenvalues whose eigenvectors carry the spatial factor
    ``exp(i j q)``.  Complex results signal modulational instability.
    """
    theta = p.alpha * p.zeta
    q = k * p.zeta
    D = 4.0 * np.cos(theta) * np.sin(q / 2.0) ** 2
    s = 2.0 * np.sin(theta) * np.sin(q)
    R = np.sqrt(complex(D * (D - 2.0 * p.a ** 2)))
    return s + R, s - R


@dataclass
class Mode:
    k: int
    nu: float
    eigenvector: np.ndarray
    admissible: bool
    outside_hypothesis: bool = False


@dataclass
class ModeSpectrum:
    params: LatticeParams
    modes: list
    eigenvalues: np.ndarray

    def admissible(self):
        return [md for md in self.modes if md.admissible and md.nu is not None]

    def for_k(self, k):
        return sorted((md for md in self.admissible() if md.k == k), key=lambda md: md.nu)

    def to_csv(self):
        lines = ["k,nu,admissible"]
        for md in sorted(self.modes, key=lambda md: (md.k, md.nu if md.nu is not None else -1)):
            nu = "" if md.nu is None else format(md.nu, ".17g")
            lines.append(f"{md.k},{nu},{int(md.admissible)}")
        return "\n".join(lines) + "\n"


def _normalize(v):
    v = v / np.linalg.norm(v)
    j = np.argmax(np.abs(v))
    return v * np.exp(-1j * np.angle(v[j]))


def wave_number(v, p):
    """Spatial wave number of an eigenvector for a positive frequency.

    The coefficient of ``exp(i nu t)`` in the complex site perturbation is
    ``(X + iY)/2``; after removing the equilibrium phase ``exp(i j alpha
    zeta)`` it is proportional to ``exp(i j k zeta)``.
    """
    j = np.arange(1, p.n + 1)
    Z = 0.5 * (v[0::2] + 1j * v[1::2]) * np.exp(-1j * j * p.alpha * p.zeta)
    spec = np.abs(np.fft.fft(Z))
    return int(np.argmax(spec))


def normal_modes(p, imag_tol=1e-8):
    """Positive-frequency normal modes of the polygonal equilibrium.

    One record is returned for every purely imaginary eigenvalue ``i*nu``,
    ``nu > 0``, labelled by the wave number of its eigenvector.  A wave
    number can carry zero, one or two frequencies.  Wave numbers failing
    :func:`mode_condition` are listed once with ``nu = None``.
    """
    if p.a <= 0:
        raise ValueError("normal modes need a > 0")
    u = polygonal_equilibrium(p.n, p.a, p.alpha)
    M = stability_matrix(u, p)
    evals, evecs = np.linalg.eig(M)
    if not np.all(np.isfinite(evals)):
        raise np.linalg.LinAlgError("eigensolver did not converge")
    scale = max(1.0, np.max(np.abs(evals)))
    outside = _cos_theta(p) <= 0
    modes = []
    seen = set()
    for lam, v in zip(evals, evecs.T):
        if lam.imag <= 1e-6 * scale or abs(lam.real) > imag_tol * scale:
            continue
        k = wave_number(v, p)
        if k == 0:
            continue
        if mode_condition(p, k):
            modes.append(Mode(k, float(lam.imag), _normalize(v), True))
            seen.add(k)
    for k in range(1, p.n):
        if not mode_condition(p, k):
            modes.append(Mode(k, None, None, False, bool(outside)))
    modes.sort(key=lambda md: (md.k, md.nu if md.nu is not None else -1.0))
    return ModeSpectrum(p, modes, evals)


def lyapunov_starter(p, k, eps=None, which=0, N=100, degree=4):
    """Small-amplitude periodic orbit near the equilibrium along mode `k`.

    ``which`` selects among the frequencies of wave number `k` (ascending).
    The orbit is ``a_j + eps * Re(exp(2 pi i t) exp(i theta) v)`` on ``[0, 1]``
    with ``T = 2 pi / nu``; ``theta`` makes ``y_n(0) = 0`` and gives a
    negative ``x_n`` displacement at ``t = 0``.
    """
    if p.a <= 0:
        raise ValueError("no Lyapunov family bifurcates from the zero state")
    if eps is None:
        eps = 1e-4 * p.a
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not mode_condition(p, k):
        raise ValueError(f"mode k={k} is not admissible at a={p.a}")
    cands = normal_modes(p).for_k(k)
    if which >= len(cands):
        raise ValueError(f"wave number {k} has only {len(cands)} frequencies")
    mode = cands[which]
    v = mode.eigenvector
    n = p.n
    ix, iy = 2 * n - 2, 2 * n - 1
    if abs(v[iy]) > 1e-14:
        phi = np.angle(v[iy])
        thetas = (np.pi / 2 - phi, -np.pi / 2 - phi)
        theta = min(thetas, key=lambda th: (np.exp(1j * th) * v[ix]).real)
    else:
        theta = np.pi - np.angle(v[ix])
    vt = v * np.exp(1j * theta)
    base = to_flat(polygonal_equilibrium(n, p.a, p.alpha))
    base[iy] = 0.0  # a_n = a exactly; drop rounding noise
    mesh = uniform_mesh(N)
    s = np.linspace(0.0, 1.0, degree + 1)
    h = np.diff(mesh)
    t = np.append((mesh[:-1, None] + h[:, None] * s[None, :-1]).ravel(), 1.0)
    vals = base[None, :] + eps * (np.exp(2j * np.pi * t)[:, None] * vt[None, :]).real
    vals[:, iy] -= vals[0, iy]
    vals[-1] = vals[0]
    return RotatingOrbit(p, mesh, degree, vals, 2.0 * np.pi / mode.nu,
                         meta={"k": k, "which": which, "nu": mode.nu})
