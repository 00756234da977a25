r"""DNLS lattice in the frame rotating with frequency :math:`\omega`.

Sites are complex numbers :math:`u_1, \dots, u_n` with cyclic coupling.
The dynamics is

.. math:: \dot u_k = -i\,(u_{k-1} - 2u_k + u_{k+1} + |u_k|^2 u_k + \omega u_k)

which is :math:`\mathcal{J}\nabla H_\omega` for

.. math:: H_\omega = \tfrac12 \sum_j \left(\tfrac12|u_j|^4 + \omega|u_j|^2
          - |u_{j+1} - u_j|^2\right)

with :math:`\mathcal{J}(x, y) = (y, -x)` acting on every site.

Inside the package a site vector is either a complex array of length ``n``
or a flat real array ``[x1, y1, ..., xn, yn]``; :func:`to_flat` and
:func:`to_complex` convert between the two.
"""
from dataclasses import dataclass, field

import numpy as np

UNFOLDING_MODES = ("literal", "gradient")


def omega_of_a(n, a, alpha=1):
    """Rotation frequency for which the polygon of amplitude `a` is stationary."""
    if n < 3:
        raise ValueError(f"need n >= 3 sites, got {n}")
    zeta = 2.0 * np.pi / n
    return 4.0 * np.sin(alpha * zeta / 2.0) ** 2 - a * a


@dataclass(frozen=True)
class LatticeParams:
    """Static problem data.

    ``omega`` defaults to the dispersion relation ``omega_of_a(n, a, alpha)``.
    """

    n: int
    a: float
    alpha: int = 1
    omega: float = field(default=None)

    def __post_init__(self):
        if self.n < 3:
            raise ValueError(f"need n >= 3 sites, got {self.n}")
        if not 1 <= self.alpha <= self.n:
            raise ValueError(f"alpha must lie in 1..{self.n}, got {self.alpha}")
        if self.a < 0:
            raise ValueError(f"amplitude must be non-negative, got {self.a}")
        if self.omega is None:
            object.__setattr__(self, "omega", float(omega_of_a(self.n, self.a, self.alpha)))

    @property
    def zeta(self):
        return 2.0 * np.pi / self.n

    @property
    def T0(self):
        """Period of the rotating frame, ``2*pi/omega`` (signed)."""
        return 2.0 * np.pi / self.omega

    def with_a(self, a):
        """Same lattice at a new amplitude, omega from the dispersion relation."""
        return LatticeParams(self.n, a, self.alpha)


def to_complex(z):
    z = np.asarray(z, dtype=float)
    return z[..., 0::2] + 1j * z[..., 1::2]


def to_flat(u):
    u = np.asarray(u, dtype=complex)
    z = np.empty(u.shape[:-1] + (2 * u.shape[-1],))
    z[..., 0::2] = u.real
    z[..., 1::2] = u.imag
    return z


def _laplacian(u):
    return np.roll(u, 1, axis=-1) + np.roll(u, -1, axis=-1) - 2.0 * u


def hamiltonian(u, p):
    u = np.asarray(u, dtype=complex)
    mod2 = np.abs(u) ** 2
    diff2 = np.abs(np.roll(u, -1, axis=-1) - u) ** 2
    return 0.5 * np.sum(0.5 * mod2 ** 2 + p.omega * mod2 - diff2, axis=-1)


def amplitude_norm(u):
    return np.sum(np.abs(np.asarray(u, dtype=complex)) ** 2, axis=-1)


def hamiltonian_gradient(u, omega):
    """Complex form ``dH/dx + i dH/dy`` of the gradient of ``H_omega``."""
    return _laplacian(u) + np.abs(u) ** 2 * u + omega * u


def vector_field(u, p):
    """Right-hand side of the rotating-frame equations, complex form."""
    u = np.asarray(u, dtype=complex)
    return -1j * hamiltonian_gradient(u, p.omega)


def polygonal_equilibrium(n, a, alpha=1):
    """Sites ``a * exp(i j alpha zeta)`` for ``j = 1..n``."""
    if n < 3:
        raise ValueError(f"need n >= 3 sites, got {n}")
    j = np.arange(1, n + 1)
    return a * np.exp(1j * j * alpha * 2.0 * np.pi / n)


def unfolding_directions(u, omega, mode="literal"):
    """The two unfolding vector fields multiplied by p1 and p2.

    ``"literal"`` uses ``4u_k - 4u_k^3 - 2conj(u_{k+1})`` and
    ``u_{k+1} - conj(u_{k-1})`` as written. ``"gradient"`` uses the gradients of
    the Hamiltonian and of the amplitude norm instead.
    """
    if mode == "literal":
        up = np.roll(u, -1, axis=-1)
        um = np.roll(u, 1, axis=-1)
        g1 = 4.0 * u - 4.0 * u ** 3 - 2.0 * np.conj(up)
        g2 = up - np.conj(um)
    elif mode == "gradient":
        g1 = hamiltonian_gradient(u, omega)
        g2 = 2.0 * u
    else:
        raise ValueError(f"unknown unfolding mode {mode!r}")
    return g1, g2


def extended_rhs(u, T, p, p1=0.0, p2=0.0, unfolding="literal"):
    """Vector field of the periodic boundary value problem on ``[0, 1]``.

    Equals ``T * vector_field(u, p)`` when ``p1 == p2 == 0``.
    """
    if T == 0:
        raise ValueError("period T must be non-zero")
    u = np.asarray(u, dtype=complex)
    out = T * vector_field(u, p)
    if p1 != 0.0 or p2 != 0.0:
        g1, g2 = unfolding_directions(u, p.omega, unfolding)
        out = out + p1 * g1 + p2 * g2
    return out


def to_nonrotating(u_trace, p, nu, m):
    r"""Non-rotating frame trajectory from one sampled rotating period.

    Parameters
    ----------
    u_trace : (S, n) complex array
        Orbit sampled at phases ``2*pi*s/S``, ``s = 0..S-1`` (endpoint excluded).
    p : LatticeParams
    nu : float
        Orbit frequency ``2*pi/T``.
    m : int
        Number of rotating periods to cover.

    Returns
    -------
    phase : (m*S,) array
        Phases in ``[0, 2*pi*m)``; real time is ``phase / nu``.
    q : (m*S, n) complex array
        ``q_j = exp(i (omega/nu) phase) u_j(phase mod 2 pi)``.
    """
    if m <= 0:
        raise ValueError(f"m must be positive, got {m}")
    u_trace = np.asarray(u_trace, dtype=complex)
    S = u_trace.shape[0]
    phase = 2.0 * np.pi * np.arange(m * S) / S
    tiled = np.tile(u_trace, (m, 1))
    return phase, np.exp(1j * (p.omega / nu) * phase)[:, None] * tiled


def _real_blocks(A, B):
    """2x2 real blocks of ``du -> A du + B conj(du)``."""
    out = np.empty(np.broadcast(A, B).shape + (2, 2))
    out[..., 0, 0] = (A + B).real
    out[..., 0, 1] = -(A - B).imag
    out[..., 1, 0] = (A + B).imag
    out[..., 1, 1] = (A - B).real
    return out


def rhs_blocks(u, T, omega, p1=0.0, p2=0.0, unfolding="literal"):
    """Jacobian of :func:`extended_rhs` as per-site 2x2 blocks.

    Returns ``(self, plus, minus)``, each of shape ``u.shape + (2, 2)``:
    derivatives of component ``k`` with respect to sites ``k``, ``k+1``
    and ``k-1``.
    """
    u = np.asarray(u, dtype=complex)
    zero = np.zeros(u.shape, dtype=complex)
    A_self = -1j * T * (-2.0 + 2.0 * np.abs(u) ** 2 + omega)
    B_self = -1j * T * u ** 2
    A_plus = zero - 1j * T
    B_plus = zero.copy()
    A_minus = zero - 1j * T
    B_minus = zero.copy()
    if unfolding == "literal":
        A_self = A_self + p1 * (4.0 - 12.0 * u ** 2)
        A_plus = A_plus + p2
        B_plus = B_plus - 2.0 * p1
        B_minus = B_minus - p2
    elif unfolding == "gradient":
        A_self = A_self + p1 * (-2.0 + 2.0 * np.abs(u) ** 2 + omega) + 2.0 * p2
        B_self = B_self + p1 * u ** 2
        A_plus = A_plus + p1
        A_minus = A_minus + p1
    else:
        raise ValueError(f"unknown unfolding mode {unfolding!r}")
    return (_real_blocks(A_self, B_self), _real_blocks(A_plus, B_plus),
            _real_blocks(A_minus, B_minus))


def blocks_to_dense(blocks):
    """Dense ``2n x 2n`` matrix from the three block arrays of one point."""
    b_self, b_plus, b_minus = blocks
    n = b_self.shape[0]
    M = np.zeros((2 * n, 2 * n))
    for k in range(n):
        r = slice(2 * k, 2 * k + 2)
        M[r, r] += b_self[k]
        kp = (k + 1) % n
        km = (k - 1) % n
        M[r, 2 * kp:2 * kp + 2] += b_plus[k]
        M[r, 2 * km:2 * km + 2] += b_minus[k]
    return M


def vector_field_jacobian(u, p):
    """Dense real Jacobian of :func:`vector_field` in flat coordinates."""
    return blocks_to_dense(rhs_blocks(u, 1.0, p.omega))
