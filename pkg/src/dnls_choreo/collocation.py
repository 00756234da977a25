"""Periodic orbits as Gauss collocation solutions on the unit interval.

An orbit is stored as piecewise polynomials of degree ``m`` on a mesh
``0 = t_0 < ... < t_N = 1``.  Each interval carries ``m + 1`` equally spaced
nodes, the end nodes being shared with the neighbours, so continuity holds by
construction.  The node values form an array of shape ``(N*m + 1, 2n)`` in
flat ``[x1, y1, ..., xn, yn]`` coordinates.

The boundary value problem is the rotating-frame DNLS system scaled to unit
period, with two unfolding parameters ``p1, p2``, periodicity, a phase
condition and optional scalar constraints (see :class:`ConstraintSet`).
"""
import json
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, NoConvergence, SingularJacobian
from .lattice import (LatticeParams, amplitude_norm, hamiltonian, omega_of_a, rhs_blocks,
                      to_complex, to_flat, unfolding_directions, vector_field)

PARAM_NAMES = ("T", "a", "xn0", "E", "A", "r", "p1", "p2")


# --------------------------------------------------------------------------
# Lagrange / Gauss tables
# --------------------------------------------------------------------------

def _vandermonde_basis(nodes):
    V = np.vander(nodes, increasing=True)
    return np.linalg.inv(V)  # column j holds the monomial coefficients of L_j


def lagrange_values(nodes, x, deriv=0):
    """Matrix ``B[p, j] = L_j^{(deriv)}(x_p)`` for the Lagrange basis on `nodes`."""
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    C = _vandermonde_basis(nodes)
    q = np.arange(len(nodes))
    if deriv == 0:
        P = x[:, None] ** q
    elif deriv == 1:
        P = np.where(q > 0, q * x[:, None] ** np.maximum(q - 1, 0), 0.0)
    else:
        raise ValueError("only deriv 0 or 1 supported")
    return P @ C


@lru_cache(maxsize=16)
def collocation_tables(m):
    """Local nodes, Gauss points, Gauss weights and basis matrices on [0, 1]."""
    s = np.linspace(0.0, 1.0, m + 1)
    g, w = np.polynomial.legendre.leggauss(m)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    L = lagrange_values(s, g)
    D = lagrange_values(s, g, deriv=1)
    return s, g, w, L, D


# --------------------------------------------------------------------------
# Orbit container
# --------------------------------------------------------------------------

@dataclass
class RotatingOrbit:
    """Periodic solution in the rotating frame.

    ``values`` are the collocation node values (the coefficient tensor) of
    shape ``(N*degree + 1, 2n)``.  ``aux`` holds the tracked/targeted scalars
    ``E``, ``A`` and ``r`` used by the optional constraints; ``meta`` carries
    descriptive labels such as the seeding mode ``k``.
    """

    params: LatticeParams
    mesh: np.ndarray
    degree: int
    values: np.ndarray
    T: float
    p1: float = 0.0
    p2: float = 0.0
    xn0: float = None
    aux: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mesh = np.asarray(self.mesh, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.mesh[0] != 0.0 or self.mesh[-1] != 1.0 or np.any(np.diff(self.mesh) <= 0):
            raise ValueError("mesh must increase strictly from 0 to 1")
        N = len(self.mesh) - 1
        if self.values.shape != (N * self.degree + 1, 2 * self.params.n):
            raise ValueError(
                f"values shape {self.values.shape} inconsistent with N={N}, "
                f"degree={self.degree}, n={self.params.n}")
        if self.xn0 is None:
            self.xn0 = float(self.values[0, 2 * self.params.n - 2])
        for key in ("E", "A", "r"):
            self.aux.setdefault(key, 0.0)

    @property
    def n(self):
        return self.params.n

    @property
    def N(self):
        return len(self.mesh) - 1

    @property
    def nu(self):
        return 2.0 * np.pi / self.T

    @property
    def T0(self):
        return self.params.T0

    @property
    def ratio(self):
        """Resonance ratio ``T/T0 = T*omega/(2*pi)``."""
        return self.T * self.params.omega / (2.0 * np.pi)

    def node_times(self):
        s = np.linspace(0.0, 1.0, self.degree + 1)
        h = np.diff(self.mesh)
        t = (self.mesh[:-1, None] + h[:, None] * s[None, :-1]).ravel()
        return np.append(t, 1.0)

    def get(self, name):
        if name == "T":
            return self.T
        if name == "a":
            return self.params.a
        if name in ("xn0", "p1", "p2"):
            return getattr(self, name)
        if name in ("E", "A", "r"):
            return self.aux[name]
        raise KeyError(name)

    def with_values(self, **kw):
        """Copy with some of the scalar parameters (any of PARAM_NAMES) replaced."""
        out = replace(self, values=self.values.copy(), aux=dict(self.aux), meta=dict(self.meta))
        for name, val in kw.items():
            if name == "a":
                out.params = out.params.with_a(float(val))
            elif name in ("E", "A", "r"):
                out.aux[name] = float(val)
            elif name in ("T", "xn0", "p1", "p2"):
                setattr(out, name, float(val))
            else:
                raise KeyError(name)
        return out

    def monitors(self):
        u0 = to_complex(self.values[0])
        return {
            "T": self.T,
            "T0": self.T0,
            "ratio": self.ratio,
            "E": float(hamiltonian(u0, self.params)),
            "A": float(amplitude_norm(u0)),
            "xn0": float(self.values[0, 2 * self.n - 2]),
            "a": self.params.a,
            "p1": self.p1,
            "p2": self.p2,
        }

    # serialization -------------------------------------------------------
    def to_dict(self):
        return {
            "format": "dnls-choreo-orbit",
            "version": 1,
            "params": {"n": self.params.n, "a": self.params.a, "alpha": self.params.alpha,
                       "omega": self.params.omega},
            "mesh": self.mesh.tolist(),
            "degree": self.degree,
            "coeffs": self.values.tolist(),
            "T": self.T,
            "p1": self.p1,
            "p2": self.p2,
            "xn0": self.xn0,
            "aux": dict(self.aux),
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, d):
        pd = d["params"]
        params = LatticeParams(pd["n"], pd["a"], pd["alpha"], pd["omega"])
        return cls(params, np.array(d["mesh"]), d["degree"], np.array(d["coeffs"]),
                   d["T"], d["p1"], d["p2"], d["xn0"], dict(d.get("aux", {})),
                   dict(d.get("meta", {})))

    def save(self, path):
        from .output import export_orbit

        export_orbit(self, path)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def uniform_mesh(N):
    return np.linspace(0.0, 1.0, N + 1)


def orbit_from_function(params, func, T, N=100, degree=4, mesh=None, **kw):
    """Sample ``func(t) -> complex (n,)`` on the collocation nodes."""
    mesh = uniform_mesh(N) if mesh is None else np.asarray(mesh, dtype=float)
    N = len(mesh) - 1
    s = np.linspace(0.0, 1.0, degree + 1)
    h = np.diff(mesh)
    t = np.append((mesh[:-1, None] + h[:, None] * s[None, :-1]).ravel(), 1.0)
    vals = np.array([to_flat(func(ti)) for ti in t])
    return RotatingOrbit(params, mesh, degree, vals, T, **kw)


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------

def _locate(orbit, t):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    i = np.clip(np.searchsorted(orbit.mesh, t, side="right") - 1, 0, orbit.N - 1)
    h = orbit.mesh[i + 1] - orbit.mesh[i]
    return i, (t - orbit.mesh[i]) / h, h


def _eval(orbit, t, deriv):
    m = orbit.degree
    i, s, h = _locate(orbit, t)
    nodes = np.linspace(0.0, 1.0, m + 1)
    B = lagrange_values(nodes, s, deriv)  # (P, m+1)
    idx = i[:, None] * m + np.arange(m + 1)[None, :]
    out = np.einsum("pj,pjc->pc", B, orbit.values[idx])
    if deriv:
        out /= h[:, None]
    return out


def evaluate(orbit, t):
    """Site vector(s) at scaled time(s) `t` in [0, 1], complex form."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise ValueError("t must lie in [0, 1]")
    out = to_complex(_eval(orbit, t_arr, 0))
    return out[0] if t_arr.ndim == 0 else out


def evaluate_derivative(orbit, t):
    """d/dt of the representation (flat coordinates) at scaled time(s) `t`."""
    return _eval(orbit, t, 1)


def evaluate_periodic(orbit, t):
    """Evaluate at arbitrary real `t`, wrapped into [0, 1)."""
    return to_complex(_eval(orbit, np.mod(np.asarray(t, dtype=float), 1.0), 0))


def quadrature_weights(mesh, m):
    """Node weights integrating the piecewise interpolant over [0, 1]."""
    _, _, w, L, _ = collocation_tables(m)
    local = w @ L
    h = np.diff(mesh)
    N = len(h)
    qw = np.zeros(N * m + 1)
    idx = np.arange(N)[:, None] * m + np.arange(m + 1)[None, :]
    np.add.at(qw, idx, h[:, None] * local[None, :])
    return qw


# --------------------------------------------------------------------------
# Constraints
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Active scalar constraints and free parameters.

    Periodicity is always imposed.  Exactly one phase condition is active:
    ``phase="pointwise"`` (``y_n(0) = 0``) or ``phase="integral"`` (orthogonality
    to the derivative of ``reference``).  The number of active scalar
    constraints must be one less than the number of free parameters; the
    last degree of freedom is closed by the caller (pseudo-arclength or a
    fixed parameter).
    """

    free: tuple = ("T", "p1", "p2")
    phase: str = "pointwise"
    rotation_lock: bool = True
    pin_xn0: bool = False
    fix_E: bool = False
    fix_A: bool = False
    fix_ratio: bool = False
    energy_mode: str = "initial"
    unfolding: str = "literal"
    reference: object = None

    def active(self):
        names = ["phase"]
        for flag in ("rotation_lock", "pin_xn0", "fix_E", "fix_A", "fix_ratio"):
            if getattr(self, flag):
                names.append(flag)
        return names

    def validate(self):
        if self.phase not in ("pointwise", "integral"):
            raise ConfigError(f"unknown phase condition {self.phase!r}")
        if self.phase == "integral" and self.reference is None:
            raise ConfigError("integral phase condition needs a reference orbit")
        if self.energy_mode not in ("initial", "average"):
            raise ConfigError(f"unknown energy mode {self.energy_mode!r}")
        bad = [f for f in self.free if f not in PARAM_NAMES]
        if bad:
            raise ConfigError(f"unknown free parameters {bad}")
        if len(set(self.free)) != len(self.free):
            raise ConfigError("duplicate free parameters")
        if "p1" not in self.free or "p2" not in self.free:
            raise ConfigError("p1 and p2 must always be free")
        nc = len(self.active())
        if nc != len(self.free) - 1:
            raise ConfigError(
                f"constraint balance violated: {nc} scalar constraints "
                f"({', '.join(self.active())}) need {nc + 1} free parameters, "
                f"got {len(self.free)} ({', '.join(self.free)})")
        return self

    def replace(self, **kw):
        return replace(self, **kw)


# closing equations -------------------------------------------------------

@dataclass
class FixParam:
    name: str
    value: float


@dataclass
class FixRatio:
    value: float


@dataclass
class Arclength:
    X0: np.ndarray
    tangent: np.ndarray
    ds: float


def _energy_density(u, omega):
    """Summed per-site energy expression used by the fix_E constraint."""
    up = np.roll(u, -1, axis=-1)
    mod2 = np.abs(u) ** 2
    return np.sum(np.abs(u - up) ** 2 - mod2 ** 2 - omega * mod2, axis=-1)


def _energy_density_grad(u, omega):
    up = np.roll(u, -1, axis=-1)
    um = np.roll(u, 1, axis=-1)
    mod2 = np.abs(u) ** 2
    return 2.0 * (2.0 * u - up - um) - 4.0 * mod2 * u - 2.0 * omega * u


def energy_functional(orbit, mode="initial"):
    """Value of the fix_E expression for `orbit` (without the target)."""
    if mode == "initial":
        return float(_energy_density(to_complex(orbit.values[0]), orbit.params.omega))
    qw = quadrature_weights(orbit.mesh, orbit.degree)
    return float(qw @ _energy_density(to_complex(orbit.values), orbit.params.omega))


# --------------------------------------------------------------------------
# Discrete system
# --------------------------------------------------------------------------

class CollocationSystem:
    """Residual and sparse Jacobian of the discretised boundary value problem.

    Unknowns are ``X = [node values (flattened), free parameters]``.
    """

    def __init__(self, template, cs, closure=None):
        cs.validate()
        self.template = template
        self.cs = cs
        self.closure = closure
        self.n = template.n
        self.nc = 2 * self.n
        self.m = template.degree
        self.N = template.N
        self.mesh = template.mesh
        self.h = np.diff(self.mesh)
        self.nnodes = self.N * self.m + 1
        self.nU = self.nnodes * self.nc
        self.free = tuple(cs.free)
        self.size = self.nU + len(self.free)
        self.qw = quadrature_weights(self.mesh, self.m)
        _, self.g, self.w, self.L, self.D = collocation_tables(self.m)
        self.block_idx = (np.arange(self.N)[:, None] * self.m
                          + np.arange(self.m + 1)[None, :])
        self._ref_deriv = None
        if cs.phase == "integral":
            tg = (self.mesh[:-1, None] + self.h[:, None] * self.g[None, :]).ravel()
            self._ref_deriv = evaluate_derivative(cs.reference, tg).reshape(
                self.N, self.m, self.nc)
        if closure is not None and isinstance(closure, FixParam) and closure.name not in self.free:
            raise ConfigError(f"closure parameter {closure.name!r} is not free")
        self._build_pattern()

    # packing -------------------------------------------------------------
    def pack(self, orbit):
        pars = [orbit.get(name) for name in self.free]
        return np.concatenate([orbit.values.ravel(), pars])

    def unpack(self, X):
        vals = X[:self.nU].reshape(self.nnodes, self.nc)
        out = self.template.with_values(**dict(zip(self.free, X[self.nU:])))
        out.values = vals.copy()
        return out

    def _par(self, X, name):
        if name in self.free:
            return X[self.nU + self.free.index(name)]
        return self.template.get(name)

    def _omega(self, X):
        if "a" in self.free:
            p = self.template.params
            return omega_of_a(p.n, self._par(X, "a"), p.alpha)
        return self.template.params.omega

    def n_rows(self):
        n_extra = len(self.cs.active()) + (self.closure is not None)
        return self.N * self.m * self.nc + self.nc + n_extra

    # sparsity pattern -----------------------------------------------------
    def _build_pattern(self):
        N, m, n, nc = self.N, self.m, self.n, self.nc
        i = np.arange(N)[:, None, None, None]
        l = np.arange(m)[None, :, None, None]
        j = np.arange(m + 1)[None, None, :, None]
        c = np.arange(nc)[None, None, None, :]
        shape = (N, m, m + 1, nc)
        self.d_rows = np.broadcast_to((i * m + l) * nc + c, shape).ravel()
        self.d_cols = np.broadcast_to((i * m + j) * nc + c, shape).ravel()

        i = i[..., None, None, None]
        l = l[..., None, None, None]
        j = j[..., None, None, None]
        k = np.arange(n)[None, None, None, :, None, None, None]
        b = np.arange(3)[None, None, None, None, :, None, None]
        al = np.arange(2)[None, None, None, None, None, :, None]
        be = np.arange(2)[None, None, None, None, None, None, :]
        shift = np.array([0, 1, -1])[b]
        kk = np.mod(k + shift, n)
        shape = (N, m, m + 1, n, 3, 2, 2)
        self.c_rows = np.broadcast_to((i * m + l) * nc + 2 * k + al, shape).ravel()
        self.c_cols = np.broadcast_to((i * m + j) * nc + 2 * kk + be, shape).ravel()

    # residual ------------------------------------------------------------
    def _gauss_values(self, U):
        Ub = U[self.block_idx]  # (N, m+1, nc)
        Ug = np.einsum("lj,ijc->ilc", self.L, Ub)
        dUg = np.einsum("lj,ijc->ilc", self.D, Ub) / self.h[:, None, None]
        return Ub, Ug, dUg

    def residual(self, X):
        cs = self.cs
        U = X[:self.nU].reshape(self.nnodes, self.nc)
        T = self._par(X, "T")
        p1 = self._par(X, "p1")
        p2 = self._par(X, "p2")
        omega = self._omega(X)
        _, Ug, dUg = self._gauss_values(U)
        ug = to_complex(Ug)
        F = -1j * T * (np.roll(ug, 1, -1) + np.roll(ug, -1, -1) - 2 * ug
                       + np.abs(ug) ** 2 * ug + omega * ug)
        g1, g2 = unfolding_directions(ug, omega, cs.unfolding)
        F = F + p1 * g1 + p2 * g2
        parts = [(dUg - to_flat(F)).ravel(), U[-1] - U[0]]
        parts.append(self._scalar_residuals(X, U, Ug, omega, T))
        return np.concatenate(parts)

    def _scalar_residuals(self, X, U, Ug, omega, T):
        cs = self.cs
        n = self.n
        ix, iy = 2 * n - 2, 2 * n - 1
        out = []
        if cs.phase == "pointwise":
            out.append(U[0, iy])
        else:
            integrand = (Ug[..., ix] * self._ref_deriv[..., ix]
                         + Ug[..., iy] * self._ref_deriv[..., iy])
            out.append(np.sum(self.h[:, None] * self.w[None, :] * integrand))
        if cs.rotation_lock:
            out.append(self.qw @ U[:, iy])
        if cs.pin_xn0:
            out.append(U[0, ix] - self._par(X, "xn0"))
        if cs.fix_E:
            if cs.energy_mode == "initial":
                e = _energy_density(to_complex(U[0]), omega)
            else:
                e = self.qw @ _energy_density(to_complex(U), omega)
            out.append(e - self._par(X, "E"))
        if cs.fix_A:
            out.append(np.sum(U[0] ** 2) - self._par(X, "A"))
        if cs.fix_ratio:
            out.append(T * omega / (2 * np.pi) - self._par(X, "r"))
        cl = self.closure
        if cl is not None:
            if isinstance(cl, FixParam):
                out.append(self._par(X, cl.name) - cl.value)
            elif isinstance(cl, FixRatio):
                out.append(T * omega / (2 * np.pi) - cl.value)
            elif isinstance(cl, Arclength):
                W = self.arclength_weights()
                out.append(np.dot(W * (X - cl.X0), cl.tangent) - cl.ds)
            else:
                raise TypeError(f"unknown closure {cl!r}")
        return np.array(out, dtype=float)

    def arclength_weights(self):
        W = np.empty(self.size)
        W[:self.nU] = np.repeat(self.qw, self.nc)
        W[self.nU:] = 1.0
        return W

    # jacobian ------------------------------------------------------------
    def jacobian(self, X):
        cs = self.cs
        n, nc, m, N = self.n, self.nc, self.m, self.N
        U = X[:self.nU].reshape(self.nnodes, nc)
        T = self._par(X, "T")
        p1 = self._par(X, "p1")
        p2 = self._par(X, "p2")
        omega = self._omega(X)
        _, Ug, _ = self._gauss_values(U)
        ug = to_complex(Ug)

        d_vals = np.broadcast_to(
            self.D[None, :, :, None] / self.h[:, None, None, None], (N, m, m + 1, nc)).ravel()
        blocks = np.stack(rhs_blocks(ug, T, omega, p1, p2, cs.unfolding), axis=3)
        c_vals = -(self.L[None, :, :, None, None, None, None]
                   * blocks[:, :, None, :, :, :, :]).ravel()

        rows = [self.d_rows, self.c_rows]
        cols = [self.d_cols, self.c_cols]
        vals = [d_vals, c_vals]

        n_col = N * m * nc
        col_rows = np.arange(n_col)
        per = n_col
        # periodicity
        rows += [per + np.arange(nc), per + np.arange(nc)]
        cols += [(self.nnodes - 1) * nc + np.arange(nc), np.arange(nc)]
        vals += [np.ones(nc), -np.ones(nc)]

        # parameter columns of the collocation equations
        pcol = {name: self.nU + q for q, name in enumerate(self.free)}
        g1, g2 = unfolding_directions(ug, omega, cs.unfolding)
        dF = {
            "T": -to_flat(-1j * (np.roll(ug, 1, -1) + np.roll(ug, -1, -1) - 2 * ug
                                 + np.abs(ug) ** 2 * ug + omega * ug)),
            "p1": -to_flat(g1),
            "p2": -to_flat(g2),
        }
        if "a" in self.free:
            a = self._par(X, "a")
            dF["a"] = -to_flat(2j * a * T * ug)
            if cs.unfolding == "gradient":
                dF["a"] = dF["a"] - p1 * to_flat(-2.0 * a * ug)
        for name, col in dF.items():
            if name in pcol:
                rows.append(col_rows)
                cols.append(np.full(n_col, pcol[name]))
                vals.append(col.ravel())

        # scalar constraint rows
        r0 = per + nc
        ix, iy = 2 * n - 2, 2 * n - 1
        srow = r0

        def add(rr, cc, vv):
            rows.append(np.atleast_1d(rr))
            cols.append(np.atleast_1d(cc))
            vals.append(np.atleast_1d(np.asarray(vv, dtype=float)))

        node_ids = np.arange(self.nnodes)
        if cs.phase == "pointwise":
            add(srow, iy, 1.0)
        else:
            coef_x = self.h[:, None] * self.w[None, :] * self._ref_deriv[..., ix]
            coef_y = self.h[:, None] * self.w[None, :] * self._ref_deriv[..., iy]
            wx = np.zeros(self.nnodes)
            wy = np.zeros(self.nnodes)
            np.add.at(wx, self.block_idx, np.einsum("il,lj->ij", coef_x, self.L))
            np.add.at(wy, self.block_idx, np.einsum("il,lj->ij", coef_y, self.L))
            add(np.full(self.nnodes, srow), node_ids * nc + ix, wx)
            add(np.full(self.nnodes, srow), node_ids * nc + iy, wy)
        srow += 1
        if cs.rotation_lock:
            add(np.full(self.nnodes, srow), node_ids * nc + iy, self.qw)
            srow += 1
        if cs.pin_xn0:
            add(srow, ix, 1.0)
            if "xn0" in pcol:
                add(srow, pcol["xn0"], -1.0)
            srow += 1
        if cs.fix_E:
            if cs.energy_mode == "initial":
                G = to_flat(_energy_density_grad(to_complex(U[0]), omega))
                add(np.full(nc, srow), np.arange(nc), G)
                if "a" in pcol:
                    add(srow, pcol["a"], 2.0 * self._par(X, "a") * np.sum(U[0] ** 2))
            else:
                G = to_flat(_energy_density_grad(to_complex(U), omega)) * self.qw[:, None]
                add(np.full(self.nU, srow), np.arange(self.nU), G.ravel())
                if "a" in pcol:
                    add(srow, pcol["a"],
                        2.0 * self._par(X, "a") * (self.qw @ np.sum(U ** 2, axis=1)))
            if "E" in pcol:
                add(srow, pcol["E"], -1.0)
            srow += 1
        if cs.fix_A:
            add(np.full(nc, srow), np.arange(nc), 2.0 * U[0])
            if "A" in pcol:
                add(srow, pcol["A"], -1.0)
            srow += 1

        def ratio_row(row):
            if "T" in pcol:
                add(row, pcol["T"], omega / (2 * np.pi))
            if "a" in pcol:
                add(row, pcol["a"], -2.0 * self._par(X, "a") * T / (2 * np.pi))

        if cs.fix_ratio:
            ratio_row(srow)
            if "r" in pcol:
                add(srow, pcol["r"], -1.0)
            srow += 1
        cl = self.closure
        if cl is not None:
            if isinstance(cl, FixParam):
                add(srow, pcol[cl.name], 1.0)
            elif isinstance(cl, FixRatio):
                ratio_row(srow)
            elif isinstance(cl, Arclength):
                W = self.arclength_weights() * cl.tangent
                nz = np.nonzero(W)[0]
                add(np.full(len(nz), srow), nz, W[nz])
            srow += 1

        J = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(srow, self.size))
        return J.tocsc()


def assemble_residual(orbit, cs, closure=None):
    """Stacked residual: collocation, periodicity, then active scalar constraints."""
    system = CollocationSystem(orbit, cs, closure)
    return system.residual(system.pack(orbit))


def _factorize(J):
    try:
        return spla.splu(J)
    except RuntimeError as exc:
        raise SingularJacobian(str(exc)) from exc


def newton_solve(orbit, cs, tol=1e-10, max_iter=10, closure=None):
    """Solve the boundary value problem starting from `orbit`.

    The free parameters of `cs` exceed the active constraints by one; the
    closing equation is `closure` (a :class:`FixParam`, :class:`FixRatio` or
    :class:`Arclength`).  When omitted, the first free parameter is held at
    its current value.

    Returns the converged orbit with attributes ``newton_iterations`` and
    ``residual_norm`` set.  Raises :class:`NoConvergence` or
    :class:`SingularJacobian`.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if closure is None:
        closure = FixParam(cs.free[0], orbit.get(cs.free[0]))
    system = CollocationSystem(orbit, cs, closure)
    X = system.pack(orbit)
    R = system.residual(X)
    rnorm = np.max(np.abs(R))
    it = 0
    while rnorm > tol:
        if it >= max_iter:
            raise NoConvergence(it, rnorm)
        J = system.jacobian(X)
        dx = _factorize(J).solve(-R)
        if not np.all(np.isfinite(dx)):
            raise SingularJacobian("non-finite Newton update")
        it += 1
        X_new = X + dx
        R_new = system.residual(X_new)
        r_new = np.max(np.abs(R_new))
        if not np.isfinite(r_new) or r_new > rnorm:
            X_half = X + 0.5 * dx
            R_half = system.residual(X_half)
            r_half = np.max(np.abs(R_half))
            if np.isfinite(r_half) and r_half < r_new:
                X_new, R_new, r_new = X_half, R_half, r_half
        if not np.isfinite(r_new):
            raise NoConvergence(it, r_new)
        X, R, rnorm = X_new, R_new, r_new
    out = system.unpack(X)
    out.newton_iterations = it
    out.residual_norm = rnorm
    return out


def tangent_vector(orbit, cs, guess=None):
    """Unit tangent (arclength metric) of the solution curve through `orbit`.

    The sign is chosen to have a positive projection on `guess` (a vector in
    the unknown space); by default the first free parameter increases.
    """
    system = CollocationSystem(orbit, cs, None)
    X = system.pack(orbit)
    J = system.jacobian(X)
    W = system.arclength_weights()
    if guess is None:
        guess = np.zeros(system.size)
        guess[system.nU] = 1.0
    # bordered system [J; (W*guess)^T] tau = [0; 1]
    row = sp.csr_matrix((W * guess)[None, :])
    A = sp.vstack([J, row]).tocsc()
    rhs = np.zeros(A.shape[0])
    rhs[-1] = 1.0
    tau = _factorize(A).solve(rhs)
    tau /= np.sqrt(np.dot(W * tau, tau))
    if np.dot(W * tau, guess) < 0:
        tau = -tau
    return tau


# --------------------------------------------------------------------------
# Mesh adaptation
# --------------------------------------------------------------------------

def _highest_derivative(orbit):
    """The m-th derivative of the local polynomial on each interval, (N, 2n)."""
    m = orbit.degree
    nodes = np.linspace(0.0, 1.0, m + 1)
    C = _vandermonde_basis(nodes)  # monomial coefficients
    Ub = orbit.values[np.arange(orbit.N)[:, None] * m + np.arange(m + 1)[None, :]]
    lead = np.einsum("j,ijc->ic", C[m], Ub)  # coefficient of s^m
    fact = float(np.prod(np.arange(1, m + 1)))
    h = np.diff(orbit.mesh)
    return lead * fact / h[:, None] ** m


def error_indicator(orbit):
    """Per-interval estimate of ``|u^{(m+1)}|`` (max over components)."""
    dm = _highest_derivative(orbit)
    h = np.diff(orbit.mesh)
    nxt = np.roll(dm, -1, axis=0)
    prv = np.roll(dm, 1, axis=0)
    hn = np.roll(h, -1)
    hp = np.roll(h, 1)
    d1 = np.abs(nxt - dm) / (0.5 * (h + hn))[:, None]
    d2 = np.abs(dm - prv) / (0.5 * (h + hp))[:, None]
    return np.max(0.5 * (d1 + d2), axis=1)


def discretization_error_estimate(orbit):
    """Rough bound of the interpolation error, ``max_i h_i^{m+1} |u^{(m+1)}|_i / (m+1)!``."""
    m = orbit.degree
    h = np.diff(orbit.mesh)
    fact = float(np.prod(np.arange(1, m + 2)))
    return float(np.max(h ** (m + 1) * error_indicator(orbit)) / fact)


def adapt_mesh(orbit):
    """Re-represent `orbit` on a mesh equidistributing the error indicator.

    The number of intervals is unchanged.  The returned orbit is an
    interpolant of the input and should be re-solved with :func:`newton_solve`.
    """
    m = orbit.degree
    h = np.diff(orbit.mesh)
    ind = error_indicator(orbit) ** (1.0 / (m + 1))
    floor = 1e-3 * max(np.max(ind), 1e-300)
    rho = np.maximum(ind, floor) if np.max(ind) > 0 else np.ones_like(ind)
    # blend with uniform density so intervals never collapse
    rho = rho + 0.1 * np.mean(rho)
    cum = np.concatenate([[0.0], np.cumsum(rho * h)])
    cum /= cum[-1]
    targets = np.linspace(0.0, 1.0, orbit.N + 1)
    new_mesh = np.interp(targets, cum, orbit.mesh)
    new_mesh[0], new_mesh[-1] = 0.0, 1.0
    s = np.linspace(0.0, 1.0, m + 1)
    hn = np.diff(new_mesh)
    t = np.append((new_mesh[:-1, None] + hn[:, None] * s[None, :-1]).ravel(), 1.0)
    vals = _eval(orbit, t, 0)
    vals[-1] = orbit.values[-1]
    out = replace(orbit, mesh=new_mesh, values=vals, aux=dict(orbit.aux))
    return out


def remesh(orbit, mesh):
    """Interpolate `orbit` onto a new mesh (same degree)."""
    m = orbit.degree
    mesh = np.asarray(mesh, dtype=float)
    s = np.linspace(0.0, 1.0, m + 1)
    h = np.diff(mesh)
    t = np.append((mesh[:-1, None] + h[:, None] * s[None, :-1]).ravel(), 1.0)
    vals = _eval(orbit, t, 0)
    return replace(orbit, mesh=mesh, values=vals, aux=dict(orbit.aux))


def vector_field_at(orbit, t):
    """``T * vector_field`` along the orbit at scaled times `t` (complex)."""
    u = evaluate(orbit, t)
    return orbit.T * vector_field(u, orbit.params)
