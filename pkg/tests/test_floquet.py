import numpy as np
import pytest
from scipy.linalg import expm

from dnls_choreo.collocation import (ConstraintSet, evaluate, newton_solve, orbit_from_function)
from dnls_choreo.continuation import ContinuationSettings, StopAt, continue_branch
from dnls_choreo.floquet import (ALMOST_STABLE, STABLE, UNSTABLE, floquet, integrate_verify,
                                 monodromy, multipliers, one_period_error, orbital_distance,
                                 pairing_error, unstable_direction)
from dnls_choreo.lattice import LatticeParams, polygonal_equilibrium, to_flat, vector_field
from dnls_choreo.spectral import lyapunov_starter, stability_matrix

PIN = ConstraintSet(free=("xn0", "T", "p1", "p2"), pin_xn0=True)


@pytest.fixture(scope="module")
def orbit5():
    p = LatticeParams(5, 0.3)
    o = newton_solve(lyapunov_starter(p, 1, N=40), PIN, 1e-11, 20)
    st = ContinuationSettings(ds0=0.01, max_steps=60, direction=-1, direction_param="xn0")
    return continue_branch(o, PIN, st, [StopAt("xn0", 0.2)]).points[-1].orbit


def rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def block_diag(*blocks):
    n = sum(b.shape[0] for b in blocks)
    M = np.zeros((n, n))
    i = 0
    for b in blocks:
        k = b.shape[0]
        M[i:i + k, i:i + k] = b
        i += k
    return M


def test_synthetic_classification():
    jordan = np.array([[1.0, 0.3], [0.0, 1.0]])
    M = block_diag(jordan, jordan, rot(0.7), rot(2.1))
    fs = multipliers(M)
    assert fs.classification == STABLE and fs.n_trivial == 4 and fs.n_unstable == 0
    assert fs.flag == "S" and fs.is_stable
    M = block_diag(jordan, jordan, np.diag([1.005, 1 / 1.005]))
    fs = multipliers(M)
    assert fs.classification == ALMOST_STABLE and fs.n_unstable == 0 and fs.is_stable
    M = block_diag(jordan, jordan, np.diag([3.0, 1 / 3.0]), rot(1.0))
    fs = multipliers(M)
    assert fs.classification == UNSTABLE and fs.n_unstable == 1 and fs.flag == "U"
    assert fs.max_deviation == pytest.approx(2.0)
    # more than four multipliers near one: only four are set aside
    fs = multipliers(block_diag(jordan, jordan, rot(1e-6)))
    assert fs.n_trivial == 4
    assert len(fs.to_csv().splitlines()) == 7
    with pytest.raises(ValueError):
        multipliers(np.eye(3))


def test_pairing_error():
    assert pairing_error([2.0, 0.5, 1j, -1j]) == pytest.approx(0.0, abs=1e-15)
    assert pairing_error([2.0, 0.4]) == pytest.approx(0.2)


def test_equilibrium_monodromy_matches_expm():
    n, a, T = 4, 0.35, 2.7
    p = LatticeParams(n, a)
    u0 = polygonal_equilibrium(n, a)
    o = orbit_from_function(p, lambda t: u0, T, N=30, degree=4)
    ref = expm(T * stability_matrix(u0, p))
    assert np.max(np.abs(monodromy(o, "collocation") - ref)) < 1e-9
    assert np.max(np.abs(monodromy(o, "variational") - ref)) < 1e-9


def test_monodromy_properties(orbit5):
    M = monodromy(orbit5)
    assert abs(np.linalg.det(M) - 1.0) <= 1e-6
    fs = floquet(orbit5)
    assert pairing_error(fs.multipliers) <= 1e-6
    assert fs.n_trivial == 4
    Mv = monodromy(orbit5, "variational")
    assert np.max(np.abs(np.sort_complex(np.linalg.eigvals(M))
                         - np.sort_complex(np.linalg.eigvals(Mv)))) < 1e-6
    # the flow direction is a fixed vector of the monodromy
    f0 = to_flat(vector_field(evaluate(orbit5, 0.0), orbit5.params))
    assert np.linalg.norm(M @ f0 - f0) < 1e-6 * np.linalg.norm(f0)
    with pytest.raises(ValueError):
        monodromy(orbit5, "other")


def test_orbital_distance_invariance(orbit5):
    u = evaluate(orbit5, np.array([0.13, 0.58, 0.91]))
    shifted = to_flat(np.exp(0.8j) * u)
    assert np.max(orbital_distance(orbit5, shifted)) < 1e-10
    off = to_flat(np.exp(0.8j) * u + 1e-3)
    d = orbital_distance(orbit5, off)
    assert np.all(d > 1e-4) and np.all(d < 3e-3)


def test_integrate_verify(orbit5):
    rep = integrate_verify(orbit5, 20, 1e-10)
    assert rep.dE <= 1e-6 and rep.dA <= 1e-6
    disc = one_period_error(orbit5)
    assert disc < 1e-7
    assert rep.max_distance <= 100 * disc
    assert len(rep.times) == 20 * 40 + 1
    with pytest.raises(ValueError):
        integrate_verify(orbit5, 0)


def test_unstable_direction():
    M = np.diag([3.0, 1 / 3.0, 1.0, 1.0])
    v, lam = unstable_direction(M)
    assert lam == pytest.approx(3.0)
    assert np.allclose(np.abs(v), [1, 0, 0, 0])
