from math import gcd

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from dnls_choreo.choreography import (FULL, NON_RESONANT, PARTIAL, NonrotatingTrace,
                                      build_nonrotating, choreography_residual, classify_orbit,
                                      classify_report, count_curves, detect_wave_index, hausdorff,
                                      match_resonance, modular_inverse, partial_label,
                                      resonance_admissible, rotation_symmetry_error,
                                      winding_number)
from dnls_choreo.collocation import evaluate, orbit_from_function
from dnls_choreo.errors import CenterOnCurve, NotCoprime, RatioMismatch
from dnls_choreo.lattice import LatticeParams, polygonal_equilibrium


def test_modular_inverse_examples():
    assert modular_inverse(1, 10) == 1
    assert modular_inverse(5, 8) == 5
    assert modular_inverse(23, 1) == 0
    assert modular_inverse(-8, 9) == 1
    with pytest.raises(NotCoprime):
        modular_inverse(4, 10)
    with pytest.raises(NotCoprime):
        modular_inverse(3, 0)


@given(st.integers(-200, 200), st.integers(1, 60))
def test_modular_inverse_brute_force(ell, m):
    assume(gcd(abs(ell), m) == 1)
    inv = modular_inverse(ell, m)
    if m == 1:
        assert inv == 0
    else:
        assert 0 <= inv < m and (ell * inv) % m == 1
        assert inv == next(x for x in range(m) if (ell * x) % m == 1)


def test_resonance_admissible_examples():
    lab = resonance_admissible(9, 1, 1, 1, 10)
    assert (lab.r, lab.ell_star, lab.k_tilde) == (-1, 1, 10)
    lab = resonance_admissible(9, 2, 1, 23, 1)
    assert (lab.r, lab.ell_star, lab.k_tilde) == (5, 0, 2)
    assert resonance_admissible(9, 1, 1, 23, 1) is None
    with pytest.raises(NotCoprime):
        resonance_admissible(9, 1, 1, 2, 10)


@given(st.integers(3, 31), st.integers(1, 30), st.integers(1, 31), st.integers(-60, 60),
       st.integers(1, 40))
@settings(max_examples=200)
def test_label_invariants(n, k, alpha, ell, m):
    assume(k < n and alpha <= n and gcd(abs(ell), m) == 1)
    lab = resonance_admissible(n, k, alpha, ell, m)
    s = k * ell - alpha * m
    if s % n:
        assert lab is None
        assert classify_orbit(n, k, alpha, ell, m).kind == PARTIAL
        return
    assert n * lab.r == s == lab.s
    assert m == 1 or (ell * lab.ell_star) % m == 1
    assert lab.k_tilde == k - s * lab.ell_star
    assert classify_orbit(n, k, alpha, ell, m).kind == FULL


def test_classify_orbit_examples():
    assert classify_orbit(9, 1, 1, 1, 10).kind == FULL
    c = classify_orbit(9, 4, 1, 2, 5)
    assert (c.kind, c.curves) == (PARTIAL, 3)
    assert classify_orbit(9, 1, 1, 1, 1).kind == FULL  # s = 0
    assert classify_orbit(9, 1, 1, 1, 2).to_dict() == {"type": PARTIAL, "curves": 9}
    with pytest.raises(NotCoprime):
        classify_orbit(9, 1, 1, 3, 6)


def test_partial_label():
    lab = partial_label(9, 1, 1, 2, 5)
    assert lab.s == -3 and lab.ell_star == 3 and lab.k_tilde == 10


def test_match_resonance():
    assert match_resonance(0.1) == (1, 10)
    assert match_resonance(-8 / 9) == (-8, 9)
    assert match_resonance(0.1 + 1e-6) is None
    assert match_resonance(np.pi / 10, max_den=32) is None


# --------------------------------------------------------------------------
# traces
# --------------------------------------------------------------------------

def equilibrium_orbit(n=9, a=0.3, ell=1, m=10):
    p = LatticeParams(n, a)
    u0 = polygonal_equilibrium(n, a)
    return orbit_from_function(p, lambda t: u0, p.T0 * ell / m, N=10, degree=4)


def test_equilibrium_trace():
    o = equilibrium_orbit()
    lab = resonance_admissible(9, 1, 1, 1, 10)
    tr = build_nonrotating(o, lab, 900)
    assert tr.samples.shape == (900, 9)
    assert tr.per_period % 9 == 0
    assert tr.period == pytest.approx(10 * o.T)
    assert tr.closure_error() <= 1e-12
    assert choreography_residual(tr) <= 1e-12
    assert np.allclose(np.abs(tr.samples), 0.3)
    # k_tilde modulo n permutes the same curves but is not a pointwise identity,
    # since q is periodic only over m orbit periods
    assert choreography_residual(tr, k_tilde=lab.k_tilde % 9) > 0.1
    assert winding_number(tr, 0.0) == 1
    assert rotation_symmetry_error(tr) < 1e-3 * 0.3
    assert count_curves(tr, 1e-4 * 0.3) == 1
    with pytest.raises(RatioMismatch):
        build_nonrotating(o, resonance_admissible(9, 2, 1, 23, 1))


def test_degenerate_zero_frequency():
    # omega = 0 when a^2 = 4 sin^2(zeta/2): q coincides with u
    n = 6
    a = 2 * np.sin(np.pi / n)
    p = LatticeParams(n, a)
    assert p.omega == pytest.approx(0.0, abs=1e-15)
    u0 = polygonal_equilibrium(n, a)
    o = orbit_from_function(p, lambda t: u0 * (1 + 0.1 * np.sin(2 * np.pi * t)), 1.0, N=8)
    lab = partial_label(n, 1, 1, 0, 1)
    tr = build_nonrotating(o, lab, 64)
    assert np.allclose(tr.samples, evaluate(o, np.arange(len(tr.phase)) / len(tr.phase)),
                       atol=1e-14)


def circle_trace(samples, turns=1, center=0.0):
    t = np.arange(samples) / samples
    z = center + np.exp(2j * np.pi * turns * t)
    lab = resonance_admissible(3, 1, 1, 1, 1) or partial_label(3, 1, 1, 1, 1)
    return NonrotatingTrace(z[:, None], 2 * np.pi * t, 1.0, lab)


def test_winding_number():
    assert winding_number(circle_trace(400), 0.0) == 1
    assert winding_number(circle_trace(400)) == 1
    assert winding_number(circle_trace(400, turns=-3)) == -3
    assert winding_number(circle_trace(400, center=2.0), 5.0) == 0
    with pytest.raises(CenterOnCurve):
        winding_number(circle_trace(400), 1.0)


def test_hausdorff():
    t = np.linspace(0, 2 * np.pi, 500, endpoint=False)
    c = np.exp(1j * t)
    assert hausdorff(c, c) == 0.0
    assert hausdorff(c, 1.1 * c) == pytest.approx(0.1, rel=1e-3)
    # distance is to the polyline, so coarse sampling of the same circle stays close
    assert hausdorff(c, c[::5]) < 1e-3


def test_small_lattice_full_choreography(n5_full):
    o = n5_full
    a = o.params.a
    rep = classify_report(o, 1, 14, 19)
    assert rep["type"] == FULL and rep["curves"] == 1
    assert rep["residual"] <= 1e-6 * a
    assert rep["symmetry_error"] <= 1e-4 * a
    assert rep["geometric_curves"] == 1
    assert rep["winding"] == 14
    assert detect_wave_index(o)[0] == 1
    lab = resonance_admissible(5, 1, 1, 14, 19)
    tr = build_nonrotating(o, lab)
    assert tr.closure_error() <= 1e-8 * np.max(np.abs(tr.samples))


def test_small_lattice_partial(n5_partial):
    o = n5_partial
    rep = classify_report(o, 1, 3, 4)
    assert rep["type"] == PARTIAL and rep["curves"] == 5
    assert rep["geometric_curves"] == 5
    tr = build_nonrotating(o, partial_label(5, 1, 1, 3, 4))
    # the full identity fails for a partial choreography
    assert choreography_residual(tr) > 1e-3 * o.params.a


def test_classify_report_nonresonant(n5_main_branch):
    o = next(pt.orbit for pt in n5_main_branch.points if match_resonance(pt.orbit.ratio) is None)
    rep = classify_report(o, 1)
    assert rep["type"] == NON_RESONANT and rep["curves"] is None
