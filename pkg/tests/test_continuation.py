from fractions import Fraction
from math import gcd

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dnls_choreo.collocation import ConstraintSet, newton_solve
from dnls_choreo.continuation import (CSV_COLUMNS, Branch, BranchPoint, ContinuationSettings,
                                      StopAt, continue_branch, detect_resonances, farey_sequence,
                                      lock_ratio_continue, locate_resonance, rationals_between)
from dnls_choreo.errors import NoBracket, NotCoprime, StallError
from dnls_choreo.lattice import LatticeParams
from dnls_choreo.spectral import lyapunov_starter

PIN = ConstraintSet(free=("xn0", "T", "p1", "p2"), pin_xn0=True)
MAIN = ConstraintSet(free=("a", "T", "p1", "p2"), pin_xn0=True)


@pytest.fixture(scope="module")
def start():
    p = LatticeParams(5, 0.3)
    return newton_solve(lyapunov_starter(p, 1, N=30), PIN, 1e-10, 20)


@pytest.fixture(scope="module")
def pin_branch(start):
    st_ = ContinuationSettings(ds0=0.01, max_steps=50, direction=-1, direction_param="xn0")
    return continue_branch(start, PIN, st_, [StopAt("xn0", 0.25)])


@pytest.fixture(scope="module")
def main_branch(pin_branch):
    st_ = ContinuationSettings(ds0=0.01, max_steps=40, direction=1, direction_param="a")
    return continue_branch(pin_branch.points[-1].orbit, MAIN, st_, [StopAt("a", 0.5)])


def synthetic(ratios):
    pts = [BranchPoint(None, {"ratio": r}, float(i)) for i, r in enumerate(ratios)]
    return Branch(pts, MAIN)


# --------------------------------------------------------------------------
# rational enumeration
# --------------------------------------------------------------------------

@given(st.integers(1, 25))
@settings(max_examples=25, deadline=None)
def test_farey_against_brute_force(N):
    brute = sorted({Fraction(h, k) for k in range(1, N + 1) for h in range(0, k + 1)})
    got = farey_sequence(N)
    assert [Fraction(h, k) for h, k in got] == brute
    assert all(gcd(h, k) == 1 for h, k in got)


@given(st.floats(-3, 3), st.floats(0.0, 2.0), st.integers(1, 20), st.booleans())
@settings(max_examples=80, deadline=None)
def test_rationals_between_against_brute_force(lo, width, N, closed):
    hi = lo + width
    got = rationals_between(lo, hi, N, closed)
    brute = set()
    for m in range(1, N + 1):
        for ell in range(int(np.floor(lo * m)) - 1, int(np.ceil(hi * m)) + 2):
            if gcd(abs(ell), m) != 1:
                continue
            v = ell / m
            if lo < v < hi or (closed and (v == lo or v == hi)):
                brute.add((ell, m))
    assert set(got) == brute
    assert len(got) == len(brute)
    vals = [ell / m for ell, m in got]
    assert vals == sorted(vals)
    assert rationals_between(hi, lo, N, closed) == got


def test_detect_resonances_synthetic():
    b = synthetic([0.05, 0.12, 0.26, 0.24, 0.2])
    ev = detect_resonances(b, 5)
    expect = {(1, 5, 1), (1, 4, 1), (1, 4, 2), (1, 5, 3)}
    assert set(ev) == expect
    # a point landing exactly on a rational is reported once
    b = synthetic([0.1, 0.25, 0.3])
    assert [e for e in detect_resonances(b, 4) if e[:2] == (1, 4)] == [(1, 4, 0)]
    # negative ratios carry a signed ell
    b = synthetic([-0.9, -0.85])
    assert (-8, 9, 0) in detect_resonances(b, 9)


def test_resonance_density():
    """Crossings grow with the denominator bound on a monotone segment."""
    b = synthetic(np.linspace(0.1, 0.6, 40))
    w = 0.5
    counts = []
    for M in (4, 8, 16):
        n_hits = len(detect_resonances(b, M))
        assert n_hits >= int(w * M * M * 3 / np.pi ** 2) // 2
        counts.append(n_hits)
    assert counts == sorted(counts) and counts[0] < counts[-1]


def test_locate_errors():
    b = synthetic([0.1, 0.2])
    with pytest.raises(NotCoprime):
        locate_resonance(b, 2, 14)
    with pytest.raises(NotCoprime):
        locate_resonance(b, 1, 0)
    with pytest.raises(NoBracket):
        locate_resonance(b, 1, 2)


# --------------------------------------------------------------------------
# continuation on a small lattice
# --------------------------------------------------------------------------

def test_stop_at_is_exact(pin_branch):
    assert pin_branch.stop_reason == "xn0=0.25"
    assert pin_branch.points[-1].orbit.xn0 == pytest.approx(0.25, abs=1e-12)
    s = [pt.arclength for pt in pin_branch.points]
    assert s == sorted(s)


def test_points_converged_and_monitors_consistent(main_branch):
    assert main_branch.stop_reason == "a=0.5"
    for pt in main_branch.points:
        o = pt.orbit
        again = newton_solve(o, MAIN, 1e-10)
        assert again.newton_iterations == 0
        assert abs(o.p1) <= 1e-8 and abs(o.p2) <= 1e-8
        mon = o.monitors()
        for key in ("T0", "ratio", "E", "A"):
            assert pt.monitors[key] == pytest.approx(mon[key], abs=1e-10)
        assert o.xn0 == pytest.approx(0.25, abs=1e-10)


def test_reversibility(pin_branch):
    # return to an interior point; near the equilibrium xn0 is a poor coordinate
    mid = pin_branch.points[len(pin_branch.points) // 2].orbit
    end = pin_branch.points[-1].orbit
    st_ = ContinuationSettings(ds0=0.01, max_steps=50, direction=1, direction_param="xn0")
    back = continue_branch(end, PIN, st_, [StopAt("xn0", mid.xn0)])
    assert back.points[-1].orbit.T == pytest.approx(mid.T, rel=1e-9)
    assert np.max(np.abs(back.points[-1].orbit.values - mid.values)) < 1e-8


def test_csv_and_determinism(pin_branch, start):
    text = pin_branch.to_csv()
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == len(pin_branch.points) + 1
    assert all(len(line.split(",")) == len(CSV_COLUMNS) for line in lines)
    st_ = ContinuationSettings(ds0=0.01, max_steps=50, direction=-1, direction_param="xn0")
    again = continue_branch(start, PIN, st_, [StopAt("xn0", 0.25)])
    assert again.to_csv() == text


def test_locate_resonance(main_branch):
    events = detect_resonances(main_branch, 12)
    assert (3, 4) in [e[:2] for e in events]
    o = locate_resonance(main_branch, 3, 4)
    assert abs(o.ratio - 0.75) <= 1e-10
    assert abs(o.T / o.T0 - 0.75) <= 1e-10
    with pytest.raises(NoBracket):
        locate_resonance(main_branch, 1, 2)


def test_lock_ratio_continue(main_branch):
    o = locate_resonance(main_branch, 3, 4)
    st_ = ContinuationSettings(ds0=0.005, max_steps=8, direction=1)
    b = lock_ratio_continue(o, 3, 4, st_, base_cs=MAIN)
    assert b.points[0].orbit is not None
    assert b.points[0].monitors["a"] == o.params.a
    assert np.array_equal(b.points[0].orbit.values, o.values)
    r = b.monitor("ratio")
    assert np.max(np.abs(r - 0.75)) <= 1e-9
    a = b.monitor("a")
    assert np.all(np.diff(a) > 0)
    assert np.ptp(b.monitor("xn0")) > 0  # the pinned value is released
    with pytest.raises(ValueError):
        lock_ratio_continue(o, 2, 3, st_, base_cs=MAIN)
    with pytest.raises(ValueError):
        lock_ratio_continue(o, 3, 4, st_, cs=MAIN)


def test_stall_carries_partial_branch(start):
    st_ = ContinuationSettings(ds0=0.5, ds_min=0.2, max_iter=1, direction_param="xn0")
    with pytest.raises(StallError) as info:
        continue_branch(start, PIN, st_)
    assert len(info.value.branch.points) >= 1
    assert info.value.branch.stop_reason == "stall"


def test_callable_stop(start):
    st_ = ContinuationSettings(ds0=0.01, max_steps=20, direction_param="xn0")

    def three_points(prev, new):
        return new.arclength > 0.025

    b = continue_branch(start, PIN, st_, [three_points])
    assert b.stop_reason == "three_points"
    assert b.points[-1].arclength > 0.025 >= b.points[-2].arclength


def test_fold_stop():
    fake = [BranchPoint(None, {"a": v}, 0.0) for v in (0.50, 0.52, 0.51)]
    assert StopAt("a", 0.5205, fold_tol=1e-3).folded(*fake)
    assert not StopAt("a", 0.5205).folded(*fake)
    assert not StopAt("a", 0.6, fold_tol=1e-3).folded(*fake)
