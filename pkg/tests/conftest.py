"""Shared fixtures.

The small n = 5 branch is cheap and used by the unit tests.  The n = 9
fixtures run the full pipeline and several ratio-locked continuations; they
are computed once per session and shared by the acceptance tests.
"""
import time

import pytest

from dnls_choreo.collocation import ConstraintSet, newton_solve
from dnls_choreo.continuation import (ContinuationSettings, StopAt, continue_branch,
                                      locate_resonance)
from dnls_choreo.lattice import LatticeParams
from dnls_choreo.pipeline import analyse_orbit, load_preset, run, run_candidate, stage_lock
from dnls_choreo.spectral import lyapunov_starter

PIN = ConstraintSet(free=("xn0", "T", "p1", "p2"), pin_xn0=True)
MAIN = ConstraintSet(free=("a", "T", "p1", "p2"), pin_xn0=True)

# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


# --------------------------------------------------------------------------
# small lattice
# --------------------------------------------------------------------------

@pytest.fixture(scope="session")
def n5_main_branch():
    o = newton_solve(lyapunov_starter(LatticeParams(5, 0.3), 1, N=30), PIN, 1e-10, 20)
    st = ContinuationSettings(ds0=0.01, max_steps=50, direction=-1, direction_param="xn0")
    pinned = continue_branch(o, PIN, st, [StopAt("xn0", 0.25)]).points[-1].orbit
    st = ContinuationSettings(ds0=0.01, max_steps=40, direction=1, direction_param="a")
    return continue_branch(pinned, MAIN, st, [StopAt("a", 0.5)])


@pytest.fixture(scope="session")
def n5_full(n5_main_branch):
    """14:19 resonance of the k = 1 family at n = 5: a full choreography."""
    return locate_resonance(n5_main_branch, 14, 19)


@pytest.fixture(scope="session")
def n5_partial(n5_main_branch):
    """3:4 resonance of the k = 1 family at n = 5: five separate curves."""
    return locate_resonance(n5_main_branch, 3, 4)


# --------------------------------------------------------------------------
# n = 9 reproductions
# --------------------------------------------------------------------------

def _analysed(cfg, orbit, ell, m, k, tag):
    return {"orbit": orbit, "report": analyse_orbit(cfg, orbit, ell, m, k, None, tag)}


@pytest.fixture(scope="session")
def orbit1_run(tmp_path_factory):
    """Preset pipeline for the first table orbit, scanning the admissible modes."""
    cfg = load_preset("table1-orbit1")
    out = tmp_path_factory.mktemp("orbit1")
    t0 = time.perf_counter()
    summary = run(cfg, str(out))
    seconds = time.perf_counter() - t0
    rep = next(r for r in summary["reports"] if r.get("success"))
    return {"cfg": cfg, "summary": summary, "seconds": seconds, "report": rep, "out": out}


@pytest.fixture(scope="session")
def lower_family(orbit1_run):
    """Ratio-locked continuations on the branch that carries orbit 1.

    1:10 is locked down to orbits 7 and 9; 2:5 and 5:8 (partial
    choreographies) are located and locked to orbits 5 and 6.
    """
    cfg = orbit1_run["cfg"]
    rep = orbit1_run["report"]
    k = rep["k"]
    located = rep["located"]["1:10"]
    found = {"orbit1": {"orbit": located, "report": rep["results"][0]}}
    for tag, a in (("orbit7", 0.647930), ("orbit9", 0.627791)):
        lb = stage_lock(cfg, located, 1, 10, a)
        found[tag] = _analysed(cfg, lb.points[-1].orbit, 1, 10, k, tag)
        found[tag]["branch"] = lb
    branches = rep["branches"]
    for (ell, m), tag, a in (((2, 5), "orbit5", 0.520316), ((5, 8), "orbit6", 0.396319)):
        br = branches["up"]
        start = locate_resonance(br, ell, m, cfg.settings())
        found[f"{ell}:{m}"] = _analysed(cfg, start, ell, m, k, f"{ell}:{m}")
        lb = stage_lock(cfg, start, ell, m, a)
        found[tag] = _analysed(cfg, lb.points[-1].orbit, ell, m, k, tag)
        found[tag]["branch"] = lb
    return found


@pytest.fixture(scope="session")
def upper_family():
    """The faster k = 1 family: 2:11 located, then locked to orbits 10 and 12."""
    cfg = load_preset("table1-orbit10")
    cfg.a_max = 0.52
    cfg.lock_targets = [{"ratio": "2:11", "a": 0.510285, "tag": "orbit10"},
                        {"ratio": "2:11", "a": 0.565906, "tag": "orbit12"}]
    cfg.validate()
    rep = run_candidate(cfg, cfg.mode_k, cfg.which)
    by_tag = {tag: orbit for tag, _, orbit in rep["orbits"]}
    found = {}
    for res in rep["results"]:
        found[res["tag"]] = {"orbit": by_tag[res["tag"]], "report": res}
    return {"cfg": cfg, "report": rep, "orbits": found}
