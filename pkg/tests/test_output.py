import json
import re

import numpy as np
import pytest

from dnls_choreo import output
from dnls_choreo.choreography import build_nonrotating, resonance_admissible
from dnls_choreo.collocation import RotatingOrbit, orbit_from_function
from dnls_choreo.lattice import LatticeParams, polygonal_equilibrium


def test_dumps_roundtrips_floats():
    vals = [0.1, 1 / 3, -2.5e-300, 1e22, 7.0, np.float64(np.pi)]
    text = output.dumps({"x": vals, "n": np.int64(3), "ok": True, "none": None})
    back = json.loads(text)
    assert back["x"] == [float(v) for v in vals]
    assert back["n"] == 3 and back["ok"] is True and back["none"] is None
    assert output.dumps(float("nan")).strip() == "null"
    assert output.dumps([]) == "[]\n" and output.dumps({}) == "{}\n"
    with pytest.raises(TypeError):
        output.dumps(object())


def test_export_orbit_monitors_roundtrip(tmp_path, n5_full):
    path = tmp_path / "o.json"
    output.export_orbit(n5_full, path)
    back = RotatingOrbit.load(path)
    m0, m1 = n5_full.monitors(), back.monitors()
    for key, val in m0.items():
        assert m1[key] == pytest.approx(val, rel=1e-15, abs=0)
    # identical input gives identical bytes
    output.export_orbit(back, tmp_path / "o2.json")
    assert (tmp_path / "o2.json").read_bytes() == path.read_bytes()


def test_export_branch(tmp_path, n5_main_branch):
    path = tmp_path / "b.csv"
    output.export_branch(n5_main_branch, path)
    text = path.read_text()
    assert "\r" not in text
    assert len(text.splitlines()) == len(n5_main_branch.points) + 1


def test_write_error_has_path(tmp_path):
    bad = tmp_path / "missing" / "x.json"
    with pytest.raises(OSError, match="missing"):
        output.write_json(bad, {})


def _viewbox(svg):
    m = re.search(r'viewBox="([^"]+)"', svg)
    return [float(v) for v in m.group(1).split()]


def test_svg_viewbox_and_styles():
    t = np.linspace(0, 2 * np.pi, 200, endpoint=False)
    circle = 2.0 + 1j + np.exp(1j * t)
    svg = output.render_svg([circle], "sites")
    x, y, w, h = _viewbox(svg)
    # 5% of the span on each side; the imaginary axis is flipped
    assert (w, h) == pytest.approx((2.2, 2.2), rel=1e-3)
    assert x == pytest.approx(0.9, abs=1e-3) and y == pytest.approx(-2.1, abs=1e-3)
    assert svg.count("<polyline") == 1 and output.FORMAT_VERSION in svg
    grad = output.render_svg([circle], "gradient", gradient_segments=32)
    assert grad.count("<polyline") == 32
    assert len(set(re.findall(r'stroke="(#[0-9a-f]{6})"', grad))) > 10
    assert output.render_svg([circle], "sites") == svg
    with pytest.raises(ValueError):
        output.render_svg([circle], "other")
    with pytest.raises(ValueError):
        output.render_svg([])


def test_equilibrium_svg_is_one_ring():
    n, a = 9, 0.3
    p = LatticeParams(n, a)
    u0 = polygonal_equilibrium(n, a)
    o = orbit_from_function(p, lambda t: u0, p.T0 / 10, N=10)
    tr = build_nonrotating(o, resonance_admissible(n, 1, 1, 1, 10), 900)
    svg = output.render_svg([tr.samples[:, j] for j in range(n)], "sites")
    assert svg.count("<polyline") == n
    x, y, w, h = _viewbox(svg)
    assert w == pytest.approx(2 * a * 1.1, rel=1e-3) and h == pytest.approx(w, rel=1e-3)
    rot = output.rotating_curves(o, 16)
    assert len(rot) == n and np.allclose(rot[0], u0[0])
