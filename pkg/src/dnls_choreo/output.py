"""Deterministic file output: JSON, CSV and SVG.

Floats are written with 17 significant digits so that files round-trip
bit-exactly.
"""
import colorsys
import json
import math
import os

import numpy as np

FORMAT_VERSION = "dnls-choreo 1"


def fmt17(x):
    return format(float(x), ".17g")


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return "null"
        s = fmt17(x)
        return s if any(c in s for c in ".en") else s + ".0"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        if indent:
            return "{\n" + ",\n".join(pad + it for it in items) + "\n" + end + "}"
        return "{" + ", ".join(items) + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [_encode(v, indent, level + 1) for v in obj]
        if indent and not all(isinstance(v, (int, float, np.number)) for v in obj):
            return "[\n" + ",\n".join(pad + it for it in items) + "\n" + end + "]"
        return "[" + ", ".join(items) + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj, indent=1):
    """JSON text with 17-digit floats; non-finite floats become null."""
    return _encode(obj, indent, 0) + "\n"


def write_text(path, text):
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def write_json(path, obj):
    return write_text(path, dumps(obj))


def export_orbit(orbit, path):
    return write_text(path, dumps(orbit.to_dict(), indent=0))


def export_branch(branch, path):
    return write_text(path, branch.to_csv())


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


# --------------------------------------------------------------------------
# SVG
# --------------------------------------------------------------------------

def _hex(h, s=0.85, v=0.8):
    r, g, b = colorsys.hsv_to_rgb(h % 1.0, s, v)
    return "#{:02x}{:02x}{:02x}".format(round(255 * r), round(255 * g), round(255 * b))


def _viewbox(curves, margin=0.05):
    pts = np.concatenate([np.ravel(c) for c in curves])
    x0, x1 = pts.real.min(), pts.real.max()
    y0, y1 = (-pts.imag).min(), (-pts.imag).max()
    span = max(x1 - x0, y1 - y0, 1e-12)
    mx = my = margin * span
    return x0 - mx, y0 - my, (x1 - x0) + 2 * mx, (y1 - y0) + 2 * my, span


def _points(z):
    return " ".join(f"{x:.6f},{y:.6f}" for x, y in zip(z.real, -z.imag))


def render_svg(curves, style="sites", size=600, closed=True, gradient_segments=256):
    """SVG text for complex curves.

    ``style="sites"`` draws curve ``j`` in its own fixed hue.
    ``style="gradient"`` colours every curve by a hue that changes along its
    arclength.  The view box fits all curves with a 5% margin; the imaginary
    axis points up.
    """
    if style not in ("sites", "gradient"):
        raise ValueError(f"unknown style {style!r}")
    curves = [np.asarray(c, dtype=complex) for c in curves]
    if not curves or any(c.size < 2 for c in curves):
        raise ValueError("need at least one curve with two points")
    x, y, w, h, span = _viewbox(curves)
    stroke = 0.004 * span
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="{x:.6f} {y:.6f} {w:.6f} {h:.6f}">',
           f"<!-- {FORMAT_VERSION} -->"]
    for j, c in enumerate(curves):
        if closed:
            c = np.append(c, c[0])
        if style == "sites":
            out.append(f'<polyline fill="none" stroke="{_hex(j / len(curves))}" '
                       f'stroke-width="{stroke:.6f}" points="{_points(c)}"/>')
            continue
        seg = np.abs(np.diff(c))
        arc = np.concatenate([[0.0], np.cumsum(seg)])
        frac = arc / max(arc[-1], 1e-300)
        cuts = np.searchsorted(frac, np.linspace(0.0, 1.0, gradient_segments + 1))
        cuts[-1] = len(c) - 1
        for i in range(gradient_segments):
            lo, hi = cuts[i], max(cuts[i + 1], cuts[i] + 1)
            if lo >= len(c) - 1:
                break
            piece = c[lo:hi + 1]
            out.append(f'<polyline fill="none" stroke="{_hex(0.8 * i / gradient_segments)}" '
                       f'stroke-width="{stroke:.6f}" points="{_points(piece)}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def rotating_curves(orbit, samples=1024):
    """Site curves ``u_j`` over one period in the rotating frame."""
    from .collocation import _eval
    from .lattice import to_complex

    s = np.arange(samples) / samples
    u = to_complex(_eval(orbit, s, 0))
    return [u[:, j] for j in range(orbit.n)]
