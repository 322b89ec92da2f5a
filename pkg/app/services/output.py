# app/services/output.py
"""
CSV and SVG writers. CSV floats use 17 significant digits; SVG is rendered from
the jinja2 templates in app/templates. Every file ends with a newline.
"""
from __future__ import annotations

import csv
import logging
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from jinja2 import Environment, FileSystemLoader, select_autoescape

from app.core.config import escape_bound
from app.core.errors import DomainError, ToolkitError
from app.services.families import family_for

logger = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).resolve().parent.parent / "templates"
MARGIN = 40

_env = Environment(
    loader=FileSystemLoader(str(TEMPLATE_DIR)),
    autoescape=select_autoescape(enabled_extensions=("j2", "svg")),
    keep_trailing_newline=True,
    trim_blocks=True,
    lstrip_blocks=True,
)


def fmt(x) -> str:
    if x is None:
        return ""
    return format(float(x), ".17g")


def _px(x: float) -> str:
    return f"{x:.2f}"


def _writer(path: str | Path):
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    return path, path.open("w", newline="", encoding="utf-8")


# =========================
# CSV
# =========================
def kneading_text(k) -> str:
    if k is None:
        return "escape"
    return "".join("+" if s > 0 else "-" if s < 0 else "0" for s in k.symbols)


def emit_scan_csv(report, path: str | Path) -> Path:
    path, fh = _writer(path)
    with fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["c", "kneading", "lambda_n", "entropy"])
        for row in report.rows:
            lam = "" if row.lambda_n is None else str(row.lambda_n)
            w.writerow([fmt(row.c), kneading_text(row.kneading), lam, fmt(row.entropy)])
    return path


def _event_flags(curve) -> dict[int, str]:
    flags: dict[int, str] = {}
    for ev in curve.events:
        tag = f"crossing:{ev.i}" if ev.type == "crossing" else ev.type
        flags[ev.index] = f"{flags[ev.index]}|{tag}" if ev.index in flags else tag
    return flags


def emit_curve_csv(curve, path: str | Path) -> Path:
    path, fh = _writer(path)
    flags = _event_flags(curve)
    entropy = curve.lap_entropy or [None] * len(curve.points)
    with fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["a", "b", "E_a", "E_b", "entropy", "event_flag"])
        for k, (p, e) in enumerate(zip(curve.points, curve.E_ab)):
            w.writerow([fmt(p[0]), fmt(p[1]), fmt(e[0]), fmt(e[1]), fmt(entropy[k]), flags.get(k, "")])
    return path


def emit_motion_csv(motion, path: str | Path) -> Path:
    path, fh = _writer(path)
    with fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ray", "radius", "point_label", "re", "im"])
        for r in range(motion.n_rays):
            for s in range(motion.n_radii + 1):
                lam = abs(complex(motion.lambdas[r, s]))
                for x, z in enumerate(motion.samples[r, s]):
                    w.writerow([r, fmt(lam), x, fmt(z.real), fmt(z.imag)])
    return path


# =========================
# SVG
# =========================
class _Frame:
    """Maps data coordinates onto the plot area inside the margins."""

    def __init__(self, x_range, y_range, width: int, height: int):
        self.x_lo, self.x_hi = x_range
        self.y_lo, self.y_hi = y_range
        if self.x_hi <= self.x_lo:
            self.x_hi = self.x_lo + 1.0
        if self.y_hi <= self.y_lo:
            self.y_lo, self.y_hi = self.y_lo - 0.5, self.y_lo + 0.5
        self.width, self.height = width, height

    def x(self, v: float) -> float:
        return MARGIN + (v - self.x_lo) / (self.x_hi - self.x_lo) * (self.width - 2 * MARGIN)

    def y(self, v: float) -> float:
        return self.height - MARGIN - (v - self.y_lo) / (self.y_hi - self.y_lo) * (self.height - 2 * MARGIN)

    def axes(self, x_label: str, y_label: str) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "left": MARGIN,
            "right": self.width - MARGIN,
            "top": MARGIN,
            "bottom": self.height - MARGIN,
            "x_lo": fmt_label(self.x_lo),
            "x_hi": fmt_label(self.x_hi),
            "y_lo": fmt_label(self.y_lo),
            "y_hi": fmt_label(self.y_hi),
            "x_label": x_label,
            "y_label": y_label,
        }


def fmt_label(v: float) -> str:
    return f"{v:.4g}"


def _render(template: str, path: str | Path, **ctx) -> Path:
    text = _env.get_template(template).render(**ctx)
    if not text.endswith("\n"):
        text += "\n"
    path, fh = _writer(path)
    with fh:
        fh.write(text)
    return path


def bifurcation_cloud(spec, c_range: Sequence[float], transient: int, keep: int, columns: int) -> list[tuple[float, list[float]]]:
    """The last `keep` of `transient + keep` critical iterates for each parameter column."""
    if not 0 <= keep <= 1000:
        raise DomainError("keep must lie in 0..1000", keep=keep)
    fam = family_for(spec)
    if fam.nu != 1:
        raise DomainError("bifurcation diagrams are drawn for one-parameter families", kind=fam.kind)
    c_lo, c_hi = float(c_range[0]), float(c_range[1])
    if c_lo >= c_hi or columns <= 0:
        return []
    out = []
    for c in np.linspace(c_lo, c_hi, columns):
        theta = fam.theta(float(c))
        bound = escape_bound(fam.escape_param(theta))
        x = fam.critical_points(theta)[0].real
        tail: list[float] = []
        try:
            for n in range(transient + keep):
                x = fam.eval(theta, x).real
                if not math.isfinite(x) or abs(x) > bound:
                    tail = []
                    break
                if n >= transient:
                    tail.append(x)
        except ToolkitError:
            tail = []
        out.append((float(c), tail))
    return out


def emit_bifurcation_svg(
    spec,
    c_range: Sequence[float],
    transient: int,
    keep: int,
    width: int,
    height: int,
    path: str | Path,
) -> Path:
    columns = max(0, width - 2 * MARGIN)
    cloud = bifurcation_cloud(spec, c_range, transient, keep, columns)
    ys = [y for _, tail in cloud for y in tail]
    y_range = (min(ys), max(ys)) if ys else (0.0, 1.0)
    x_range = (float(c_range[0]), float(c_range[1])) if cloud else (0.0, 1.0)
    frame = _Frame(x_range, y_range, width, height)
    # one dot per pixel
    dots = sorted({(int(round(frame.x(c))), int(round(frame.y(y)))) for c, tail in cloud for y in tail})
    logger.debug("emit_bifurcation_svg: %d columns, %d pixels", len(cloud), len(dots))
    return _render("bifurcation.svg.j2", path, axes=frame.axes("c", "x"), dots=dots)


def emit_curve_svg(curves: Iterable, path: str | Path, width: int = 640, height: int = 480) -> Path:
    curves = list(curves)
    pts = [p for cv in curves for p in cv.points]
    if pts:
        arr = np.asarray(pts)
        x_range = (float(arr[:, 0].min()), float(arr[:, 0].max()))
        y_range = (float(arr[:, 1].min()), float(arr[:, 1].max()))
    else:
        x_range, y_range = (0.0, 1.0), (0.0, 1.0)
    frame = _Frame(x_range, y_range, width, height)
    lines = []
    markers = []
    for cv in curves:
        lines.append(" ".join(f"{_px(frame.x(a))},{_px(frame.y(b))}" for a, b in cv.points))
        for ev in cv.crossings():
            a, b = ev.point
            markers.append({"x": _px(frame.x(a)), "y": _px(frame.y(b)), "label": f"i={ev.i}"})
    return _render("curve.svg.j2", path, axes=frame.axes("a", "b"), lines=lines, markers=markers)
