"""
Quick-look SVG plots rendered from jinja2 templates in erdmd/templates/.
Not figure quality: enough to eyeball an error curve or a spectrum.
"""

import math
from pathlib import Path

from jinja2 import Environment, FileSystemLoader, select_autoescape

from erdmd.models import EigenSummary, ErrorSeries, LagNorm
from erdmd.utils.logging import setup_logger

logger = setup_logger("plots")

templates = Environment(
    loader=FileSystemLoader(Path(__file__).parent / "templates"),
    autoescape=select_autoescape(enabled_extensions=("svg.j2",)),
    trim_blocks=True,
    lstrip_blocks=True,
)

WIDTH, HEIGHT, MARGIN = 640, 400, 50
MODEL_COLORS = {"erdmd": "#d62728", "baseline": "#000000"}
SOURCE_COLORS = {"full-companion": "#000000", "reduced-inner": "#d62728", "reduced-outer": "#1f77b4"}
DASHES = ["", "6,3", "2,2", "8,3,2,3"]


def _axis(lo: float, hi: float, length: float, offset: float, flip: bool = False):
    span = (hi - lo) or 1.0

    def to_px(v: float) -> float:
        frac = (v - lo) / span
        return round(offset + (1 - frac if flip else frac) * length, 2)

    return to_px


def _render(name: str, path: Path, **context) -> Path:
    path = Path(path)
    path.write_text(templates.get_template(name).render(**context), encoding="utf-8")
    logger.info(f"🖼️ Wrote {path}")
    return path


def render_errors(errors: dict[str, ErrorSeries], path: Path) -> Path:
    """log10 absolute error against time, one polyline per model and dimension."""
    points = [
        (t, math.log10(max(e, 1e-16)))
        for series in errors.values()
        for dim in series.abs_error
        for t, e in zip(series.times, dim)
        if e is not None and math.isfinite(e)
    ]
    t_lo = min((p[0] for p in points), default=0.0)
    t_hi = max((p[0] for p in points), default=1.0)
    y_lo = math.floor(min((p[1] for p in points), default=-16.0))
    y_hi = math.ceil(max((p[1] for p in points), default=0.0))
    x_px = _axis(t_lo, t_hi, WIDTH - 2 * MARGIN, MARGIN)
    y_px = _axis(y_lo, y_hi, HEIGHT - 2 * MARGIN, MARGIN, flip=True)

    lines = []
    for model, series in errors.items():
        for i, dim in enumerate(series.abs_error):
            coords = " ".join(
                f"{x_px(t)},{y_px(math.log10(max(e, 1e-16)))}"
                for t, e in zip(series.times, dim)
                if e is not None and math.isfinite(e)
            )
            lines.append({
                "label": f"{model} y{i}",
                "color": MODEL_COLORS.get(model, "#7f7f7f"),
                "dash": DASHES[i % len(DASHES)],
                "points": coords,
            })
    # end of the reconstruction window, where forecasting begins
    first = next(iter(errors.values()), None)
    markers = [x_px(first.horizon_end_time)] if first and t_lo <= first.horizon_end_time <= t_hi else []
    return _render(
        "errors.svg.j2", path,
        width=WIDTH, height=HEIGHT, margin=MARGIN, lines=lines, markers=markers,
        t_range=(t_lo, t_hi), y_range=(y_lo, y_hi),
    )


def render_spectrum(eigenvalues: list[EigenSummary], path: Path) -> Path:
    """Eigenvalue scatter with the unit circle."""
    size = HEIGHT
    radius = max([1.1] + [1.05 * e.max_modulus for e in eigenvalues if e.max_modulus is not None])
    to_px = _axis(-radius, radius, size - 2 * MARGIN, MARGIN)
    to_py = _axis(-radius, radius, size - 2 * MARGIN, MARGIN, flip=True)
    dots = [
        {"x": to_px(re), "y": to_py(im), "color": SOURCE_COLORS.get(e.source, "#7f7f7f"),
         "r": 3 if e.source == "full-companion" else 1.5}
        for e in eigenvalues
        for re, im in e.values
    ]
    legend = [{"label": e.source, "color": SOURCE_COLORS.get(e.source, "#7f7f7f"), "count": e.count}
              for e in eigenvalues]
    return _render(
        "spectrum.svg.j2", path,
        size=size, margin=MARGIN, dots=dots, legend=legend,
        center=(to_px(0.0), to_py(0.0)), unit=round(to_px(1.0) - to_px(0.0), 2), radius=radius,
    )


def render_norms(norms: dict[str, list[LagNorm]], path: Path) -> Path:
    """log10 Frobenius norm of each lag matrix against its lag."""
    entries = [(model, n.lag, math.log10(max(n.norm, 1e-300))) for model, ns in norms.items() for n in ns]
    lag_hi = max((e[1] for e in entries), default=1)
    y_lo = math.floor(min((e[2] for e in entries), default=-1.0))
    y_hi = math.ceil(max((e[2] for e in entries), default=1.0))
    x_px = _axis(0, lag_hi + 1, WIDTH - 2 * MARGIN, MARGIN)
    y_px = _axis(y_lo, y_hi, HEIGHT - 2 * MARGIN, MARGIN, flip=True)
    # baseline first so the selected lags are drawn on top
    order = sorted(entries, key=lambda e: e[0] != "baseline")
    dots = [
        {"x": x_px(lag), "y": y_px(v), "color": MODEL_COLORS.get(model, "#7f7f7f"),
         "r": 2 if model == "baseline" else 4}
        for model, lag, v in order
    ]
    return _render(
        "norms.svg.j2", path,
        width=WIDTH, height=HEIGHT, margin=MARGIN, dots=dots,
        lag_range=(0, lag_hi + 1), y_range=(y_lo, y_hi), models=list(norms),
        colors=MODEL_COLORS,
    )
