"""Panorama SVG of the mapped facade.

One drawing for the whole survey: the facade extent as the backdrop,
every unique window as a rectangle, storey bands as horizontal guide
lines, and a `W=<n> S=<n>` label. Plane coordinates grow upward, SVG
coordinates grow downward, so the vertical axis is flipped once here
and nowhere else.

The input is the metrics JSON document (as a parsed dict), not live
pipeline objects, so a report can be regenerated from a metrics file
alone. All numbers are formatted with fixed precision; the same
document always yields the identical SVG byte for byte.
"""

from __future__ import annotations

from .errors import ConfigError

__all__ = ["render_report"]

SCALE_PX_PER_M = 40.0
MARGIN_PX = 24.0


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _require(doc: dict, key: str):
    if key not in doc:
        raise ConfigError(f"metrics document is missing {key!r}")
    return doc[key]


def render_report(doc: dict) -> str:
    """Render a metrics document (see planemap.metrics_to_json) as SVG."""
    window_count = _require(doc, "window_count")
    storey_count = _require(doc, "storey_count")
    extent = _require(doc, "facade_extent")
    windows = _require(doc, "unique_windows")
    bands = doc.get("storey_bands", [])

    ew = float(extent["w_m"])
    eh = float(extent["h_m"])
    xs = [float(w["x_m"]) for w in windows]
    if xs:
        x_min = min(xs)
        y_min = min(float(w["y_m"]) for w in windows)
        x_lo = (x_min + max(float(w["x_m"]) + float(w["w_m"]) for w in windows)
                - ew) / 2.0
        y_top = max(float(w["y_m"]) + float(w["h_m"]) for w in windows)
        y_lo = (y_min + y_top - eh) / 2.0
    else:
        x_lo, y_lo = 0.0, 0.0
    # Don't let the extent rect float off the content: the extent is
    # centered on the window hull (auto extents already are; user
    # extents are re-anchored the same way for display).
    width_px = max(ew * SCALE_PX_PER_M, 1.0) + 2 * MARGIN_PX
    height_px = max(eh * SCALE_PX_PER_M, 1.0) + 2 * MARGIN_PX + 20.0

    def to_px(x_m: float, y_m: float) -> tuple[float, float]:
        """Plane point to SVG point; y flips about the extent top."""
        return (MARGIN_PX + (x_m - x_lo) * SCALE_PX_PER_M,
                MARGIN_PX + 20.0 + (y_lo + eh - y_m) * SCALE_PX_PER_M)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" '
        f'width="{_fmt(width_px)}" height="{_fmt(height_px)}" '
        f'viewBox="0 0 {_fmt(width_px)} {_fmt(height_px)}">',
        '<style>.facade{fill:#e8e2d5;stroke:#555;stroke-width:1}'
        '.window{fill:#3a6ea5;stroke:#1c3a57;stroke-width:1}'
        '.storey-guide{stroke:#b0543c;stroke-width:1;stroke-dasharray:6 4}'
        '.counts{font:bold 16px sans-serif;fill:#222}</style>',
    ]
    fx, fy = to_px(x_lo, y_lo + eh)
    parts.append(
        f'<rect class="facade" x="{_fmt(fx)}" y="{_fmt(fy)}" '
        f'width="{_fmt(max(ew, 0.0) * SCALE_PX_PER_M)}" '
        f'height="{_fmt(max(eh, 0.0) * SCALE_PX_PER_M)}"/>'
    )
    for lo_hi in bands:
        lo, hi = float(lo_hi[0]), float(lo_hi[1])
        for level in (lo, hi):
            x1, y1 = to_px(x_lo, level)
            x2, _ = to_px(x_lo + ew, level)
            parts.append(
                f'<line class="storey-guide" x1="{_fmt(x1)}" y1="{_fmt(y1)}" '
                f'x2="{_fmt(x2)}" y2="{_fmt(y1)}"/>'
            )
    for w in windows:
        px, py = to_px(float(w["x_m"]), float(w["y_m"]) + float(w["h_m"]))
        parts.append(
            f'<rect class="window" x="{_fmt(px)}" y="{_fmt(py)}" '
            f'width="{_fmt(float(w["w_m"]) * SCALE_PX_PER_M)}" '
            f'height="{_fmt(float(w["h_m"]) * SCALE_PX_PER_M)}"/>'
        )
    parts.append(
        f'<text class="counts" x="{_fmt(MARGIN_PX)}" y="{_fmt(MARGIN_PX - 6.0)}">'
        f'W={window_count} S={storey_count}</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
