# render_utils.py - SVG heatmaps of attribution maps with the input spikes drawn on top.

from typing import List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np
import plotly.colors

# Blue for negative, white for zero, red for positive.
ATTRIBUTION_COLORSCALE = [[0.0, "rgb(33,102,172)"], [0.5, "rgb(255,255,255)"], [1.0, "rgb(178,24,43)"]]
CELL_WIDTH = 4
ROW_HEIGHT = 24
LABEL_WIDTH = 90
MARGIN = 10
FONT = "Arial, sans-serif"


def _hex(color: Tuple[float, float, float]) -> str:
    return "#" + "".join(f"{int(round(channel * 255)):02x}" for channel in color)


def cell_colors(values: np.ndarray) -> List[List[str]]:
    """Hex color per cell on a symmetric scale bounded by the largest absolute value."""
    values = np.asarray(values, dtype=np.float64)
    bound = float(np.max(np.abs(values))) if values.size else 0.0
    positions = np.full(values.shape, 0.5) if bound == 0 else 0.5 + 0.5 * values / bound
    positions = np.clip(positions, 0.0, 1.0)

    # Each distinct position is interpolated once.
    unique, inverse = np.unique(positions, return_inverse=True)
    plotly.colors.validate_colorscale(ATTRIBUTION_COLORSCALE)
    palette = [_hex(c) for c in plotly.colors.sample_colorscale(
        ATTRIBUTION_COLORSCALE, [float(p) for p in unique], colortype="tuple")]
    flat = [palette[i] for i in np.ravel(inverse)]
    width = values.shape[1] if values.ndim == 2 else 0
    return [flat[row * width:(row + 1) * width] for row in range(values.shape[0])]


def render_attribution_svg(values: np.ndarray, x: np.ndarray, channel_names: Sequence[str],
                           title: Optional[str] = None) -> str:
    """Heatmap of one class slice (D x T) with spike ticks from x; a pure function of its inputs."""
    values = np.asarray(values, dtype=np.float64)
    x = np.asarray(x)
    if values.ndim != 2 or x.shape != values.shape:
        raise ValueError(f"attribution {values.shape} and input window {x.shape} must both be D x T")
    if len(channel_names) != values.shape[0]:
        raise ValueError(f"{len(channel_names)} channel names for {values.shape[0]} rows")

    rows, steps = values.shape
    top = MARGIN + (ROW_HEIGHT if title else 0)
    width = LABEL_WIDTH + steps * CELL_WIDTH + MARGIN
    height = top + rows * ROW_HEIGHT + MARGIN
    colors = cell_colors(values)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    if title:
        parts.append(f'<text x="{LABEL_WIDTH}" y="{MARGIN + ROW_HEIGHT // 2}" font-family="{FONT}" '
                     f'font-size="14">{escape(title)}</text>')

    parts.append('<g class="cells" shape-rendering="crispEdges">')
    for row in range(rows):
        y = top + row * ROW_HEIGHT
        for step in range(steps):
            parts.append(f'<rect x="{LABEL_WIDTH + step * CELL_WIDTH}" y="{y}" width="{CELL_WIDTH}" '
                         f'height="{ROW_HEIGHT}" fill="{colors[row][step]}"/>')
    parts.append('</g>')

    parts.append('<g class="spikes" stroke="#000000" stroke-width="1">')
    for row in range(rows):
        y = top + row * ROW_HEIGHT
        for step in np.flatnonzero(x[row] > 0):
            cx = LABEL_WIDTH + step * CELL_WIDTH + CELL_WIDTH / 2
            parts.append(f'<line x1="{cx}" y1="{y + 4}" x2="{cx}" y2="{y + ROW_HEIGHT - 4}"/>')
    parts.append('</g>')

    parts.append(f'<g class="channels" font-family="{FONT}" font-size="12" text-anchor="end">')
    for row, name in enumerate(channel_names):
        y = top + row * ROW_HEIGHT + ROW_HEIGHT // 2 + 4
        parts.append(f'<text x="{LABEL_WIDTH - 6}" y="{y}">{escape(str(name))}</text>')
    parts.append('</g>')

    parts.append('</svg>')
    return "\n".join(parts) + "\n"


def write_svg(svg: str, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(svg)
