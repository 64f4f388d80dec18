"""Impact scatter plots with covariance ellipses, rendered to SVG."""

import io
import math
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure
from matplotlib.patches import Ellipse as EllipsePatch

from .export import atomic_write_bytes

WIDTH_PX, HEIGHT_PX, DPI = 800, 600, 72


class ScatterLayer(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    label: str
    color: str = "tab:gray"


class EllipseLayer(NamedTuple):
    """One-sigma ellipse; angle in radians from the x axis."""

    center_x: float
    center_y: float
    semi_major: float
    semi_minor: float
    angle: float
    label: str
    color: str = "tab:red"


def ellipse_layer(stats, label: str, color: str = "tab:red") -> EllipseLayer:
    """Ellipse layer from ImpactStats."""
    e = stats.ellipse
    return EllipseLayer(e.center_x, e.center_y, e.semi_major, e.semi_minor,
                        e.angle, label, color)  # fmt: skip


def axis_ellipse_layer(
    mean_x: float, mean_y: float, sd_x: float, sd_y: float, label: str,
    color: str = "tab:blue",
) -> EllipseLayer:
    """Axis-aligned ellipse from standard deviations."""
    if sd_x >= sd_y:
        return EllipseLayer(mean_x, mean_y, sd_x, sd_y, 0.0, label, color)
    return EllipseLayer(mean_x, mean_y, sd_y, sd_x, math.pi / 2, label, color)


def impact_plot_svg(
    path: Union[str, Path],
    layers: Sequence[ScatterLayer],
    ellipses: Sequence[EllipseLayer] = (),
    title: Optional[str] = None,
) -> int:
    """
    Render impact points and ellipses to an 800x600 SVG file.

    Args:
        path: Output file (written atomically)
        layers: Scatter layers, one marker per impact point
        ellipses: Covariance ellipses to overlay
        title: Optional plot title

    Returns:
        Number of impact markers drawn
    """
    fig = Figure(figsize=(WIDTH_PX / DPI, HEIGHT_PX / DPI), dpi=DPI)
    FigureCanvasSVG(fig)
    ax = fig.add_subplot()

    markers = 0
    for layer in layers:
        ax.scatter(layer.x, layer.y, s=10, marker="o", color=layer.color,
                   alpha=0.6, label=f"{layer.label} (n={len(layer.x)})")  # fmt: skip
        markers += len(layer.x)
    for e in ellipses:
        ax.add_patch(
            EllipsePatch(
                (e.center_x, e.center_y),
                width=2.0 * e.semi_major,
                height=2.0 * e.semi_minor,
                angle=math.degrees(e.angle),
                fill=False,
                edgecolor=e.color,
                linewidth=1.5,
                label=e.label,
            )
        )
        ax.plot([e.center_x], [e.center_y], marker="+", color=e.color)
    ax.autoscale_view()

    ax.set_xlabel("downrange x (ft)")
    ax.set_ylabel("cross-range y (ft)")
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if layers or ellipses:
        ax.legend(loc="best")

    buffer = io.BytesIO()
    fig.savefig(buffer, format="svg")
    atomic_write_bytes(path, buffer.getvalue())
    return markers
