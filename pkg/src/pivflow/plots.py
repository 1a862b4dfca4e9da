"""Flow-field figure rendering: quiver, magnitude maps, and overlays."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib import cm, colors

from .errors import ConfigError
from .flow import FlowField

PLOT_STYLES = ("quiver", "magnitude", "combined")


def _speed_image(flow: FlowField, cmap_name, invalid_color, vmax):
    speed = np.hypot(flow.u.astype(np.float64), flow.v.astype(np.float64))
    masked = np.ma.masked_array(speed, mask=~flow.valid)
    cmap = plt.get_cmap(cmap_name).copy()
    cmap.set_bad(invalid_color)
    top = vmax if vmax is not None else max(float(masked.max()) if flow.valid.any() else 1.0, 1e-12)
    norm = colors.Normalize(vmin=0.0, vmax=top)
    return masked, cmap, norm


def render_plot(
    flow: FlowField,
    style: str,
    out_path,
    step: int = 16,
    arrow_scale: float | None = None,
    cmap: str = "viridis",
    invalid_color: str = "black",
    vmax: float | None = None,
) -> Path:
    """Render a flow field to a lossless raster file.

    ``magnitude`` writes the per-pixel speed through the colormap at the
    exact field dimensions, with invalid pixels in ``invalid_color``.
    ``quiver`` draws arrows on a ``step``-spaced grid with the px-per-unit
    arrow scale printed in the figure legend. ``combined`` overlays both.
    """
    if style not in PLOT_STYLES:
        raise ConfigError(f"style must be one of {PLOT_STYLES}, got {style!r}")
    if step < 1:
        raise ConfigError(f"step must be >= 1, got {step}")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    if style == "magnitude":
        masked, cmap_obj, norm = _speed_image(flow, cmap, invalid_color, vmax)
        rgba = cmap_obj(norm(masked))
        plt.imsave(out_path, rgba, format="png")
        return out_path

    ys, xs = np.mgrid[0 : flow.height : step, 0 : flow.width : step]
    u = flow.u[ys, xs].astype(np.float64)
    v = flow.v[ys, xs].astype(np.float64)
    ok = flow.valid[ys, xs]
    speeds = np.hypot(flow.u[flow.valid], flow.v[flow.valid]) if flow.valid.any() else np.array([1.0])
    unit = arrow_scale if arrow_scale is not None else max(float(speeds.max()), 1e-12)

    fig, ax = plt.subplots(figsize=(8, 8 * flow.height / flow.width))
    if style == "combined":
        masked, cmap_obj, norm = _speed_image(flow, cmap, invalid_color, vmax)
        ax.imshow(masked, cmap=cmap_obj, norm=norm, origin="upper")
        arrow_color = "white"
    else:
        arrow_color = "black"
    quiv = ax.quiver(
        xs[ok],
        ys[ok],
        u[ok],
        -v[ok],  # row index grows downward; plot with y up-positive arrows flipped
        color=arrow_color,
        angles="xy",
        scale_units="xy",
        scale=1.0,
    )
    ax.quiverkey(
        quiv,
        0.85,
        1.03,
        unit,
        f"{unit:.3g} px/frame",
        labelpos="E",
        coordinates="axes",
    )
    ax.set_xlim(-0.5, flow.width - 0.5)
    ax.set_ylim(flow.height - 0.5, -0.5)
    ax.set_aspect("equal")
    ax.set_xlabel("x [px]")
    ax.set_ylabel("y [px]")
    fig.savefig(out_path, format="png", dpi=120, bbox_inches="tight")
    plt.close(fig)
    return out_path
