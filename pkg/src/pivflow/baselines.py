"""Comparison solvers: template-matching cross-correlation and Horn-Schunck.

The cross-correlation path scores zero-normalized correlation over an
integer displacement search grid per interrogation window, with an
optional parabolic subpixel peak fit. Two engines produce the same
scores: a direct-sum reference and an FFT-accelerated one (agreement is
part of the test contract). Horn-Schunck is the classic global method:
a quadratic data term plus an alpha-weighted smoothness penalty, solved
by Jacobi-style sweeps over neighborhood averages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from . import _kernels
from .errors import (
    DimensionError,
    WindowOutOfBoundsError,
    ZeroVarianceError,
)
from .flow import FlowField
from .image_core import ImageFrame, gradient

SUBPIXEL_MODES = ("none", "parabolic")
CC_ENGINES = ("direct", "fft")

# Windows whose secondary/primary peak ratio exceeds this are ambiguous.
DEFAULT_AMBIGUITY_RATIO = 0.8


@dataclass(frozen=True)
class CCParams:
    """Interrogation-window matching controls."""

    template_size: int = 32
    search_radius: int = 8
    grid_step: int = 16
    subpixel_mode: str = "parabolic"

    def __post_init__(self):
        if self.template_size < 8:
            raise ValueError(f"template_size must be >= 8, got {self.template_size}")
        if self.search_radius < 1:
            raise ValueError(f"search_radius must be >= 1, got {self.search_radius}")
        if self.grid_step < 1:
            raise ValueError(f"grid_step must be >= 1, got {self.grid_step}")
        if self.subpixel_mode not in SUBPIXEL_MODES:
            raise ValueError(
                f"subpixel_mode must be one of {SUBPIXEL_MODES}, got {self.subpixel_mode!r}"
            )

    @property
    def t_lo(self) -> int:
        return self.template_size // 2

    @property
    def t_hi(self) -> int:
        return self.template_size - 1 - self.t_lo


@dataclass(frozen=True)
class HSParams:
    """Global-smoothness solver controls; larger alpha smooths harder."""

    alpha: float = 0.5
    iterations: int = 200

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")


@dataclass(frozen=True, eq=False)
class CorrelationSurface:
    """Normalized correlation scores over the displacement search grid.

    ``peak`` is the best displacement (du, dv), subpixel-refined when
    requested; ``secondary_peak_value`` is the best score outside a 1-px
    Chebyshev exclusion zone around the primary peak.
    """

    scores: np.ndarray
    peak: tuple[float, float]
    peak_value: float
    secondary_peak_value: float

    def ambiguity_ratio(self) -> float:
        """secondary/primary score ratio; >= 1 means no usable primary."""
        if self.peak_value <= 0.0:
            return 1.0
        return self.secondary_peak_value / self.peak_value

    def is_ambiguous(self, threshold: float = DEFAULT_AMBIGUITY_RATIO) -> bool:
        return self.ambiguity_ratio() > threshold


def _check_window_fits(frame_a, frame_b, cx, cy, params):
    h, w = frame_a.shape
    lo, hi, r = params.t_lo, params.t_hi, params.search_radius
    if not (cx - lo >= 0 and cx + hi <= w - 1 and cy - lo >= 0 and cy + hi <= h - 1):
        raise WindowOutOfBoundsError(
            f"template {params.template_size}px at ({cx}, {cy}) overruns the {w}x{h} frame"
        )
    if not (
        cx - lo - r >= 0
        and cx + hi + r <= frame_b.width - 1
        and cy - lo - r >= 0
        and cy + hi + r <= frame_b.height - 1
    ):
        raise WindowOutOfBoundsError(
            f"search radius {r}px at ({cx}, {cy}) overruns the second frame"
        )


def _fft_surface(a, b, cx, cy, params):
    """FFT-accelerated ZNCC scores for one window; matches the direct sums."""
    lo, hi, r = params.t_lo, params.t_hi, params.search_radius
    tpl = a[cy - lo : cy + hi + 1, cx - lo : cx + hi + 1]
    tzm = tpl - tpl.mean()
    tpl_var = (tzm * tzm).sum()
    if tpl_var <= 0.0:
        size = 2 * r + 1
        return np.full((size, size), np.nan)
    region = b[cy - lo - r : cy + hi + 1 + r, cx - lo - r : cx + hi + 1 + r]
    npix = tpl.size
    num = fftconvolve(region, tzm[::-1, ::-1], mode="valid")
    box = np.ones_like(tpl)
    s1 = fftconvolve(region, box, mode="valid")
    s2 = fftconvolve(region * region, box, mode="valid")
    pvar = s2 - s1 * s1 / npix
    np.clip(pvar, 0.0, None, out=pvar)
    denom = np.sqrt(tpl_var * pvar)
    scores = np.where(denom > 0.0, num / np.where(denom > 0.0, denom, 1.0), 0.0)
    np.clip(scores, -1.0, 1.0, out=scores)
    return scores


def _surfaces(frame_a, frame_b, centers_x, centers_y, params, engine):
    if engine not in CC_ENGINES:
        raise ValueError(f"engine must be one of {CC_ENGINES}, got {engine!r}")
    a = frame_a.values
    b = frame_b.values
    if engine == "direct":
        return _kernels.ncc_surfaces_direct(
            a,
            b,
            np.asarray(centers_x, dtype=np.int64),
            np.asarray(centers_y, dtype=np.int64),
            params.t_lo,
            params.t_hi,
            params.search_radius,
        )
    size = 2 * params.search_radius + 1
    out = np.empty((len(centers_x), size, size))
    for i, (cx, cy) in enumerate(zip(centers_x, centers_y)):
        out[i] = _fft_surface(a, b, int(cx), int(cy), params)
    return out


def _parabolic_offset(left, mid, right):
    denom = left - 2.0 * mid + right
    if denom >= 0.0:
        # not a proper maximum; leave the integer peak
        return 0.0
    offset = 0.5 * (left - right) / denom
    return float(np.clip(offset, -0.5, 0.5))


def _extract_peaks(scores, params):
    r = params.search_radius
    flat = int(np.argmax(scores))
    pv, pu = np.unravel_index(flat, scores.shape)
    peak_value = float(scores[pv, pu])
    du = float(pu - r)
    dv = float(pv - r)
    if params.subpixel_mode == "parabolic":
        if 0 < pu < scores.shape[1] - 1:
            du += _parabolic_offset(
                scores[pv, pu - 1], scores[pv, pu], scores[pv, pu + 1]
            )
        if 0 < pv < scores.shape[0] - 1:
            dv += _parabolic_offset(
                scores[pv - 1, pu], scores[pv, pu], scores[pv + 1, pu]
            )
    masked = scores.copy()
    masked[
        max(pv - 1, 0) : pv + 2,
        max(pu - 1, 0) : pu + 2,
    ] = -np.inf
    secondary = float(masked.max()) if np.isfinite(masked).any() else -1.0
    return (du, dv), peak_value, secondary


def ncc_displacement(
    frame_a: ImageFrame,
    frame_b: ImageFrame,
    center,
    params: CCParams,
    engine: str = "direct",
) -> CorrelationSurface:
    """Correlation surface for one interrogation window centered at ``center``.

    Scores every integer displacement within the search radius; raises
    ZeroVarianceError for flat templates and WindowOutOfBoundsError when
    the template or search window does not fit.
    """
    cx, cy = int(round(center[0])), int(round(center[1]))
    _check_window_fits(frame_a, frame_b, cx, cy, params)
    scores = _surfaces(frame_a, frame_b, [cx], [cy], params, engine)[0]
    if np.isnan(scores).all():
        raise ZeroVarianceError(
            f"flat template at ({cx}, {cy}): correlation undefined"
        )
    peak, peak_value, secondary = _extract_peaks(scores, params)
    return CorrelationSurface(
        scores=scores,
        peak=peak,
        peak_value=peak_value,
        secondary_peak_value=secondary,
    )


def _grid_centers(extent, margin, step):
    lo = margin
    hi = extent - 1 - margin
    if hi < lo:
        return np.array([], dtype=np.int64)
    return np.arange(lo, hi + 1, step, dtype=np.int64)


def cc_dense_flow(
    frame_a: ImageFrame,
    frame_b: ImageFrame,
    params: CCParams,
    engine: str = "fft",
    workers: int | None = None,
) -> FlowField:
    """Interrogation-grid matching densified to a per-pixel field.

    Window centers sit on a ``grid_step`` lattice wherever template and
    search fit; per-window displacements are interpolated bilinearly to
    every pixel (clamped to the lattice hull at the borders). Windows with
    flat templates are invalid, and invalidity spreads to pixels whose
    interpolation touches them.
    """
    if frame_a.shape != frame_b.shape:
        raise DimensionError(
            f"frame dimensions differ: {frame_a.shape} vs {frame_b.shape}"
        )
    h, w = frame_a.shape
    margin_lo = params.t_lo + params.search_radius
    margin_hi = params.t_hi + params.search_radius
    xs = _grid_centers(w, max(margin_lo, margin_hi), params.grid_step)
    ys = _grid_centers(h, max(margin_lo, margin_hi), params.grid_step)
    if xs.size == 0 or ys.size == 0:
        raise DimensionError(
            f"{w}x{h} frame too small for template {params.template_size} "
            f"+ search {params.search_radius}"
        )
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    centers_x = gx.ravel()
    centers_y = gy.ravel()
    with _kernels.worker_threads(workers):
        surfaces = _surfaces(frame_a, frame_b, centers_x, centers_y, params, engine)

    node_u = np.full((ys.size, xs.size), np.nan)
    node_v = np.full((ys.size, xs.size), np.nan)
    for i in range(centers_x.size):
        if np.isnan(surfaces[i]).all():
            continue
        peak, _, _ = _extract_peaks(surfaces[i], params)
        node_u.flat[i] = peak[0]
        node_v.flat[i] = peak[1]

    u = _densify(node_u, xs, ys, w, h)
    v = _densify(node_v, xs, ys, w, h)
    valid = np.isfinite(u) & np.isfinite(v)
    u[~valid] = 0.0
    v[~valid] = 0.0
    return FlowField(u=u, v=v, valid=valid)


def _densify(nodes, xs, ys, width, height):
    """Bilinear interpolation from lattice nodes to the full pixel grid.

    Query coordinates are clamped to the lattice hull, so border pixels
    replicate the nearest edge vectors. NaN nodes propagate to every
    pixel whose interpolation uses them.
    """
    qx = np.clip(np.arange(width, dtype=np.float64), xs[0], xs[-1])
    qy = np.clip(np.arange(height, dtype=np.float64), ys[0], ys[-1])
    ix = np.clip(np.searchsorted(xs, qx, side="right") - 1, 0, max(xs.size - 2, 0))
    iy = np.clip(np.searchsorted(ys, qy, side="right") - 1, 0, max(ys.size - 2, 0))
    if xs.size == 1:
        fx = np.zeros_like(qx)
        ix1 = ix
    else:
        fx = (qx - xs[ix]) / (xs[ix + 1] - xs[ix])
        ix1 = ix + 1
    if ys.size == 1:
        fy = np.zeros_like(qy)
        iy1 = iy
    else:
        fy = (qy - ys[iy]) / (ys[iy + 1] - ys[iy])
        iy1 = iy + 1
    fx = fx[None, :]
    fy = fy[:, None]
    v00 = nodes[np.ix_(iy, ix)]
    v01 = nodes[np.ix_(iy, ix1)]
    v10 = nodes[np.ix_(iy1, ix)]
    v11 = nodes[np.ix_(iy1, ix1)]
    return (
        (1.0 - fx) * (1.0 - fy) * v00
        + fx * (1.0 - fy) * v01
        + (1.0 - fx) * fy * v10
        + fx * fy * v11
    )


def _neighbor_average(field):
    """4-neighbor mean with edge replication (zero normal derivative)."""
    padded = np.pad(field, 1, mode="edge")
    return 0.25 * (
        padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:]
    )


def hs_derivatives(frame_a: ImageFrame, frame_b: ImageFrame):
    """(ix, iy, it) estimates: averaged spatial gradients of both frames
    and the temporal difference."""
    ga = gradient(frame_a)
    gb = gradient(frame_b)
    ix = 0.5 * (ga.ix + gb.ix)
    iy = 0.5 * (ga.iy + gb.iy)
    it = frame_b.values - frame_a.values
    return ix, iy, it


def hs_energy(u, v, ix, iy, it, alpha: float) -> float:
    """Discrete global energy: data residual squared plus alpha^2 times the
    squared forward-difference field gradients (Neumann boundaries)."""
    data = ix * u + iy * v + it
    e = float((data * data).sum())
    for f in (u, v):
        dx = np.diff(f, axis=1)
        dy = np.diff(f, axis=0)
        e += alpha * alpha * float((dx * dx).sum() + (dy * dy).sum())
    return e


def horn_schunck(
    frame_a: ImageFrame,
    frame_b: ImageFrame,
    params: HSParams,
) -> FlowField:
    """Global-smoothness flow by fixed-point sweeps on neighborhood averages.

    Runs exactly ``params.iterations`` sweeps from a zero field; every
    pixel is valid in the result.
    """
    if frame_a.shape != frame_b.shape:
        raise DimensionError(
            f"frame dimensions differ: {frame_a.shape} vs {frame_b.shape}"
        )
    ix, iy, it = hs_derivatives(frame_a, frame_b)
    alpha2 = params.alpha * params.alpha
    denom = alpha2 + ix * ix + iy * iy
    u = np.zeros(frame_a.shape)
    v = np.zeros(frame_a.shape)
    for _ in range(params.iterations):
        ubar = _neighbor_average(u)
        vbar = _neighbor_average(v)
        shared = (ix * ubar + iy * vbar + it) / denom
        u = ubar - ix * shared
        v = vbar - iy * shared
    return FlowField(u=u, v=v, valid=np.ones(frame_a.shape, dtype=bool))
