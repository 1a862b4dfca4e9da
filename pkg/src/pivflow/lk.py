"""Dense coarse-to-fine Lucas-Kanade optical flow.

The solver tracks every full-resolution pixel through an image pyramid:
the displacement recovered at the coarsest level seeds the next finer one
(doubled each time), and at each level a fixed-tensor Newton iteration
refines the residual displacement from the warped second frame. The total
displacement is the seed plus residual at level 0, which telescopes to
``sum(2**L * d_L)`` over all levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DimensionError, IllConditionedTensorError
from .flow import FlowField
from .image_core import GradientField, ImageFrame, Pyramid, bilinear_many, build_pyramid, gradient

WEIGHT_MODES = ("uniform", "gaussian")


@dataclass(frozen=True)
class LKParams:
    """Solver controls.

    window_radius
        Half-width of the square support window; the window spans
        ``(2r+1) x (2r+1)`` pixels around the tracked point.
    weight_mode
        "uniform" applies weight 1 to every tap; "gaussian" applies an
        isotropic bell (sigma = radius / 2) normalized to unit sum. The
        eigenvalue gate below is in the same weighted units.
    pyramid_depth
        Requested number of pyramid levels (clamped by frame size).
    max_iterations / convergence_threshold
        Newton refinement stops when the step norm in pixels drops below
        the threshold, or after ``max_iterations`` steps.
    min_eigenvalue_threshold
        Pixels whose windowed gradient tensor has a smaller eigenvalue
        below this are refused (marked invalid) instead of solved.
    """

    window_radius: int = 7
    weight_mode: str = "uniform"
    pyramid_depth: int = 3
    max_iterations: int = 20
    convergence_threshold: float = 0.01
    min_eigenvalue_threshold: float = 1e-6

    def __post_init__(self):
        if self.window_radius < 1:
            raise ValueError(f"window_radius must be >= 1, got {self.window_radius}")
        if self.weight_mode not in WEIGHT_MODES:
            raise ValueError(
                f"weight_mode must be one of {WEIGHT_MODES}, got {self.weight_mode!r}"
            )
        if self.pyramid_depth < 1:
            raise ValueError(f"pyramid_depth must be >= 1, got {self.pyramid_depth}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.convergence_threshold > 0:
            raise ValueError("convergence_threshold must be > 0")
        if self.min_eigenvalue_threshold < 0:
            raise ValueError("min_eigenvalue_threshold must be >= 0")

    def window_weights(self) -> np.ndarray:
        """The (2r+1, 2r+1) tap-weight grid for this configuration."""
        size = 2 * self.window_radius + 1
        if self.weight_mode == "uniform":
            return np.ones((size, size))
        sigma = self.window_radius / 2.0
        offs = np.arange(size, dtype=np.float64) - self.window_radius
        oy, ox = np.meshgrid(offs, offs, indexing="ij")
        w = np.exp(-(ox * ox + oy * oy) / (2.0 * sigma * sigma))
        return w / w.sum()


@dataclass(frozen=True)
class StructureTensor:
    """Windowed sum of gradient products: [[gxx, gxy], [gxy, gyy]]."""

    gxx: float
    gxy: float
    gyy: float
    min_eigenvalue: float

    @classmethod
    def from_sums(cls, gxx: float, gxy: float, gyy: float) -> "StructureTensor":
        trace = gxx + gyy
        split = math.sqrt((gxx - gyy) ** 2 + 4.0 * gxy * gxy)
        return cls(gxx=gxx, gxy=gxy, gyy=gyy, min_eigenvalue=0.5 * (trace - split))


@dataclass(frozen=True)
class LevelTrace:
    """Diagnostics from refining one point at one pyramid level."""

    level: int
    guess: tuple[float, float]
    residual: tuple[float, float]
    iterations: int
    final_step: float


@dataclass(frozen=True)
class IterationTrace:
    """Per-level refinement records for one tracked point, coarse first."""

    levels: tuple[LevelTrace, ...]

    def total_from_levels(self) -> tuple[float, float]:
        """Recombine the per-level residuals: sum of 2**L * d_L."""
        tx = 0.0
        ty = 0.0
        for rec in self.levels:
            scale = float(1 << rec.level)
            tx += scale * rec.residual[0]
            ty += scale * rec.residual[1]
        return tx, ty


@dataclass(frozen=True)
class LevelStats:
    level: int
    mean_iterations: float
    converged_fraction: float
    gated_pixels: int


@dataclass(frozen=True)
class DenseFlowStats:
    """Aggregate diagnostics from a dense solve."""

    levels: tuple[LevelStats, ...] = field(default_factory=tuple)
    valid_fraction: float = 0.0


def combine_level_residuals(residuals) -> tuple[float, float]:
    """Total displacement from per-level residuals d_L, level 0 first:
    ``sum(2**L * d_L)``."""
    tx = 0.0
    ty = 0.0
    for level, (dx, dy) in enumerate(residuals):
        tx += (1 << level) * dx
        ty += (1 << level) * dy
    return tx, ty


def structure_tensor(grad: GradientField, center, params: LKParams) -> StructureTensor:
    """Weighted gradient-product sums over the window centered at ``center``.

    ``center`` is an (x, y) coordinate; taps overhanging the border use
    edge-replicated gradients. Subpixel centers sample the gradient grids
    bilinearly.
    """
    cx, cy = float(center[0]), float(center[1])
    h, w = grad.shape
    if not (0 <= cx <= w - 1 and 0 <= cy <= h - 1):
        raise DimensionError(f"center ({cx}, {cy}) outside {w}x{h} gradient field")
    r = params.window_radius
    offs = np.arange(-r, r + 1, dtype=np.float64)
    oy, ox = np.meshgrid(offs, offs, indexing="ij")
    wts = params.window_weights()
    ix = bilinear_many(grad.ix, cx + ox, cy + oy)
    iy = bilinear_many(grad.iy, cx + ox, cy + oy)
    gxx = float((wts * ix * ix).sum())
    gxy = float((wts * ix * iy).sum())
    gyy = float((wts * iy * iy).sum())
    return StructureTensor.from_sums(gxx, gxy, gyy)


def _refine_level(
    a_vals,
    b_vals,
    grad_x,
    grad_y,
    px,
    py,
    guess_x,
    guess_y,
    active,
    params: LKParams,
):
    """Backend dispatch for one level of batch refinement."""
    return _kernels.lk_level(
        a_vals,
        b_vals,
        grad_x,
        grad_y,
        px,
        py,
        guess_x,
        guess_y,
        active,
        params.window_weights(),
        params.max_iterations,
        params.convergence_threshold,
        params.min_eigenvalue_threshold,
    )


def lk_refine(
    frame_a: ImageFrame,
    frame_b: ImageFrame,
    point,
    guess,
    params: LKParams,
) -> tuple[tuple[float, float], LevelTrace]:
    """Single-level Newton refinement of the residual displacement at ``point``.

    ``guess`` is the incoming displacement prediction; the return value is
    the residual on top of it. Raises IllConditionedTensorError when the
    windowed gradient tensor fails the eigenvalue gate. Non-convergence is
    not an error; the trace records the iteration count and last step norm.
    """
    cx, cy = float(point[0]), float(point[1])
    h, w = frame_a.shape
    if not (0 <= cx <= w - 1 and 0 <= cy <= h - 1):
        raise DimensionError(f"point ({cx}, {cy}) outside {w}x{h} frame")
    grad = gradient(frame_a)
    dx, dy, ok, iters, last = _refine_level(
        frame_a.values,
        frame_b.values,
        grad.ix,
        grad.iy,
        np.array([cx]),
        np.array([cy]),
        np.array([float(guess[0])]),
        np.array([float(guess[1])]),
        np.array([True]),
        params,
    )
    if not ok[0]:
        tensor = structure_tensor(grad, point, params)
        raise IllConditionedTensorError(
            f"gradient tensor at ({cx}, {cy}) has min eigenvalue "
            f"{tensor.min_eigenvalue:.3e} < {params.min_eigenvalue_threshold:.3e}"
        )
    trace = LevelTrace(
        level=0,
        guess=(float(guess[0]), float(guess[1])),
        residual=(float(dx[0]), float(dy[0])),
        iterations=int(iters[0]),
        final_step=float(last[0]),
    )
    return (float(dx[0]), float(dy[0])), trace


def track_point(
    pyr_a: Pyramid,
    pyr_b: Pyramid,
    point,
    params: LKParams,
) -> tuple[tuple[float, float], IterationTrace]:
    """Track one full-resolution point coarse-to-fine through the pyramids.

    The point's coordinates at level L are point / 2**L; the coarsest
    level starts from a zero guess and each finer level doubles the
    accumulated displacement. Raises IllConditionedTensorError if the gate
    fails at any level.
    """
    if pyr_a.depth != pyr_b.depth:
        raise DimensionError("pyramids must have the same depth")
    for la, lb in zip(pyr_a.levels, pyr_b.levels):
        if la.shape != lb.shape:
            raise DimensionError("pyramid levels must have matching dimensions")
    x0, y0 = float(point[0]), float(point[1])
    h, w = pyr_a.levels[0].shape
    if not (0 <= x0 <= w - 1 and 0 <= y0 <= h - 1):
        raise DimensionError(f"point ({x0}, {y0}) outside {w}x{h} frame")

    gx, gy = 0.0, 0.0
    records = []
    for level in range(pyr_a.depth - 1, -1, -1):
        a = pyr_a.levels[level]
        b = pyr_b.levels[level]
        grad = gradient(a)
        scale = float(1 << level)
        dx, dy, ok, iters, last = _refine_level(
            a.values,
            b.values,
            grad.ix,
            grad.iy,
            np.array([x0 / scale]),
            np.array([y0 / scale]),
            np.array([gx]),
            np.array([gy]),
            np.array([True]),
            params,
        )
        if not ok[0]:
            raise IllConditionedTensorError(
                f"gradient tensor gate failed at level {level} for point ({x0}, {y0})"
            )
        records.append(
            LevelTrace(
                level=level,
                guess=(gx, gy),
                residual=(float(dx[0]), float(dy[0])),
                iterations=int(iters[0]),
                final_step=float(last[0]),
            )
        )
        if level > 0:
            gx = 2.0 * (gx + float(dx[0]))
            gy = 2.0 * (gy + float(dy[0]))
        else:
            gx = gx + float(dx[0])
            gy = gy + float(dy[0])
    return (gx, gy), IterationTrace(levels=tuple(records))


def dense_flow(
    frame_a: ImageFrame,
    frame_b: ImageFrame,
    params: LKParams,
    workers: int | None = None,
) -> tuple[FlowField, DenseFlowStats]:
    """Coarse-to-fine flow at every pixel of ``frame_a``.

    Pixels whose gradient tensor fails the eigenvalue gate at any level
    are marked invalid (their u, v stay 0). The result is bit-identical
    for any ``workers`` count: pixel solves are independent and each
    output element has exactly one writer.
    """
    if frame_a.shape != frame_b.shape:
        raise DimensionError(
            f"frame dimensions differ: {frame_a.shape} vs {frame_b.shape}"
        )
    pyr_a = build_pyramid(frame_a, params.pyramid_depth)
    pyr_b = build_pyramid(frame_b, params.pyramid_depth)
    depth = pyr_a.depth
    h, w = frame_a.shape
    n = h * w
    ys, xs = np.mgrid[0:h, 0:w]
    px0 = xs.ravel().astype(np.float64)
    py0 = ys.ravel().astype(np.float64)

    gx = np.zeros(n)
    gy = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    level_stats = []
    u = np.zeros(n)
    v = np.zeros(n)

    with _kernels.worker_threads(workers):
        for level in range(depth - 1, -1, -1):
            a = pyr_a.levels[level]
            b = pyr_b.levels[level]
            grad = gradient(a)
            scale = float(1 << level)
            dx, dy, ok, iters, last = _refine_level(
                a.values,
                b.values,
                grad.ix,
                grad.iy,
                px0 / scale,
                py0 / scale,
                gx,
                gy,
                alive,
                params,
            )
            gated = int(alive.sum() - ok.sum())
            alive &= ok
            n_alive = int(alive.sum())
            level_stats.append(
                LevelStats(
                    level=level,
                    mean_iterations=float(iters[alive].mean()) if n_alive else 0.0,
                    converged_fraction=(
                        float((last[alive] < params.convergence_threshold).mean())
                        if n_alive
                        else 0.0
                    ),
                    gated_pixels=gated,
                )
            )
            if level > 0:
                gx = 2.0 * (gx + dx)
                gy = 2.0 * (gy + dy)
            else:
                u = gx + dx
                v = gy + dy

    u[~alive] = 0.0
    v[~alive] = 0.0
    flow = FlowField(u=u.reshape(h, w), v=v.reshape(h, w), valid=alive.reshape(h, w))
    stats = DenseFlowStats(
        levels=tuple(level_stats), valid_fraction=float(alive.mean())
    )
    return flow, stats
