"""Hot numeric kernels with two interchangeable backends.

Every kernel here exists twice: a numba ``@njit`` version and a pure-numpy
fallback with identical semantics. The active backend is chosen once at
import from the ``PIVFLOW_BACKEND`` environment variable (``numba`` |
``numpy``, default ``numba``; if numba is not importable the numpy path is
used). Both implementations stay importable so tests and the backend
benchmark can compare them directly.

Determinism contract: for a fixed backend, results are bit-identical
across worker counts — every output element is written by exactly one
worker and there are no cross-worker reductions.
"""

from __future__ import annotations

import contextlib
import math
import os

import numpy as np

from .image_core import bilinear_many

BACKEND_ENV = "PIVFLOW_BACKEND"

# Allow worker counts beyond the physical core count so the worker-count
# determinism contract can be exercised anywhere; must happen before the
# first numba import. The workqueue layer avoids TBB/OpenMP version probing.
os.environ.setdefault("NUMBA_NUM_THREADS", str(max(8, os.cpu_count() or 1)))
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")


def _select_backend() -> str:
    choice = os.environ.get(BACKEND_ENV, "numba").strip().lower()
    if choice not in ("numba", "numpy"):
        raise RuntimeError(
            f"{BACKEND_ENV} must be 'numba' or 'numpy', got {choice!r}"
        )
    if choice == "numba":
        try:
            import numba  # noqa: F401
        except ImportError:
            return "numpy"
    return choice


BACKEND = _select_backend()
NUMBA_ENABLED = BACKEND == "numba"


@contextlib.contextmanager
def worker_threads(workers: int | None):
    """Pin the numba thread count for the enclosed computation.

    No-op for the numpy backend (its kernels are single-threaded vector
    code) or when ``workers`` is None.
    """
    if workers is not None and workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    if not NUMBA_ENABLED or workers is None:
        yield
        return
    import numba

    limit = numba.config.NUMBA_NUM_THREADS
    previous = numba.get_num_threads()
    numba.set_num_threads(min(workers, limit))
    try:
        yield
    finally:
        numba.set_num_threads(previous)


# ---------------------------------------------------------------------------
# Pyramidal Lucas-Kanade: refine a batch of points at one pyramid level.
#
# For each active point i at level coordinates (px, py) with incoming guess
# (gx, gy): accumulate the weighted gradient-product tensor over the window,
# gate on its smaller eigenvalue, then iterate Newton steps on the warped
# frame-B mismatch until the step norm drops below the threshold or the
# iteration budget runs out. The tensor stays fixed across iterations.
# ---------------------------------------------------------------------------


def lk_level_numpy(
    a,
    b,
    grad_x,
    grad_y,
    px,
    py,
    guess_x,
    guess_y,
    active,
    weights,
    max_iterations,
    convergence_threshold,
    min_eigenvalue,
    chunk=2048,
):
    """Vectorized per-level refinement; lockstep iterations with an active set.

    Returns (dx, dy, ok, iterations, final_step) arrays over all points.
    Skipped (inactive) points come back with ok=False, zero displacement.
    """
    n = px.shape[0]
    radius = (weights.shape[0] - 1) // 2
    offs = np.arange(-radius, radius + 1, dtype=np.float64)
    oy, ox = np.meshgrid(offs, offs, indexing="ij")
    ox = ox.ravel()[:, None]
    oy = oy.ravel()[:, None]
    wf = weights.ravel()[:, None]

    dx = np.zeros(n)
    dy = np.zeros(n)
    ok = np.zeros(n, dtype=bool)
    iterations = np.zeros(n, dtype=np.int32)
    final_step = np.full(n, np.inf)

    for start in range(0, n, chunk):
        sel = np.arange(start, min(start + chunk, n))
        sel = sel[active[sel]]
        if sel.size == 0:
            continue
        ax = px[sel][None, :] + ox
        ay = py[sel][None, :] + oy
        iw_x = bilinear_many(grad_x, ax, ay)
        iw_y = bilinear_many(grad_y, ax, ay)
        aw = bilinear_many(a, ax, ay)

        gxx = (wf * iw_x * iw_x).sum(axis=0)
        gxy = (wf * iw_x * iw_y).sum(axis=0)
        gyy = (wf * iw_y * iw_y).sum(axis=0)
        trace = gxx + gyy
        split = np.sqrt((gxx - gyy) ** 2 + 4.0 * gxy * gxy)
        lam_min = 0.5 * (trace - split)
        det = gxx * gyy - gxy * gxy
        good = (lam_min >= min_eigenvalue) & (det > 0.0)
        ok[sel] = good

        live = np.nonzero(good)[0]
        zx = np.zeros(sel.size)
        zy = np.zeros(sel.size)
        for k in range(1, max_iterations + 1):
            if live.size == 0:
                break
            bx_coords = ax[:, live] + (guess_x[sel][live] + zx[live])[None, :]
            by_coords = ay[:, live] + (guess_y[sel][live] + zy[live])[None, :]
            bw = bilinear_many(b, bx_coords, by_coords)
            diff = aw[:, live] - bw
            bx = (wf * diff * iw_x[:, live]).sum(axis=0)
            by = (wf * diff * iw_y[:, live]).sum(axis=0)
            lx = (gyy[live] * bx - gxy[live] * by) / det[live]
            ly = (gxx[live] * by - gxy[live] * bx) / det[live]
            zx[live] += lx
            zy[live] += ly
            step = np.sqrt(lx * lx + ly * ly)
            iterations[sel[live]] = k
            final_step[sel[live]] = step
            live = live[step >= convergence_threshold]
        dx[sel] = zx
        dy[sel] = zy
    return dx, dy, ok, iterations, final_step


def ncc_surfaces_numpy(a, b, centers_x, centers_y, t_lo, t_hi, search_radius):
    """Direct-sum zero-normalized cross-correlation score grids.

    For each window center, scores every integer displacement within
    ``search_radius``. Flat templates yield an all-NaN grid (the caller
    decides whether that is an error); flat candidate patches score 0.
    """
    n = centers_x.shape[0]
    size = 2 * search_radius + 1
    out = np.empty((n, size, size))
    for i in range(n):
        cy = centers_y[i]
        cx = centers_x[i]
        tpl = a[cy - t_lo : cy + t_hi + 1, cx - t_lo : cx + t_hi + 1]
        tpl_mean = tpl.mean()
        tzm = tpl - tpl_mean
        tpl_var = (tzm * tzm).sum()
        if tpl_var <= 0.0:
            out[i] = np.nan
            continue
        for dv in range(-search_radius, search_radius + 1):
            for du in range(-search_radius, search_radius + 1):
                patch = b[
                    cy - t_lo + dv : cy + t_hi + 1 + dv,
                    cx - t_lo + du : cx + t_hi + 1 + du,
                ]
                pm = patch.mean()
                pzm = patch - pm
                pvar = (pzm * pzm).sum()
                if pvar <= 0.0:
                    score = 0.0
                else:
                    score = (tzm * pzm).sum() / math.sqrt(tpl_var * pvar)
                out[i, dv + search_radius, du + search_radius] = score
    np.clip(out, -1.0, 1.0, out=out)
    return out


def render_particles_numpy(xs, ys, sigma, width, height):
    """Sum of unit-amplitude Gaussian blobs truncated at radius 3*sigma.

    Returns the unclamped accumulation; the caller clamps to [0, 1].
    Particles are stamped sequentially in input order, so accumulation is
    deterministic.
    """
    img = np.zeros((height, width))
    rad = 3.0 * sigma
    inv = 1.0 / (2.0 * sigma * sigma)
    rad2 = rad * rad
    for i in range(xs.shape[0]):
        x0 = max(int(math.ceil(xs[i] - rad)), 0)
        x1 = min(int(math.floor(xs[i] + rad)), width - 1)
        y0 = max(int(math.ceil(ys[i] - rad)), 0)
        y1 = min(int(math.floor(ys[i] + rad)), height - 1)
        if x1 < x0 or y1 < y0:
            continue
        gy, gx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
        r2 = (gx - xs[i]) ** 2 + (gy - ys[i]) ** 2
        blob = np.where(r2 <= rad2, np.exp(-r2 * inv), 0.0)
        img[y0 : y1 + 1, x0 : x1 + 1] += blob
    return img


if NUMBA_ENABLED:
    from numba import njit, prange

    @njit(cache=True)
    def _bilin(img, x, y):
        h, w = img.shape
        if x < 0.0:
            x = 0.0
        elif x > w - 1.0:
            x = w - 1.0
        if y < 0.0:
            y = 0.0
        elif y > h - 1.0:
            y = h - 1.0
        x0 = int(x)
        y0 = int(y)
        if x0 > w - 2:
            x0 = w - 2
        if y0 > h - 2:
            y0 = h - 2
        fx = x - x0
        fy = y - y0
        v00 = img[y0, x0]
        v01 = img[y0, x0 + 1]
        v10 = img[y0 + 1, x0]
        v11 = img[y0 + 1, x0 + 1]
        return (
            (1.0 - fx) * (1.0 - fy) * v00
            + fx * (1.0 - fy) * v01
            + (1.0 - fx) * fy * v10
            + fx * fy * v11
        )

    @njit(parallel=True, cache=True)
    def _lk_level_numba(
        a,
        b,
        grad_x,
        grad_y,
        px,
        py,
        guess_x,
        guess_y,
        active,
        weights,
        max_iterations,
        convergence_threshold,
        min_eigenvalue,
        dx,
        dy,
        ok,
        iterations,
        final_step,
    ):
        n = px.shape[0]
        radius = (weights.shape[0] - 1) // 2
        size = weights.shape[0]
        for i in prange(n):
            if not active[i]:
                continue
            xc = px[i]
            yc = py[i]
            aw = np.empty((size, size))
            iw_x = np.empty((size, size))
            iw_y = np.empty((size, size))
            gxx = 0.0
            gxy = 0.0
            gyy = 0.0
            for wy in range(size):
                ty = yc + (wy - radius)
                for wx in range(size):
                    tx = xc + (wx - radius)
                    gx_v = _bilin(grad_x, tx, ty)
                    gy_v = _bilin(grad_y, tx, ty)
                    aw[wy, wx] = _bilin(a, tx, ty)
                    iw_x[wy, wx] = gx_v
                    iw_y[wy, wx] = gy_v
                    wgt = weights[wy, wx]
                    gxx += wgt * gx_v * gx_v
                    gxy += wgt * gx_v * gy_v
                    gyy += wgt * gy_v * gy_v
            trace = gxx + gyy
            split = math.sqrt((gxx - gyy) ** 2 + 4.0 * gxy * gxy)
            lam_min = 0.5 * (trace - split)
            det = gxx * gyy - gxy * gxy
            if lam_min < min_eigenvalue or det <= 0.0:
                continue
            ok[i] = True
            zx = 0.0
            zy = 0.0
            for k in range(1, max_iterations + 1):
                bx = 0.0
                by = 0.0
                for wy in range(size):
                    ty = yc + (wy - radius)
                    for wx in range(size):
                        tx = xc + (wx - radius)
                        bv = _bilin(b, tx + guess_x[i] + zx, ty + guess_y[i] + zy)
                        diff = aw[wy, wx] - bv
                        wgt = weights[wy, wx]
                        bx += wgt * diff * iw_x[wy, wx]
                        by += wgt * diff * iw_y[wy, wx]
                lx = (gyy * bx - gxy * by) / det
                ly = (gxx * by - gxy * bx) / det
                zx += lx
                zy += ly
                step = math.sqrt(lx * lx + ly * ly)
                iterations[i] = k
                final_step[i] = step
                if step < convergence_threshold:
                    break
            dx[i] = zx
            dy[i] = zy

    def lk_level_numba(
        a,
        b,
        grad_x,
        grad_y,
        px,
        py,
        guess_x,
        guess_y,
        active,
        weights,
        max_iterations,
        convergence_threshold,
        min_eigenvalue,
    ):
        n = px.shape[0]
        dx = np.zeros(n)
        dy = np.zeros(n)
        ok = np.zeros(n, dtype=np.bool_)
        iterations = np.zeros(n, dtype=np.int32)
        final_step = np.full(n, np.inf)
        _lk_level_numba(
            a,
            b,
            grad_x,
            grad_y,
            px,
            py,
            guess_x,
            guess_y,
            active,
            weights,
            int(max_iterations),
            float(convergence_threshold),
            float(min_eigenvalue),
            dx,
            dy,
            ok,
            iterations,
            final_step,
        )
        return dx, dy, ok, iterations, final_step

    @njit(parallel=True, cache=True)
    def _ncc_surfaces_numba(a, b, centers_x, centers_y, t_lo, t_hi, search_radius, out):
        n = centers_x.shape[0]
        tsize = t_lo + t_hi + 1
        for i in prange(n):
            cy = centers_y[i]
            cx = centers_x[i]
            tpl_mean = 0.0
            for ty in range(tsize):
                for tx in range(tsize):
                    tpl_mean += a[cy - t_lo + ty, cx - t_lo + tx]
            tpl_mean /= tsize * tsize
            tpl_var = 0.0
            for ty in range(tsize):
                for tx in range(tsize):
                    d = a[cy - t_lo + ty, cx - t_lo + tx] - tpl_mean
                    tpl_var += d * d
            if tpl_var <= 0.0:
                for dv in range(2 * search_radius + 1):
                    for du in range(2 * search_radius + 1):
                        out[i, dv, du] = np.nan
                continue
            for dv in range(-search_radius, search_radius + 1):
                for du in range(-search_radius, search_radius + 1):
                    pm = 0.0
                    for ty in range(tsize):
                        for tx in range(tsize):
                            pm += b[cy - t_lo + ty + dv, cx - t_lo + tx + du]
                    pm /= tsize * tsize
                    pvar = 0.0
                    num = 0.0
                    for ty in range(tsize):
                        for tx in range(tsize):
                            pd = b[cy - t_lo + ty + dv, cx - t_lo + tx + du] - pm
                            td = a[cy - t_lo + ty, cx - t_lo + tx] - tpl_mean
                            pvar += pd * pd
                            num += td * pd
                    if pvar <= 0.0:
                        score = 0.0
                    else:
                        score = num / math.sqrt(tpl_var * pvar)
                    if score > 1.0:
                        score = 1.0
                    elif score < -1.0:
                        score = -1.0
                    out[i, dv + search_radius, du + search_radius] = score

    def ncc_surfaces_numba(a, b, centers_x, centers_y, t_lo, t_hi, search_radius):
        n = centers_x.shape[0]
        size = 2 * search_radius + 1
        out = np.empty((n, size, size))
        _ncc_surfaces_numba(
            a, b, centers_x, centers_y, int(t_lo), int(t_hi), int(search_radius), out
        )
        return out

    @njit(cache=True)
    def _render_particles_numba(xs, ys, sigma, width, height):
        img = np.zeros((height, width))
        rad = 3.0 * sigma
        inv = 1.0 / (2.0 * sigma * sigma)
        rad2 = rad * rad
        for i in range(xs.shape[0]):
            x0 = max(int(math.ceil(xs[i] - rad)), 0)
            x1 = min(int(math.floor(xs[i] + rad)), width - 1)
            y0 = max(int(math.ceil(ys[i] - rad)), 0)
            y1 = min(int(math.floor(ys[i] + rad)), height - 1)
            for yy in range(y0, y1 + 1):
                dy = yy - ys[i]
                for xx in range(x0, x1 + 1):
                    dxp = xx - xs[i]
                    r2 = dxp * dxp + dy * dy
                    if r2 <= rad2:
                        img[yy, xx] += math.exp(-r2 * inv)
        return img

    def render_particles_numba(xs, ys, sigma, width, height):
        return _render_particles_numba(xs, ys, float(sigma), int(width), int(height))

    lk_level = lk_level_numba
    ncc_surfaces_direct = ncc_surfaces_numba
    render_particles = render_particles_numba
else:
    lk_level = lk_level_numpy
    ncc_surfaces_direct = ncc_surfaces_numpy
    render_particles = render_particles_numpy
