import numpy as np
import pytest

from pivflow import _kernels
from pivflow.errors import DimensionError, IllConditionedTensorError
from pivflow.image_core import ImageFrame, build_pyramid, gradient
from pivflow.lk import (
    LKParams,
    combine_level_residuals,
    dense_flow,
    lk_refine,
    structure_tensor,
    track_point,
)


def speckle_pair(shift, size=128, sigma=2.0, n=400, seed=42):
    """Textured frame plus the same scene rendered after a rigid shift."""
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-6, size + 5, n)
    ys = rng.uniform(-6, size + 5, n)
    a = np.clip(_kernels.render_particles(xs, ys, sigma, size, size), 0, 1)
    b = np.clip(
        _kernels.render_particles(xs + shift[0], ys + shift[1], sigma, size, size), 0, 1
    )
    return ImageFrame(a), ImageFrame(b)


def periodic_frame(size=64, period=8.0):
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    values = 0.5 + 0.25 * np.sin(2 * np.pi * xs / period) + 0.25 * np.sin(
        2 * np.pi * ys / period
    )
    return ImageFrame(values)


def ssd_integer_search(a, b, point, radius, search):
    """Exhaustive integer-displacement SSD oracle around ``point``."""
    x, y = point
    tpl = a.values[y - radius : y + radius + 1, x - radius : x + radius + 1]
    best = None
    best_d = None
    for dv in range(-search, search + 1):
        for du in range(-search, search + 1):
            patch = b.values[
                y + dv - radius : y + dv + radius + 1,
                x + du - radius : x + du + radius + 1,
            ]
            ssd = float(((tpl - patch) ** 2).sum())
            if best is None or ssd < best:
                best = ssd
                best_d = (du, dv)
    return best_d


class TestLKParams:
    def test_defaults_valid(self):
        params = LKParams()
        assert params.window_radius == 7
        assert params.pyramid_depth == 3

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"window_radius": 0},
            {"weight_mode": "box"},
            {"pyramid_depth": 0},
            {"max_iterations": 0},
            {"convergence_threshold": 0.0},
            {"min_eigenvalue_threshold": -1.0},
        ],
    )
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ValueError):
            LKParams(**kwargs)

    def test_gaussian_weights_normalized(self):
        w = LKParams(weight_mode="gaussian", window_radius=3).window_weights()
        assert w.shape == (7, 7)
        assert w.sum() == pytest.approx(1.0)
        assert w[3, 3] == w.max()

    def test_uniform_weights_all_one(self):
        w = LKParams(weight_mode="uniform", window_radius=2).window_weights()
        np.testing.assert_array_equal(w, np.ones((5, 5)))


class TestStructureTensor:
    def test_constant_frame_zero(self):
        grad = gradient(ImageFrame(np.full((16, 16), 0.5)))
        tensor = structure_tensor(grad, (8, 8), LKParams(window_radius=2))
        assert tensor.gxx == 0.0 and tensor.gxy == 0.0 and tensor.gyy == 0.0
        assert tensor.min_eigenvalue == 0.0

    def test_horizontal_ramp(self):
        w = 17
        ramp = np.tile(np.arange(w) / (w - 1), (w, 1))
        grad = gradient(ImageFrame(ramp))
        tensor = structure_tensor(grad, (8, 8), LKParams(window_radius=1))
        assert tensor.gxx == pytest.approx(9.0 / (w - 1) ** 2, rel=1e-12)
        assert tensor.gxy == pytest.approx(0.0, abs=1e-15)
        assert tensor.gyy == pytest.approx(0.0, abs=1e-15)

    def test_textured_patch_matches_brute_force(self):
        rng = np.random.default_rng(31)
        frame = ImageFrame(rng.uniform(0, 1, (11, 11)))
        grad = gradient(frame)
        params = LKParams(window_radius=2, weight_mode="gaussian")
        weights = params.window_weights()
        cx, cy = 5, 5
        gxx = gxy = gyy = 0.0
        for wy in range(-2, 3):
            for wx in range(-2, 3):
                w = weights[wy + 2, wx + 2]
                ix = grad.ix[cy + wy, cx + wx]
                iy = grad.iy[cy + wy, cx + wx]
                gxx += w * ix * ix
                gxy += w * ix * iy
                gyy += w * iy * iy
        tensor = structure_tensor(grad, (cx, cy), params)
        assert tensor.gxx == pytest.approx(gxx, rel=1e-12)
        assert tensor.gxy == pytest.approx(gxy, rel=1e-12)
        assert tensor.gyy == pytest.approx(gyy, rel=1e-12)

    def test_psd_everywhere_on_speckle(self):
        frame, _ = speckle_pair((0, 0), size=48, n=80, seed=5)
        grad = gradient(frame)
        params = LKParams(window_radius=3)
        for y in range(0, 48, 5):
            for x in range(0, 48, 5):
                t = structure_tensor(grad, (x, y), params)
                assert t.min_eigenvalue >= -1e-9
                assert t.gxx >= 0 and t.gyy >= 0
                assert t.gxx * t.gyy - t.gxy**2 >= -1e-9


class TestLKRefine:
    def test_identical_frames_zero_one_iteration(self):
        frame, _ = speckle_pair((0, 0), size=64, n=150, seed=7)
        (dx, dy), trace = lk_refine(frame, frame, (32, 32), (0.0, 0.0), LKParams())
        assert dx == 0.0 and dy == 0.0
        assert trace.iterations == 1

    def test_integer_shift_recovered(self):
        frame = periodic_frame(size=64, period=8.0)
        shifted = ImageFrame(np.roll(frame.values, 1, axis=1))
        params = LKParams(window_radius=3, pyramid_depth=1)
        (dx, dy), _ = lk_refine(frame, shifted, (32, 32), (0.0, 0.0), params)
        assert abs(dx - 1.0) < 0.1
        assert abs(dy - 0.0) < 0.1
        assert ssd_integer_search(frame, shifted, (32, 32), 3, 3) == (1, 0)

    def test_perfect_guess_leaves_zero_residual(self):
        frame = periodic_frame(size=64, period=8.0)
        shifted = ImageFrame(np.roll(frame.values, 1, axis=1))
        params = LKParams(window_radius=3, pyramid_depth=1)
        (dx, dy), _ = lk_refine(frame, shifted, (32, 32), (1.0, 0.0), params)
        assert abs(dx) < 0.02 and abs(dy) < 0.02

    def test_flat_window_gated(self):
        frame = ImageFrame(np.full((32, 32), 0.5))
        with pytest.raises(IllConditionedTensorError):
            lk_refine(frame, frame, (16, 16), (0.0, 0.0), LKParams(window_radius=2))

    def test_pure_ramp_gated_by_aperture(self):
        # a 1-D ramp has a rank-1 tensor: the gate must refuse it
        w = 64
        ramp = np.tile(np.arange(w) / (w - 1), (w, 1))
        frame = ImageFrame(ramp)
        with pytest.raises(IllConditionedTensorError):
            lk_refine(frame, frame, (32, 32), (0.0, 0.0), LKParams(window_radius=3))

    def test_single_newton_step_on_bilinear_patch(self):
        # I = a*x + b*y + c*x*y sampled exactly; axis-aligned shifts solve
        # in one step because the quadratic model is exact
        size = 48
        ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
        a_coef, b_coef, c_coef = 0.004, 0.003, 0.0002
        surface = 0.1 + a_coef * xs + b_coef * ys + c_coef * xs * ys
        shift = (1.5, 0.0)
        shifted = (
            0.1
            + a_coef * (xs - shift[0])
            + b_coef * (ys - shift[1])
            + c_coef * (xs - shift[0]) * (ys - shift[1])
        )
        frame_a = ImageFrame(surface)
        frame_b = ImageFrame(shifted)
        params = LKParams(
            window_radius=4,
            pyramid_depth=1,
            convergence_threshold=1e-8,
            min_eigenvalue_threshold=0.0,
        )
        (dx, dy), trace = lk_refine(frame_a, frame_b, (24, 24), (0.0, 0.0), params)
        assert dx == pytest.approx(shift[0], abs=1e-9)
        assert dy == pytest.approx(shift[1], abs=1e-9)
        assert trace.iterations <= 2  # step 1 solves it; step 2 confirms

    def test_residual_split_consistency(self):
        frame_a, frame_b = speckle_pair((1.7, 0.6), size=96, n=300, seed=11)
        params = LKParams(window_radius=5, pyramid_depth=1)
        (d0x, d0y), _ = lk_refine(frame_a, frame_b, (48, 48), (0.0, 0.0), params)
        guess = (1.0, 0.5)
        (d1x, d1y), _ = lk_refine(frame_a, frame_b, (48, 48), guess, params)
        assert d1x + guess[0] == pytest.approx(d0x, abs=0.05)
        assert d1y + guess[1] == pytest.approx(d0y, abs=0.05)


class TestTrackPoint:
    def test_residual_combination_formula(self):
        # d = sum(2^L * d_L): coarse residuals contribute doubled per level
        total = combine_level_residuals([(0.25, 0.0), (0.5, 0.0), (1.0, 0.0)])
        assert total == (0.25 + 2 * 0.5 + 4 * 1.0, 0.0)
        assert total[0] == pytest.approx(5.25)

    def test_identical_pyramids_zero(self):
        frame, _ = speckle_pair((0, 0), size=64, n=150, seed=13)
        pyr = build_pyramid(frame, 3)
        total, trace = track_point(pyr, pyr, (32, 32), LKParams())
        assert total == (0.0, 0.0)
        for rec in trace.levels:
            assert rec.residual == (0.0, 0.0)

    def test_large_shift_needs_pyramid(self):
        frame_a, frame_b = speckle_pair((16.0, 0.0), size=400, n=3200, seed=17, sigma=3.0)
        deep = LKParams(pyramid_depth=4, window_radius=7)
        total, _ = track_point(
            build_pyramid(frame_a, 4), build_pyramid(frame_b, 4), (200, 200), deep
        )
        assert np.hypot(total[0] - 16.0, total[1]) < 0.5
        shallow = LKParams(pyramid_depth=1, window_radius=7)
        total1, _ = track_point(
            build_pyramid(frame_a, 1), build_pyramid(frame_b, 1), (200, 200), shallow
        )
        assert np.hypot(total1[0] - 16.0, total1[1]) >= 0.5

    def test_total_equals_level_sum(self):
        frame_a, frame_b = speckle_pair((3.0, 2.0), size=128, n=500, seed=19)
        params = LKParams(pyramid_depth=3, window_radius=7)
        total, trace = track_point(
            build_pyramid(frame_a, 3), build_pyramid(frame_b, 3), (64, 64), params
        )
        recombined = trace.total_from_levels()
        assert total[0] == pytest.approx(recombined[0], abs=1e-12)
        assert total[1] == pytest.approx(recombined[1], abs=1e-12)

    def test_mismatched_depths_rejected(self):
        frame, _ = speckle_pair((0, 0), size=64, n=100, seed=23)
        with pytest.raises(DimensionError):
            track_point(
                build_pyramid(frame, 2), build_pyramid(frame, 3), (8, 8), LKParams()
            )


class TestDenseFlow:
    def test_identical_frames(self):
        frame, _ = speckle_pair((0, 0), size=64, n=150, seed=29)
        flow, stats = dense_flow(frame, frame, LKParams(pyramid_depth=2))
        assert np.all(flow.u[flow.valid] == 0.0)
        assert np.all(flow.v[flow.valid] == 0.0)
        assert stats.valid_fraction > 0.9

    def test_translation_recovered(self):
        frame_a, frame_b = speckle_pair((3.0, 2.0), size=128, n=800, seed=31)
        flow, _ = dense_flow(frame_a, frame_b, LKParams(pyramid_depth=3))
        inner = (slice(12, -12), slice(12, -12))
        mask = flow.valid[inner]
        epe = np.hypot(flow.u[inner][mask] - 3.0, flow.v[inner][mask] - 2.0)
        assert (epe < 0.2).mean() >= 0.95
        # oracle: exhaustive block matching confirms the integer displacement
        for p in ((40, 40), (64, 64), (90, 77)):
            assert ssd_integer_search(frame_a, frame_b, p, 7, 6) == (3, 2)

    def test_dimension_mismatch_rejected(self):
        a, _ = speckle_pair((0, 0), size=64, n=100, seed=37)
        b, _ = speckle_pair((0, 0), size=32, n=50, seed=37)
        with pytest.raises(DimensionError):
            dense_flow(a, b, LKParams())

    def test_zoom_equivariance(self):
        from pivflow.image_core import downsample

        frame_a, frame_b = speckle_pair((4.0, 0.0), size=160, n=1400, seed=41, sigma=3.0)
        # the scene clips in places; gate out the flat plateaus
        params = LKParams(
            pyramid_depth=3, window_radius=7, min_eigenvalue_threshold=0.05
        )
        flow_full, _ = dense_flow(frame_a, frame_b, params)
        flow_half, _ = dense_flow(downsample(frame_a), downsample(frame_b), params)
        inner_full = (slice(20, -20), slice(20, -20))
        inner_half = (slice(10, -10), slice(10, -10))
        u_full = flow_full.u[inner_full][flow_full.valid[inner_full]].mean()
        u_half = flow_half.u[inner_half][flow_half.valid[inner_half]].mean()
        assert u_half == pytest.approx(u_full / 2.0, rel=0.10)

    def test_worker_count_bit_identical(self):
        frame_a, frame_b = speckle_pair((1.0, 2.0), size=96, n=300, seed=43)
        params = LKParams(pyramid_depth=2)
        fields = [
            dense_flow(frame_a, frame_b, params, workers=w)[0] for w in (1, 4, 8)
        ]
        for other in fields[1:]:
            np.testing.assert_array_equal(fields[0].u, other.u)
            np.testing.assert_array_equal(fields[0].v, other.v)
            np.testing.assert_array_equal(fields[0].valid, other.valid)


class TestBackendParity:
    def test_numba_and_numpy_agree(self):
        frame_a, frame_b = speckle_pair((2.0, 1.0), size=64, n=200, seed=47)
        grad = gradient(frame_a)
        params = LKParams(pyramid_depth=1, window_radius=5)
        n = 40
        rng = np.random.default_rng(51)
        px = rng.uniform(8, 55, n)
        py = rng.uniform(8, 55, n)
        guesses = rng.uniform(-0.5, 0.5, (2, n))
        active = np.ones(n, dtype=bool)
        args = (
            frame_a.values,
            frame_b.values,
            grad.ix,
            grad.iy,
            px,
            py,
            guesses[0],
            guesses[1],
            active,
            params.window_weights(),
            params.max_iterations,
            params.convergence_threshold,
            params.min_eigenvalue_threshold,
        )
        dx_np, dy_np, ok_np, it_np, last_np = _kernels.lk_level_numpy(*args)
        if not _kernels.NUMBA_ENABLED:
            pytest.skip("numba backend not active")
        dx_nb, dy_nb, ok_nb, it_nb, last_nb = _kernels.lk_level_numba(*args)
        np.testing.assert_array_equal(ok_np, ok_nb)
        np.testing.assert_array_equal(it_np, it_nb)
        np.testing.assert_allclose(dx_np, dx_nb, atol=1e-9)
        np.testing.assert_allclose(dy_np, dy_nb, atol=1e-9)
