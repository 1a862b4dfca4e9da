import numpy as np
import pytest

from pivflow import _kernels
from pivflow.baselines import (
    CCParams,
    HSParams,
    cc_dense_flow,
    horn_schunck,
    hs_derivatives,
    hs_energy,
    ncc_displacement,
    _neighbor_average,
)
from pivflow.errors import (
    DimensionError,
    WindowOutOfBoundsError,
    ZeroVarianceError,
)
from pivflow.image_core import ImageFrame


def speckle_pair(shift, size=160, sigma=2.0, n=900, seed=3):
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-6, size + 5, n)
    ys = rng.uniform(-6, size + 5, n)
    a = np.clip(_kernels.render_particles(xs, ys, sigma, size, size), 0, 1)
    b = np.clip(
        _kernels.render_particles(xs + shift[0], ys + shift[1], sigma, size, size), 0, 1
    )
    return ImageFrame(a), ImageFrame(b)


def periodic_pair(shift, size=160, period=8.0):
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    def grating(x, y):
        return 0.5 + 0.25 * np.sin(2 * np.pi * x / period) + 0.25 * np.sin(
            2 * np.pi * y / period
        )
    return ImageFrame(grating(xs, ys)), ImageFrame(grating(xs - shift[0], ys - shift[1]))


class TestCCParams:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"template_size": 4},
            {"search_radius": 0},
            {"grid_step": 0},
            {"subpixel_mode": "spline"},
        ],
    )
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ValueError):
            CCParams(**kwargs)


class TestNCCDisplacement:
    def test_self_correlation_peak(self):
        frame, _ = speckle_pair((0, 0))
        params = CCParams(template_size=32, search_radius=4, subpixel_mode="none")
        surface = ncc_displacement(frame, frame, (80, 80), params)
        assert surface.peak == (0.0, 0.0)
        assert surface.peak_value == pytest.approx(1.0, abs=1e-12)

    def test_integer_shift_peak(self):
        frame_a, frame_b = speckle_pair((2.0, 1.0))
        params = CCParams(template_size=32, search_radius=4)
        surface = ncc_displacement(frame_a, frame_b, (80, 80), params)
        assert round(surface.peak[0]) == 2 and round(surface.peak[1]) == 1
        assert surface.peak_value >= 0.99
        # oracle: direct SSD minimum agrees with the correlation peak
        tpl = frame_a.values[64:96, 64:96]
        candidates = {}
        for dv in range(-4, 5):
            for du in range(-4, 5):
                patch = frame_b.values[64 + dv : 96 + dv, 64 + du : 96 + du]
                candidates[(du, dv)] = float(((tpl - patch) ** 2).sum())
        assert min(candidates, key=candidates.get) == (2, 1)

    def test_periodic_texture_is_ambiguous(self):
        frame_a, frame_b = periodic_pair((2.0, 0.0), period=8.0)
        params = CCParams(template_size=32, search_radius=12, subpixel_mode="none")
        surface = ncc_displacement(frame_a, frame_b, (80, 80), params)
        assert surface.secondary_peak_value == pytest.approx(
            surface.peak_value, abs=1e-6
        )
        assert surface.is_ambiguous()

    def test_fft_matches_direct(self):
        frame_a, frame_b = speckle_pair((3.0, -2.0), seed=9)
        params = CCParams(template_size=48, search_radius=6)
        direct = ncc_displacement(frame_a, frame_b, (80, 80), params, engine="direct")
        fft = ncc_displacement(frame_a, frame_b, (80, 80), params, engine="fft")
        np.testing.assert_allclose(direct.scores, fft.scores, atol=1e-6)

    def test_affine_intensity_invariance(self):
        frame_a, frame_b = speckle_pair((1.0, 2.0), seed=13)
        rescaled = ImageFrame(np.clip(0.55 * frame_b.values + 0.2, 0, 1))
        params = CCParams(template_size=32, search_radius=4)
        base = ncc_displacement(frame_a, frame_b, (80, 80), params)
        scaled = ncc_displacement(frame_a, rescaled, (80, 80), params)
        np.testing.assert_allclose(base.scores, scaled.scores, atol=1e-6)

    def test_scores_bounded(self):
        frame_a, frame_b = speckle_pair((2.0, 2.0), seed=17)
        params = CCParams(template_size=32, search_radius=5)
        surface = ncc_displacement(frame_a, frame_b, (80, 80), params)
        assert surface.scores.min() >= -1.0
        assert surface.scores.max() <= 1.0
        assert surface.peak_value >= surface.secondary_peak_value

    def test_flat_template_rejected(self):
        flat = ImageFrame(np.full((128, 128), 0.5))
        params = CCParams(template_size=32, search_radius=4)
        with pytest.raises(ZeroVarianceError):
            ncc_displacement(flat, flat, (64, 64), params)

    def test_window_out_of_bounds(self):
        frame, _ = speckle_pair((0, 0))
        params = CCParams(template_size=32, search_radius=8)
        with pytest.raises(WindowOutOfBoundsError):
            ncc_displacement(frame, frame, (10, 80), params)

    def test_backend_direct_paths_agree(self):
        frame_a, frame_b = speckle_pair((1.0, 1.0), seed=19)
        params = CCParams(template_size=32, search_radius=4)
        numpy_scores = _kernels.ncc_surfaces_numpy(
            frame_a.values,
            frame_b.values,
            np.array([80]),
            np.array([80]),
            params.t_lo,
            params.t_hi,
            params.search_radius,
        )
        active_scores = _kernels.ncc_surfaces_direct(
            frame_a.values,
            frame_b.values,
            np.array([80]),
            np.array([80]),
            params.t_lo,
            params.t_hi,
            params.search_radius,
        )
        np.testing.assert_allclose(numpy_scores, active_scores, atol=1e-10)


class TestCCDenseFlow:
    def test_uniform_translation(self):
        frame_a, frame_b = speckle_pair((3.0, 0.0), size=192, n=1300, seed=21)
        params = CCParams(template_size=32, search_radius=5, grid_step=16)
        flow = cc_dense_flow(frame_a, frame_b, params)
        m = flow.valid
        assert m.any()
        assert np.abs(flow.u[m] - 3.0).max() <= 0.5
        assert np.abs(flow.v[m]).max() <= 0.5

    def test_identical_frames_zero(self):
        frame, _ = speckle_pair((0, 0), size=192, n=1300, seed=23)
        params = CCParams(
            template_size=32, search_radius=5, grid_step=16, subpixel_mode="none"
        )
        flow = cc_dense_flow(frame, frame, params)
        assert np.all(flow.u[flow.valid] == 0.0)
        assert np.all(flow.v[flow.valid] == 0.0)

    def test_dimension_mismatch(self):
        a, _ = speckle_pair((0, 0), size=160)
        b, _ = speckle_pair((0, 0), size=128)
        with pytest.raises(DimensionError):
            cc_dense_flow(a, b, CCParams())

    def test_frame_too_small(self):
        frame = ImageFrame(np.random.default_rng(0).uniform(0, 1, (40, 40)))
        with pytest.raises(DimensionError):
            cc_dense_flow(frame, frame, CCParams(template_size=32, search_radius=8))

    def test_window_vectors_independent_of_order(self):
        # non-overlapping windows: evaluating centers in any order gives
        # the same surfaces, so the dense result is order-free
        frame_a, frame_b = speckle_pair((2.0, 1.0), size=192, n=1300, seed=27)
        params = CCParams(template_size=32, search_radius=4, grid_step=32)
        forward = []
        backward = []
        centers = [(48, 48), (80, 80), (112, 112), (144, 144)]
        for c in centers:
            forward.append(ncc_displacement(frame_a, frame_b, c, params).peak)
        for c in reversed(centers):
            backward.append(ncc_displacement(frame_a, frame_b, c, params).peak)
        assert forward == list(reversed(backward))

    def test_engines_give_same_field(self):
        frame_a, frame_b = speckle_pair((2.0, -1.0), size=192, n=1300, seed=29)
        params = CCParams(template_size=32, search_radius=5, grid_step=16)
        direct = cc_dense_flow(frame_a, frame_b, params, engine="direct")
        fft = cc_dense_flow(frame_a, frame_b, params, engine="fft")
        np.testing.assert_array_equal(direct.valid, fft.valid)
        np.testing.assert_allclose(direct.u, fft.u, atol=1e-5)
        np.testing.assert_allclose(direct.v, fft.v, atol=1e-5)


class TestHornSchunck:
    def test_params_validated(self):
        with pytest.raises(ValueError):
            HSParams(alpha=0.0)
        with pytest.raises(ValueError):
            HSParams(iterations=0)

    def test_identical_frames_stay_zero(self):
        frame, _ = speckle_pair((0, 0), size=96, n=300, seed=31)
        flow = horn_schunck(frame, frame, HSParams(alpha=0.5, iterations=50))
        np.testing.assert_array_equal(flow.u, 0.0)
        np.testing.assert_array_equal(flow.v, 0.0)
        assert flow.valid.all()

    def test_unit_translation_recovered(self):
        frame_a, frame_b = speckle_pair((1.0, 0.0), size=192, n=700, sigma=3.0, seed=33)
        flow = horn_schunck(frame_a, frame_b, HSParams(alpha=0.5, iterations=200))
        inner = (slice(16, -16), slice(16, -16))
        assert flow.u[inner].mean() == pytest.approx(1.0, abs=0.3)
        assert flow.v[inner].mean() == pytest.approx(0.0, abs=0.3)

    def test_energy_monotone_nonincreasing(self):
        frame_a, frame_b = speckle_pair((0.8, 0.4), size=96, n=350, sigma=2.5, seed=37)
        ix, iy, it = hs_derivatives(frame_a, frame_b)
        alpha = 0.5
        u = np.zeros(frame_a.shape)
        v = np.zeros(frame_a.shape)
        previous = hs_energy(u, v, ix, iy, it, alpha)
        denom = alpha * alpha + ix * ix + iy * iy
        for _ in range(120):
            ubar = _neighbor_average(u)
            vbar = _neighbor_average(v)
            shared = (ix * ubar + iy * vbar + it) / denom
            u = ubar - ix * shared
            v = vbar - iy * shared
            current = hs_energy(u, v, ix, iy, it, alpha)
            assert current <= previous + 1e-9
            previous = current

    def test_smoothing_factor_reduces_variance(self):
        # stronger smoothing gives a spatially flatter field on a shear pair
        size = 160
        rng = np.random.default_rng(41)
        n = 900
        xs = rng.uniform(-6, size + 5, n)
        ys = rng.uniform(-6, size + 5, n)
        rate = 0.02
        cy = (size - 1) / 2
        a = np.clip(_kernels.render_particles(xs, ys, 2.5, size, size), 0, 1)
        b = np.clip(
            _kernels.render_particles(xs + rate * (ys - cy), ys, 2.5, size, size), 0, 1
        )
        frame_a, frame_b = ImageFrame(a), ImageFrame(b)
        variances = []
        for alpha in (0.25, 0.5, 0.75):
            flow = horn_schunck(frame_a, frame_b, HSParams(alpha=alpha, iterations=150))
            variances.append(float(np.var(flow.u) + np.var(flow.v)))
        assert variances[0] >= variances[1] >= variances[2]

    def test_dimension_mismatch(self):
        a, _ = speckle_pair((0, 0), size=96)
        b, _ = speckle_pair((0, 0), size=64)
        with pytest.raises(DimensionError):
            horn_schunck(a, b, HSParams())

    def test_runs_exactly_requested_sweeps(self):
        frame_a, frame_b = speckle_pair((0.5, 0.0), size=96, n=350, seed=43)
        one = horn_schunck(frame_a, frame_b, HSParams(alpha=0.5, iterations=1))
        two = horn_schunck(frame_a, frame_b, HSParams(alpha=0.5, iterations=2))
        assert not np.array_equal(one.u, two.u)
