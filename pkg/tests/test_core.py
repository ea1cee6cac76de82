import numpy as np
import pytest

from transluce.core import (Camera, GBuffer, Illumination, Image, ParamLayout, ParamRanges,
                            ParamVector, SceneParams, Spectrum, SssParams, denormalize_params,
                            denormalize_value, lerp_sss, normalize_params, normalize_value)
from transluce.errors import InvalidT, LayoutMismatch, OutOfRange, ShapeMismatch
from transluce.rng import make_rng


def random_params(rng, h=4, w=5):
    r = ParamRanges()
    return SceneParams(rng.uniform(*r.roughness, size=(h, w)),
                       rng.uniform(*r.sh, size=(3, 9)),
                       rng.uniform(*r.flash_intensity),
                       SssParams(rng.uniform(*r.sigma_t, 3), rng.uniform(*r.alpha, 3),
                                 rng.uniform(*r.g)))


class TestCodec:
    def test_sigma_t_midpoint(self):
        assert normalize_value("sigma_t", 16.0) == 0.0

    def test_sigma_t_upper_endpoint(self):
        assert normalize_value("sigma_t", 32.0) == 1.0

    def test_alpha_midpoint(self):
        assert abs(normalize_value("alpha", 0.625)) < 1e-15

    def test_g_denormalized_midpoint(self):
        assert abs(denormalize_value("g", 0.0) - 0.45) < 1e-15

    def test_intensity_lower_endpoint(self):
        assert denormalize_value("flash_intensity", -1.0) == 35.0

    def test_round_trip_1000_sets(self):
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(1000):
            p = random_params(rng, 2, 2)
            q = denormalize_params(normalize_params(p))
            a = np.concatenate([p.roughness.ravel(), p.sh.ravel(), [p.flash_intensity],
                                p.sss.as_array()])
            b = np.concatenate([q.roughness.ravel(), q.sh.ravel(), [q.flash_intensity],
                                q.sss.as_array()])
            worst = max(worst, np.max(np.abs(a - b) / np.maximum(np.abs(a), 1e-12)))
        assert worst < 1e-6

    def test_denormalize_then_normalize(self):
        rng = np.random.default_rng(1)
        layout = ParamLayout.for_raster(3, 3)
        v = ParamVector(rng.uniform(-1, 1, layout.size), layout)
        back = normalize_params(denormalize_params(v))
        assert np.allclose(back.values, v.values, atol=1e-12)

    def test_out_of_range(self):
        p = random_params(np.random.default_rng(2))
        bad = SceneParams(p.roughness, p.sh, 80.0, p.sss)
        with pytest.raises(OutOfRange) as e:
            normalize_params(bad)
        assert e.value.name == "flash_intensity"

    def test_epsilon_tolerance(self):
        p = random_params(np.random.default_rng(3))
        edge = SceneParams(p.roughness, p.sh, 75.0 + 1e-9, p.sss)
        assert normalize_params(edge).group("flash_intensity") == 1.0

    def test_entries_within_unit_box(self):
        v = normalize_params(random_params(np.random.default_rng(4)))
        assert np.all(np.abs(v.values) <= 1.0)

    def test_layout_partitions_vector(self):
        layout = ParamLayout.for_raster(7, 5)
        covered = np.zeros(layout.size, dtype=int)
        for s in layout.slices.values():
            covered[s] += 1
        assert np.all(covered == 1)
        assert sum(s.stop - s.start for s in layout.slices.values()) == layout.size

    def test_layout_order(self):
        names = [n for n, _ in ParamLayout.for_raster(2, 2).shapes]
        assert names == ["roughness", "sh", "flash_intensity", "sigma_t", "alpha", "g"]

    def test_layout_mismatch(self):
        with pytest.raises(LayoutMismatch):
            ParamVector(np.zeros(3), ParamLayout.for_raster(2, 2))

    def test_shmax_configurable(self):
        r = ParamRanges.with_shmax(5.0)
        assert normalize_value("sh", 5.0, r) == 1.0


class TestLerp:
    a = SssParams((1.0, 2.0, 3.0), (0.3, 0.5, 0.7), 0.0)
    b = SssParams((30.0, 20.0, 10.0), (0.9, 0.8, 0.4), 0.9)

    def test_endpoints_exact(self):
        assert lerp_sss(self.a, self.b, 0.0) == self.a
        assert lerp_sss(self.a, self.b, 1.0) == self.b

    def test_g_midpoint(self):
        assert lerp_sss(self.a, self.b, 0.5).g == pytest.approx(0.45, abs=1e-15)

    def test_exactly_linear(self):
        m = lerp_sss(self.a, self.b, 0.5).as_array()
        q = (lerp_sss(self.a, self.b, 0.25).as_array()
             + lerp_sss(self.a, self.b, 0.75).as_array()) / 2
        assert np.max(np.abs(m - q)) < 1e-12

    @pytest.mark.parametrize("t", [-0.1, 1.5])
    def test_invalid_t(self, t):
        with pytest.raises(InvalidT):
            lerp_sss(self.a, self.b, t)


class TestTypes:
    def test_spectrum_rejects_nan(self):
        with pytest.raises(ValueError):
            Spectrum.of((1.0, float("nan"), 0.0))

    @pytest.mark.parametrize("kw", [{"sigma_t": (-1, 0, 0)}, {"alpha": (1.0, 0.5, 0.5)},
                                    {"g": 1.0}, {"g": -1.0}])
    def test_sss_invariants(self, kw):
        base = {"sigma_t": (1, 1, 1), "alpha": (0.5, 0.5, 0.5), "g": 0.0}
        base.update(kw)
        with pytest.raises(OutOfRange):
            SssParams(**base)

    def test_sigma_s(self):
        s = SssParams((10, 20, 30), (0.5, 0.25, 0.1), 0.0)
        assert s.sigma_s == pytest.approx((5, 5, 3))

    def test_image_shape_and_finite(self):
        with pytest.raises(ShapeMismatch):
            Image(np.zeros((4, 4, 2)))
        with pytest.raises(ValueError):
            Image(np.full((2, 2, 3), np.inf))

    def test_image_is_read_only(self):
        im = Image(np.zeros((2, 2, 3)))
        with pytest.raises(ValueError):
            im.data[0, 0, 0] = 1.0

    def test_gbuffer_invariants(self):
        h, w = 3, 4
        depth = Image(np.ones((h, w, 1)))
        normal = Image(np.tile([0.0, 0.0, 1.0], (h, w, 1)))
        rough = Image(np.full((h, w, 1), 0.5))
        mask = Image(np.ones((h, w, 1)))
        GBuffer(depth, normal, rough, mask)
        with pytest.raises(ValueError):
            GBuffer(depth, Image(np.tile([0.0, 0.0, 2.0], (h, w, 1))), rough, mask)
        with pytest.raises(ValueError):
            GBuffer(depth, normal, Image(np.zeros((h, w, 1))), mask)
        with pytest.raises(ShapeMismatch):
            GBuffer(Image(np.ones((h + 1, w, 1))), normal, rough, mask)

    def test_illumination(self):
        with pytest.raises(OutOfRange):
            Illumination(np.zeros((3, 9)), -1.0)
        with pytest.raises(ValueError):
            Illumination(np.full((3, 9), np.nan), 1.0)

    def test_camera_defaults(self):
        cam = Camera()
        assert cam.position == (0.0, 0.0, 0.7)
        assert cam.look_at == (0.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            Camera(position=(0, 0, 0))
        with pytest.raises(OutOfRange):
            Camera(vertical_fov=180.0)

    def test_camera_center_ray_and_projection(self):
        cam = Camera(resolution=(64, 48))
        rays = cam.pixel_rays(offset=(0.0, 0.0))
        assert rays.shape == (48, 64, 3)
        # the image center is the corner shared by the four middle pixels
        d = cam.pixel_rays(offset=(0.0, 0.0))[24, 32]
        assert np.allclose(d, (0, 0, -1), atol=1e-12)
        xy = cam.project([[0.0, 0.0, 0.0]])[0]
        assert np.allclose(xy, (32, 24))

    def test_jitter_angle(self):
        cam = Camera()
        j = cam.jittered(0.5, np.random.default_rng(0))
        a = np.subtract(cam.look_at, cam.position)
        b = np.subtract(j.look_at, j.position)
        ang = np.degrees(np.arccos(a @ b / np.linalg.norm(a) / np.linalg.norm(b)))
        assert ang == pytest.approx(0.5, abs=1e-9)


class TestRng:
    def test_same_stream_identical(self):
        a = make_rng(123, (5, 7)).random(1000)
        b = make_rng(123, (5, 7)).random(1000)
        assert np.array_equal(a, b)

    def test_scalar_and_block_draws_agree(self):
        r1, r2 = make_rng(9, (1, 2)), make_rng(9, (1, 2))
        block = r1.random(10)
        assert [r2.random() for _ in range(10)] == list(block)

    def test_range(self):
        u = make_rng(0, (0, 0)).random(100_000)
        assert u.min() >= 0.0 and u.max() < 1.0

    def test_streams_uniform_chi_square(self):
        # first draw of 20000 neighboring streams, 20 bins
        u = np.array([make_rng(42, (p, 0)).random() for p in range(20_000)])
        counts = np.histogram(u, bins=20, range=(0, 1))[0]
        chi2 = np.sum((counts - 1000.0) ** 2 / 1000.0)
        # 99th percentile of chi-square with 19 dof
        assert chi2 < 36.19

    def test_streams_decorrelated(self):
        a = make_rng(1, (10, 0)).random(20_000)
        b = make_rng(1, (11, 0)).random(20_000)
        c = make_rng(1, (10, 1)).random(20_000)
        # |r| < 4/sqrt(n) is far beyond chance for independent streams
        assert abs(np.corrcoef(a, b)[0, 1]) < 4 / np.sqrt(20_000)
        assert abs(np.corrcoef(a, c)[0, 1]) < 4 / np.sqrt(20_000)

    def test_large_seeds_accepted(self):
        x = make_rng(2 ** 64 - 1, (2 ** 40, 3)).random(4)
        assert x.shape == (4,)
