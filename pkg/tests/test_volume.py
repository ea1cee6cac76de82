import math

import numpy as np
import pytest

from transluce.core import Camera, SssParams
from transluce.errors import NotWatertight, ZeroExtinction
from transluce.volume.geometry import (Sphere, TriangleMesh, icosphere, load_mesh, load_obj,
                                       load_stl, superquadric, write_stl)
from transluce.volume.reference import DirectionalLobe, single_scatter_reference
from transluce.volume.tracer import (FlashLight, Scene, TraceConfig, raycast_gbuffer,
                                     render_scene_pair, render_sss_sphere, sample_free_flight,
                                     trace, trace_components, transmittance)

WHITE = np.zeros((3, 9))
WHITE[:, 0] = 2 * math.sqrt(math.pi)
SPHERE = Sphere((0.0, 0.0, 0.0), 0.25)
MED = SssParams((8.0, 8.0, 8.0), (0.8, 0.8, 0.8), 0.3)


def ks_pvalue(stat, n):
    lam = (math.sqrt(n) + 0.12 + 0.11 / math.sqrt(n)) * stat
    return max(0.0, min(1.0, 2 * sum((-1) ** (k - 1) * math.exp(-2 * k * k * lam * lam)
                                     for k in range(1, 101))))


def mean_gap(a, b):
    """Gap between two image means in units of its standard error."""
    n = a.env.size
    ma, mb = (a.env + a.flash).mean(), (b.env + b.flash).mean()
    se = math.sqrt(np.sum(a.stderr ** 2) + np.sum(b.stderr ** 2)) / n
    return abs(ma - mb) / se


def brute_force_depth(mesh, camera):
    o = np.asarray(camera.position)
    d = camera.pixel_rays().reshape(-1, 3)
    v0, v1, v2 = (mesh.vertices[mesh.indices[:, k]] for k in range(3))
    e1, e2 = v1 - v0, v2 - v0
    best = np.full(len(d), np.inf)
    for i, ray in enumerate(d):
        p = np.cross(ray, e2)
        det = np.einsum("ij,ij->i", e1, p)
        ok = np.abs(det) > 1e-14
        inv = np.where(ok, 1 / np.where(ok, det, 1), 0)
        s = o - v0
        u = np.einsum("ij,ij->i", s, p) * inv
        q = np.cross(s, e1)
        v = (q @ ray) * inv
        t = np.einsum("ij,ij->i", e2, q) * inv
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-9)
        if hit.any():
            best[i] = t[hit].min()
    return best.reshape(camera.height, camera.width)


class TestClosedForm:
    def test_transmittance(self):
        assert transmittance((2.0, 2.0, 2.0), 0.5).r == pytest.approx(math.exp(-1), rel=1e-15)
        assert transmittance((1.0, 5.0, 9.0), 0.0).array().tolist() == [1.0, 1.0, 1.0]
        assert transmittance((0.0, 0.0, 0.0), 3.0).array().tolist() == [1.0, 1.0, 1.0]
        with pytest.raises(ValueError):
            transmittance((1, 1, 1), -1.0)

    def test_free_flight_mean(self):
        u = np.random.default_rng(0).random(1_000_000)
        d = -np.log1p(-u) / 10.0
        via_api = np.array([sample_free_flight(10.0, x)[0] for x in u[:2000]])
        assert np.allclose(via_api, d[:2000], rtol=1e-14, atol=0)
        assert abs(d.mean() - 0.1) < 3 * d.std() / 1000
        assert abs(d.mean() - 0.1) < 0.001

    def test_free_flight_ks(self):
        u = np.random.default_rng(1).random(20_000)
        d = np.sort([sample_free_flight(4.0, x)[0] for x in u])
        cdf = 1 - np.exp(-4.0 * d)
        n = len(d)
        stat = max(np.max(np.arange(1, n + 1) / n - cdf), np.max(cdf - np.arange(n) / n))
        assert ks_pvalue(stat, n) > 0.01

    def test_free_flight_pdf_and_edges(self):
        d, p = sample_free_flight(3.0, 0.4)
        assert p == pytest.approx(3.0 * math.exp(-3.0 * d), rel=1e-15)
        assert sample_free_flight(3.0, 0.0)[0] == 0.0
        with pytest.raises(ZeroExtinction):
            sample_free_flight(0.0, 0.5)


class TestGeometry:
    def test_icosphere_watertight(self):
        v, f = icosphere(2)
        m = TriangleMesh.from_faces(v, f)
        assert m.watertight
        open_mesh = TriangleMesh.from_faces(v, f[1:])
        assert not open_mesh.watertight
        with pytest.raises(NotWatertight):
            trace(open_mesh, 0.3, MED, WHITE, None, Camera(resolution=(4, 4)),
                  TraceConfig(spp=1))

    def test_stl_round_trip(self, tmp_path):
        m = superquadric(3.0, (1.0, 0.7, 0.5), 2)
        write_stl(tmp_path / "m.stl", m)
        back = load_stl(tmp_path / "m.stl")
        assert back.watertight and len(back.indices) == len(m.indices)
        a = np.sort(m.vertices[m.indices].reshape(-1, 9), axis=0)
        b = np.sort(back.vertices[back.indices].reshape(-1, 9), axis=0)
        assert np.allclose(np.sort(a.ravel()), np.sort(b.ravel()), atol=1e-6)

    def test_obj_round_trip(self, tmp_path):
        v, f = icosphere(1)
        lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in v]
        lines += [f"vn {x:.17g} {y:.17g} {z:.17g}" for x, y, z in v]
        lines += [f"f {a + 1}//{a + 1} {b + 1}//{b + 1} {c + 1}//{c + 1}" for a, b, c in f]
        (tmp_path / "m.obj").write_text("\n".join(lines))
        m = load_obj(tmp_path / "m.obj")
        assert np.array_equal(m.vertices, v)
        assert m.watertight
        assert np.allclose(m.normals, v, atol=1e-12)
        assert load_mesh(tmp_path / "m.obj").indices.shape == f.shape

    def test_quad_faces_fan_triangulated(self, tmp_path):
        cube = ["v 0 0 0", "v 1 0 0", "v 1 1 0", "v 0 1 0",
                "v 0 0 1", "v 1 0 1", "v 1 1 1", "v 0 1 1",
                "f 1 4 3 2", "f 5 6 7 8", "f 1 2 6 5", "f 2 3 7 6", "f 3 4 8 7", "f 4 1 5 8"]
        (tmp_path / "c.obj").write_text("\n".join(cube))
        m = load_obj(tmp_path / "c.obj")
        assert len(m.indices) == 12 and m.watertight

    def test_bvh_matches_brute_force(self):
        m = superquadric(2.5, (1.0, 0.8, 0.6), 3).normalized_to_cube()
        m = m.transformed(rotation=np.array([[0.8, 0, 0.6], [0, 1, 0], [-0.6, 0, 0.8]]))
        cam = Camera(resolution=(24, 24))
        g = raycast_gbuffer(m, 0.3, cam)
        want = brute_force_depth(m, cam)
        hit = np.isfinite(want)
        assert np.array_equal(g.mask_bool, hit)
        assert np.allclose(g.depth.data[..., 0][hit], want[hit], atol=1e-9)

    def test_sphere_gbuffer_depth(self):
        cam = Camera(resolution=(33, 33))
        g = raycast_gbuffer(SPHERE, 0.4, cam)
        assert g.depth.data[16, 16, 0] == pytest.approx(0.7 - 0.25, abs=1e-4)
        assert np.allclose(g.normal.data[16, 16], (0, 0, 1), atol=1e-9)
        assert np.all(g.roughness.data[g.mask_bool] == 0.4)


class TestTracer:
    cam = Camera(resolution=(12, 12))

    def test_deterministic_across_threads(self):
        cfg = TraceConfig(spp=8, seed=3, tile=4)
        fl = FlashLight.for_camera(self.cam, 50.0)
        imgs = [trace(SPHERE, 0.2, MED, WHITE, fl, self.cam,
                      TraceConfig(spp=8, seed=3, tile=4, threads=t)).data for t in (1, 2, 8)]
        assert np.array_equal(imgs[0], imgs[1]) and np.array_equal(imgs[0], imgs[2])
        assert np.array_equal(imgs[0], trace(SPHERE, 0.2, MED, WHITE, fl, self.cam, cfg).data)

    def test_flash_component_linear_in_radiance(self):
        cfg = TraceConfig(spp=16, seed=1)
        a = trace_components(SPHERE, 0.2, MED, WHITE, FlashLight.for_camera(self.cam, 30.0),
                             self.cam, cfg)
        b = trace_components(SPHERE, 0.2, MED, WHITE, FlashLight.for_camera(self.cam, 60.0),
                             self.cam, cfg)
        assert np.allclose(b.flash, 2 * a.flash, rtol=1e-12, atol=0)
        assert np.array_equal(a.env, b.env)

    def test_removing_flash_cannot_add_light(self):
        cfg = TraceConfig(spp=64, seed=2)
        scene = Scene(SPHERE, 0.2, MED, WHITE, 55.0, self.cam, jitter_deg=0.0)
        flash, noflash = render_scene_pair(scene, cfg)
        a = trace_components(SPHERE, 0.2, MED, WHITE, scene.flash(), self.cam, cfg)
        b = trace_components(SPHERE, 0.2, MED, WHITE, None, self.cam, cfg)
        assert np.array_equal(flash.data, a.image.data)
        assert np.array_equal(noflash.data, b.image.data)
        sigma = np.sqrt(a.stderr ** 2 + b.stderr ** 2)
        assert np.all(flash.data - noflash.data >= -3 * sigma - 1e-12)

    def test_zero_flash_equals_no_flash(self):
        cfg = TraceConfig(spp=256, seed=4)
        a = trace_components(SPHERE, 0.2, MED, WHITE, FlashLight.for_camera(self.cam, 0.0),
                             self.cam, cfg)
        b = trace_components(SPHERE, 0.2, MED, WHITE, None, self.cam, cfg)
        assert np.all(a.flash == 0)
        assert mean_gap(a, b) < 3

    def test_vacuum_interior_limit(self):
        thin = SssParams((1e-9, 1e-9, 1e-9), (0.5, 0.5, 0.5), 0.0)
        a = trace_components(SPHERE, 0.3, thin, WHITE, None, self.cam, TraceConfig(spp=256, seed=5))
        b = trace_components(SPHERE, 0.3, thin, WHITE, None, self.cam,
                             TraceConfig(spp=256, seed=6, volume_events=False))
        assert mean_gap(a, b) < 3

    def test_isotropic_hg_matches_uniform_phase(self):
        med = SssParams((10.0, 10.0, 10.0), (0.9, 0.9, 0.9), 0.0)
        a = trace_components(SPHERE, 0.2, med, WHITE, None, self.cam, TraceConfig(spp=256, seed=7))
        b = trace_components(SPHERE, 0.2, med, WHITE, None, self.cam,
                             TraceConfig(spp=256, seed=8, uniform_phase=True))
        assert mean_gap(a, b) < 3

    def test_scene_pair_default_resolution(self):
        assert Camera().resolution == (256, 256)

    def test_albedo_ordering_gives_hue(self):
        cfg = TraceConfig(spp=128, seed=9)
        red = render_sss_sphere(SssParams((10, 10, 10), (0.95, 0.3, 0.3), 0.0), WHITE, cfg,
                                self.cam).data
        blue = render_sss_sphere(SssParams((10, 10, 10), (0.3, 0.3, 0.95), 0.0), WHITE, cfg,
                                 self.cam).data
        assert red[..., 0].mean() / red[..., 1].mean() > 1.2
        assert blue[..., 2].mean() / blue[..., 1].mean() > 1.2

    def test_thick_medium_blocks_background(self):
        # a bright band of sky behind the sphere, seen through its center
        sh = np.zeros((3, 9))
        sh[:, 0], sh[:, 2] = 1.0, -1.5
        cam = Camera(resolution=(9, 9))
        cfg = TraceConfig(spp=512, seed=10, window=(3, 3, 6, 6))
        absorb = (0.0, 0.0, 0.0)
        thin = trace(SPHERE, 0.05, SssParams((1, 1, 1), absorb, 0.0), sh, None, cam, cfg).data
        thick = trace(SPHERE, 0.05, SssParams((32, 32, 32), absorb, 0.0), sh, None, cam, cfg).data
        assert thick.mean() < 0.1 * thin.mean()

    def test_sss_sphere_repeatable(self):
        cfg = TraceConfig(spp=4, seed=11)
        a = render_sss_sphere(MED, WHITE, cfg, self.cam)
        b = render_sss_sphere(MED, WHITE, cfg, self.cam)
        assert np.array_equal(a.data, b.data)


class TestSingleScatterReference:
    cam = Camera(resolution=(8, 8))

    def test_no_scattering_is_black(self):
        img = single_scatter_reference(geom=SPHERE, sss=SssParams((5, 5, 5), (0, 0, 0), 0.3),
                                       light=DirectionalLobe(), camera=self.cam)
        assert np.all(img.data == 0)

    def test_linear_in_light(self):
        a = single_scatter_reference(geom=SPHERE, sss=MED, light=DirectionalLobe(radiance=1.0),
                                     camera=self.cam, n_dist=16, n_mu=6, n_phi=8)
        b = single_scatter_reference(geom=SPHERE, sss=MED, light=DirectionalLobe(radiance=2.0),
                                     camera=self.cam, n_dist=16, n_mu=6, n_phi=8)
        assert np.allclose(b.data, 2 * a.data, rtol=1e-12, atol=0)
        assert a.data.max() > 0

    def test_lobe_sh_is_exact(self):
        lobe = DirectionalLobe((0.3, 1.0, -0.2), 2.0)
        from transluce.shlight import eval_radiance
        d = np.random.default_rng(0).normal(size=(500, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        assert np.allclose(eval_radiance(lobe.sh(), d)[:, 0], lobe(d), atol=1e-10)
