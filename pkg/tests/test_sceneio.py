"""Manifests, checkpoints, the reference renderer and toy datasets."""

import json

import numpy as np
import pytest

from conftest import oracle_scene_cloud, orbit_camera
from gs3.frames import Frame, look_at, project_gaussians
from gs3.gaussians import initial_model, logit
from gs3.image import read_png, read_raw, write_png, write_raw
from gs3.metrics import psnr
from gs3.rasterize import bin_and_sort, render_splats
from gs3.sceneio import (CheckpointError, ManifestError, checkpoint_size,
                         generate_toy_dataset, line_integral_transmittance,
                         load_checkpoint, load_manifest, oracle_render,
                         raytrace_toy, save_checkpoint, save_manifest)
from gs3.shadow import LightDescriptor


def write_manifest(tmp_path, frames=None, **extra):
    c2w = look_at((0.0, 0.0, 3.0), (0, 0, 0))
    cam2world = np.linalg.inv(c2w)
    if frames is None:
        frames = [{
            "image_path": "img.png",
            "camera_to_world": cam2world.tolist(),
            "light": {"kind": "point", "position": [0, 0, 4.0],
                      "intensity": [10, 10, 10], "falloff": "inverse_square"},
        }]
    data = {"camera": {"fx": 32.0, "fy": 32.0, "cx": 16.0, "cy": 16.0,
                       "width": 32, "height": 32},
            "frames": frames}
    data.update(extra)
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(data))
    write_png(np.full((32, 32, 3), 0.5), tmp_path / "img.png")
    return path


class TestManifest:
    def test_minimal_valid(self, tmp_path):
        man = load_manifest(write_manifest(tmp_path))
        assert len(man) == 1
        assert man.camera_frame(0).width == 32
        target = man.load_target(0)
        assert target.shape == (32, 32, 3)

    def test_missing_light_names_frame(self, tmp_path):
        c2w = np.linalg.inv(look_at((0, 0, 3.0), (0, 0, 0)))
        frames = [{"image_path": "img.png", "camera_to_world": c2w.tolist()}]
        path = write_manifest(tmp_path, frames=frames)
        with pytest.raises(ManifestError, match="frame 0"):
            load_manifest(path)

    def test_non_rigid_pose_rejected(self, tmp_path):
        bad = np.eye(4)
        bad[0, 0] = 2.0
        frames = [{"image_path": "img.png", "camera_to_world": bad.tolist(),
                   "light": {"kind": "point", "position": [0, 0, 4]}}]
        path = write_manifest(tmp_path, frames=frames)
        with pytest.raises(ManifestError, match="orthonormal"):
            load_manifest(path)

    def test_normalization_radius_one(self, tmp_path):
        man = load_manifest(write_manifest(tmp_path))
        pts = [f.camera_to_world[:3, 3] for f in man.frames]
        pts += [f.light.position for f in man.frames if f.light.kind == "point"]
        pts = np.stack(pts)
        center = pts.mean(axis=0)
        assert np.linalg.norm(pts - center, axis=1).max() == pytest.approx(1.0)

    def test_normalization_idempotent(self, tmp_path):
        man = load_manifest(write_manifest(tmp_path))
        save_manifest(man, tmp_path / "norm.json")
        # write back in original units, reload: same normalized values
        man2 = load_manifest(tmp_path / "norm.json")
        assert man2.norm_scale == pytest.approx(man.norm_scale)
        for a, b in zip(man.frames, man2.frames):
            assert np.allclose(a.camera_to_world, b.camera_to_world, atol=1e-12)

        # a manifest that is already normalized stays put
        (tmp_path / "img2.png").write_bytes((tmp_path / "img.png").read_bytes())
        already = {
            "camera": {"fx": 32.0, "fy": 32.0, "cx": 16.0, "cy": 16.0,
                       "width": 32, "height": 32},
            "frames": [{
                "image_path": "img2.png",
                "camera_to_world": np.linalg.inv(
                    look_at((0.0, 0.0, 1.0), (0, 0, 0))).tolist(),
                "light": {"kind": "point", "position": [0.0, 0.0, -1.0],
                          "intensity": [1, 1, 1], "falloff": "inverse_square"}}],
        }
        p = tmp_path / "already.json"
        p.write_text(json.dumps(already))
        man3 = load_manifest(p)
        assert abs(man3.norm_scale - 1.0) < 1e-9

    def test_round_trip_preserves_values(self, tmp_path):
        src = write_manifest(tmp_path)
        man = load_manifest(src)
        save_manifest(man, tmp_path / "copy.json")
        a = json.loads(src.read_text())
        b = json.loads((tmp_path / "copy.json").read_text())
        ca = np.asarray(a["frames"][0]["camera_to_world"])
        cb = np.asarray(b["frames"][0]["camera_to_world"])
        assert np.abs(ca - cb).max() < 1e-12
        la = np.asarray(a["frames"][0]["light"]["position"])
        lb = np.asarray(b["frames"][0]["light"]["position"])
        assert np.abs(la - lb).max() < 1e-12


class TestCheckpoint:
    def make_model(self, n=100, j=8, seed=0):
        rng = np.random.default_rng(seed)
        return initial_model(rng.normal(size=(n, 3)) * 0.3, basis_count=j, seed=seed)

    def test_round_trip_bit_exact(self, tmp_path):
        model = self.make_model()
        model.iteration = 1234
        path = tmp_path / "m.gs3c"
        save_checkpoint(model, path, config={"seed": 7})
        loaded, cfg = load_checkpoint(path, want_config=True)
        assert cfg == {"seed": 7}
        assert loaded.iteration == 1234
        for f in type(model.cloud).ARRAY_FIELDS:
            a = getattr(model.cloud, f)
            b = getattr(loaded.cloud, f)
            assert a.dtype == np.float32
            assert np.array_equal(a, b)
        assert np.array_equal(model.basis.quats, loaded.basis.quats)
        for wa, wb in zip(model.phi.weights, loaded.phi.weights):
            assert np.array_equal(wa, wb)
        # save(load(save)) is byte-stable
        save_checkpoint(loaded, tmp_path / "m2.gs3c", config={"seed": 7})
        assert path.read_bytes() == (tmp_path / "m2.gs3c").read_bytes()

    def test_corrupt_magic_is_version_error(self, tmp_path):
        model = self.make_model(n=5)
        path = tmp_path / "m.gs3c"
        save_checkpoint(model, path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="magic/version"):
            load_checkpoint(path)

    def test_future_version_rejected(self, tmp_path):
        import struct
        model = self.make_model(n=5)
        path = tmp_path / "m.gs3c"
        save_checkpoint(model, path)
        raw = bytearray(path.read_bytes())
        raw[4:8] = struct.pack("<I", 2)
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version 2"):
            load_checkpoint(path)

    def test_truncation_detected(self, tmp_path):
        model = self.make_model(n=5)
        path = tmp_path / "m.gs3c"
        save_checkpoint(model, path)
        data = path.read_bytes()
        path.write_bytes(data[:len(data) // 2])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_file_size_formula(self, tmp_path):
        cfg = {"seed": 0, "basis_count": 8}
        model = self.make_model(n=100, j=8)
        path = tmp_path / "m.gs3c"
        save_checkpoint(model, path, config=cfg)
        assert path.stat().st_size == checkpoint_size(100, 8, cfg)


class TestOracleRenderer:
    def test_empty_scene(self):
        cloud = oracle_scene_cloud(3, np.random.default_rng(0))
        cloud.opacity_logit = np.full(3, -60.0, dtype=np.float32)
        img = oracle_render(cloud, orbit_camera(), np.ones((3, 3)))
        assert np.all(img == 0.0)

    def test_single_gaussian_analytic_pixel(self):
        # pixel at the projected mean: value = payload * gamma (beta = 1, T = 1)
        f = Frame(pose=np.eye(4), fx=50.0, fy=50.0, cx=16.5, cy=16.5,
                  width=33, height=33)
        gamma = 0.55
        cloud = oracle_scene_cloud(1, np.random.default_rng(1))
        cloud.mu = np.array([[0.0, 0.0, 2.0]], dtype=np.float32)
        cloud.rot = np.array([[1.0, 0, 0, 0]], dtype=np.float32)
        cloud.scale_log = np.log(np.full((1, 3), 0.03)).astype(np.float32)
        cloud.opacity_logit = np.array([logit(gamma)], dtype=np.float32)
        img = oracle_render(cloud, f, np.array([[1.0, 0.5, 0.2]]))
        assert np.allclose(img[16, 16], gamma * np.array([1.0, 0.5, 0.2]), atol=1e-9)

    def test_agrees_with_production(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            cloud = oracle_scene_cloud(50, rng)
            payload = rng.uniform(0, 1, (50, 3))
            f = orbit_camera()
            sp = project_gaussians(cloud.mu, cloud.rot, cloud.scale_log,
                                   cloud.opacity, f)
            tiles = bin_and_sort(sp, f)
            img = render_splats(sp, tiles, payload, cloud.opacity).image
            assert np.abs(img - oracle_render(cloud, f, payload)).max() < 1e-6


class TestToyDatasets:
    def test_center_pixel_analytic(self):
        # camera above the sphere, light collinear beyond it: the center pixel
        # sees the top point head-on -> albedo/pi * I / r^2
        cam = Frame(pose=look_at((0.0, 2.5, 0.0), (0, 0, 0)), fx=64.0, fy=64.0,
                    cx=32.0, cy=32.0, width=64, height=64)
        light = LightDescriptor(kind="point", position=(0.0, 4.0, 0.0),
                                intensity=(20.0, 20.0, 20.0))
        img = raytrace_toy("diffuse-sphere", cam, light)
        r2 = (4.0 - 0.5) ** 2
        expect = np.array([0.80, 0.55, 0.35]) / np.pi * 20.0 / r2
        # the exact center falls between pixels; all four neighbors are close
        got = img[31:33, 31:33].reshape(4, 3)
        for px in got:
            assert np.allclose(px, expect, rtol=2e-3)

    def test_umbra_is_exactly_dark(self):
        # light straight above: the occluder blocks the sphere's north pole
        cam = Frame(pose=look_at((0.0, 2.5, 0.8), (0, 0, 0)), fx=64.0, fy=64.0,
                    cx=32.0, cy=32.0, width=64, height=64)
        light = LightDescriptor(kind="point", position=(0.0, 3.5, 0.0),
                                intensity=(20.0, 20.0, 20.0))
        img = raytrace_toy("occluder-pair", cam, light)
        no_occ = raytrace_toy("diffuse-sphere", cam, light)
        darkened = (no_occ[:, :, 0] > 0.05) & (img[:, :, 0] == 0.0)
        assert darkened.sum() > 10  # a real umbra exists and is exactly zero

    def test_glossy_adds_highlight(self):
        cam = Frame(pose=look_at((0.0, 2.5, 0.0), (0, 0, 0)), fx=64.0, fy=64.0,
                    cx=32.0, cy=32.0, width=64, height=64)
        light = LightDescriptor(kind="point", position=(0.0, 4.0, 0.0),
                                intensity=(20.0, 20.0, 20.0))
        diff = raytrace_toy("diffuse-sphere", cam, light)
        gloss = raytrace_toy("glossy-sphere", cam, light)
        assert gloss.max() > diff.max() * 1.3

    def test_deterministic_generation(self, tmp_path):
        a = generate_toy_dataset("diffuse-sphere", 3, 3, 32, 5, tmp_path / "a")
        b = generate_toy_dataset("diffuse-sphere", 3, 3, 32, 5, tmp_path / "b")
        assert a.read_text() == b.read_text()
        for i in range(3):
            pa = (tmp_path / "a" / "images" / f"{i:04d}.png").read_bytes()
            pb = (tmp_path / "b" / "images" / f"{i:04d}.png").read_bytes()
            assert pa == pb

    def test_resolution_cap(self, tmp_path):
        with pytest.raises(ValueError):
            generate_toy_dataset("diffuse-sphere", 2, 2, 512, 0, tmp_path)

    def test_loadable_and_lights_outside_bound(self, tmp_path):
        path = generate_toy_dataset("occluder-pair", 4, 4, 32, 2, tmp_path)
        man = load_manifest(path)
        assert man.scene_scale is not None
        for f in man.frames:
            assert np.linalg.norm(f.light.position) > man.scene_scale

    def test_ray_marched_transmittance_correlates(self):
        """Raw splat shadow values vs line-integral transmittance through the
        gaussian density: monotone association, not equality."""
        from scipy.stats import spearmanr
        from gs3.shadow import shadow_splat

        rng = np.random.default_rng(4)
        # receivers scattered in a slab, occluding blob above half of them
        n_recv, n_occ = 24, 12
        recv = rng.uniform(-0.4, 0.4, size=(n_recv, 3))
        recv[:, 1] = rng.uniform(-0.35, -0.15, n_recv)
        occ = rng.normal(size=(n_occ, 3)) * [0.18, 0.05, 0.18] + [-0.2, 0.15, 0.0]
        pos = np.vstack([recv, occ])
        model = initial_model(pos, basis_count=2, seed=4)
        model.cloud.scale_log = np.log(np.full((len(pos), 3), 0.08)).astype(np.float32)
        model.cloud.opacity_logit = np.full(len(pos), logit(0.8), dtype=np.float32)
        light = LightDescriptor(kind="point", position=(0.0, 2.5, 0.0))
        res = shadow_splat(model, light, (64, 64))
        ray = line_integral_transmittance(model.cloud, light, n_steps=192)
        rho = spearmanr(res.raw_t[:n_recv], ray[:n_recv]).statistic
        assert rho > 0.9


class TestImageIO:
    def test_png_round_trip_quantized(self, tmp_path, rng):
        img = rng.uniform(0, 1, (16, 16, 3))
        write_png(img, tmp_path / "x.png")
        back = read_png(tmp_path / "x.png")
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-9

    def test_raw_round_trip(self, tmp_path, rng):
        img = rng.normal(size=(7, 9, 1))
        write_raw(img, tmp_path / "x.raw")
        back = read_raw(tmp_path / "x.raw")
        assert np.allclose(back, img, atol=1e-6)
        assert (tmp_path / "x.raw").read_bytes()[:4] == b"GS3I"

    def test_rgba_premultiplies(self, tmp_path):
        from PIL import Image
        rgba = np.zeros((4, 4, 4), dtype=np.uint8)
        rgba[:, :, 0] = 200
        rgba[:, :, 3] = 128
        Image.fromarray(rgba, "RGBA").save(tmp_path / "a.png")
        out = read_png(tmp_path / "a.png")
        assert out[0, 0, 0] == pytest.approx((200 / 255) * (128 / 255), abs=1e-6)


class TestPsnr:
    def test_identical_is_infinite(self, rng):
        a = rng.uniform(0, 1, (8, 8, 3))
        assert psnr(a, a.copy()) == float("inf")

    def test_half_difference(self):
        a = np.zeros((8, 8, 3))
        b = np.full((8, 8, 3), 0.5)
        assert psnr(a, b) == pytest.approx(20 * np.log10(2.0), abs=1e-9)

    def test_symmetry(self, rng):
        a = rng.uniform(0, 1, (8, 8, 3))
        b = rng.uniform(0, 1, (8, 8, 3))
        assert psnr(a, b) == psnr(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)))
