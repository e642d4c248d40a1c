"""Projection, binning, compositing and the rasterizer's backward pass."""

import numpy as np
import pytest

from gs3.frames import DILATION, Frame, look_at, project_backward, project_gaussians
from gs3.gaussians import GaussianCloud, initial_cloud, sigmoid
from gs3.quaternion import random_unit_quats
from gs3.rasterize import (bin_and_sort, render_backward,
                           render_splats, set_render_threads)
from gs3.sceneio import oracle_render


def identity_frame(width=32, height=32, fx=40.0, mode="perspective"):
    return Frame(pose=np.eye(4), fx=fx, fy=fx, cx=width / 2, cy=height / 2,
                 width=width, height=height, mode=mode)


def random_cloud(n, rng, spread=0.35, opacity_scale=1.0):
    cloud = initial_cloud(rng.normal(size=(n, 3)) * spread, 2, rng)
    cloud.rot = random_unit_quats(n, rng).astype(np.float32)
    cloud.scale_log = (rng.normal(size=(n, 3)) * 0.3 - 1.8).astype(np.float32)
    cloud.opacity_logit = (rng.normal(size=n) * opacity_scale).astype(np.float32)
    return cloud


def orbit_frame(width=32, height=32, fx=42.0, eye=(0.25, 0.35, 2.9)):
    return Frame(pose=look_at(eye, (0, 0, 0)), fx=fx, fy=fx,
                 cx=width / 2, cy=height / 2, width=width, height=height)


class TestProjection:
    def test_on_axis_analytic_covariance(self):
        # world sigma 0.1 isotropic at depth 2 under f=100: (f/z)^2 * sigma^2 = 25
        f = identity_frame(fx=100.0)
        sp = project_gaussians(np.array([[0.0, 0.0, 2.0]]), np.array([[1.0, 0, 0, 0]]),
                               np.log(np.full((1, 3), 0.1)), np.array([0.9]), f)
        cov = np.linalg.inv(np.array([[sp.conic[0, 0], sp.conic[0, 1]],
                                      [sp.conic[0, 1], sp.conic[0, 2]]]))
        assert np.allclose(cov, (25.0 + DILATION) * np.eye(2), atol=1e-9)

    def test_behind_near_plane_culled(self):
        f = identity_frame()
        sp = project_gaussians(np.array([[0.0, 0.0, -1.0]]), np.array([[1.0, 0, 0, 0]]),
                               np.zeros((1, 3)), np.array([0.9]), f)
        assert len(sp) == 0

    def test_orthographic_depth_independent(self):
        f = identity_frame(fx=12.0, mode="orthographic")
        covs = []
        for z in (1.0, 5.0, 40.0):
            sp = project_gaussians(np.array([[0.0, 0.0, z]]), np.array([[1.0, 0, 0, 0]]),
                                   np.log(np.full((1, 3), 0.2)), np.array([0.8]), f)
            covs.append(np.linalg.inv(np.array([[sp.conic[0, 0], sp.conic[0, 1]],
                                                [sp.conic[0, 1], sp.conic[0, 2]]])))
        expect = (12.0**2 * 0.04 + DILATION) * np.eye(2)
        for cov in covs:
            assert np.allclose(cov, expect, atol=1e-9)

    def test_offscreen_culled(self):
        f = identity_frame()
        sp = project_gaussians(np.array([[50.0, 0.0, 2.0]]), np.array([[1.0, 0, 0, 0]]),
                               np.log(np.full((1, 3), 0.01)), np.array([0.9]), f)
        assert len(sp) == 0

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(10)
        f = orbit_frame()
        mu = rng.normal(size=(5, 3)) * 0.3
        quats = random_unit_quats(5, rng)
        slog = rng.normal(size=(5, 3)) * 0.2 - 1.5
        op = sigmoid(rng.normal(size=5))
        dm = rng.normal(size=(5, 2))
        dc = rng.normal(size=(5, 3))

        sp = project_gaussians(mu, quats, slog, op, f)
        assert len(sp) == 5
        gmu, gq, gs = project_backward(sp, dm, dc)

        def loss(m, q, s):
            spl = project_gaussians(m, q, s, op, f)
            return np.sum(spl.mean2d * dm) + np.sum(spl.conic * dc)

        h = 1e-6
        for arr, grad in ((mu, gmu), (quats, gq), (slog, gs)):
            for idx in [(0, 0), (2, 1), (4, arr.shape[1] - 1)]:
                orig = arr[idx]
                arr[idx] = orig + h
                lp = loss(mu, quats, slog)
                arr[idx] = orig - h
                lm = loss(mu, quats, slog)
                arr[idx] = orig
                fd = (lp - lm) / (2 * h)
                assert grad[idx] == pytest.approx(fd, rel=1e-4, abs=1e-8)


class TestBinning:
    def test_single_splat_single_tile(self):
        f = identity_frame(width=64, height=64)
        # small splat centered in tile (1, 1)
        sp = project_gaussians(np.array([[0.0, 0.0, 4.0]]), np.array([[1.0, 0, 0, 0]]),
                               np.log(np.full((1, 3), 0.05)), np.array([0.6]), f)
        sp.mean2d[:] = [24.0, 24.0]
        assert sp.radius[0] < 8
        tiles = bin_and_sort(sp, f)
        per_tile = np.diff(tiles.ptr)
        assert per_tile.sum() == 1
        assert per_tile[1 * tiles.tiles_x + 1] == 1

    def test_depth_order_near_then_far(self):
        f = identity_frame()
        mu = np.array([[0.0, 0.0, 2.0], [0.0, 0.0, 1.0]])
        sp = project_gaussians(mu, np.tile([1.0, 0, 0, 0], (2, 1)),
                               np.log(np.full((2, 3), 0.02)), np.full(2, 0.5), f)
        tiles = bin_and_sort(sp, f)
        shared = [t for t in range(len(tiles.ptr) - 1)
                  if tiles.ptr[t + 1] - tiles.ptr[t] == 2]
        assert shared
        for t in shared:
            seg = tiles.entries[tiles.ptr[t]:tiles.ptr[t + 1]]
            depths = [sp.depth[e] for e in seg]
            assert depths == sorted(depths)

    def test_depth_tie_broken_by_index(self):
        f = identity_frame()
        mu = np.array([[0.01, 0.0, 2.0], [-0.01, 0.0, 2.0], [0.0, 0.01, 2.0]])
        sp = project_gaussians(mu, np.tile([1.0, 0, 0, 0], (3, 1)),
                               np.log(np.full((3, 3), 0.05)), np.full(3, 0.5), f)
        tiles = bin_and_sort(sp, f)
        gids = [sp.gidx[e] for e in tiles.entries]
        # equal depths: every tile's list must be ascending by gaussian index
        for t in range(len(tiles.ptr) - 1):
            seg = gids[tiles.ptr[t]:tiles.ptr[t + 1]]
            assert seg == sorted(seg)


class TestCompositing:
    def test_empty_scene_is_background(self):
        rng = np.random.default_rng(0)
        cloud = random_cloud(4, rng)
        cloud.opacity_logit = np.full(4, -40.0, dtype=np.float32)  # alpha ~ 0: culled
        f = orbit_frame()
        sp = project_gaussians(cloud.mu, cloud.rot, cloud.scale_log, cloud.opacity, f)
        tiles = bin_and_sort(sp, f)
        res = render_splats(sp, tiles, np.ones((4, 3)), cloud.opacity)
        assert np.all(res.image == 0.0)
        assert np.all(res.transmittance == 1.0)

    def test_single_splat_at_mean(self):
        # pixel centered on the projected mean: beta = 1, so value = c * gamma
        f = identity_frame(width=33, height=33, fx=50.0)
        gamma = 0.6
        sp = project_gaussians(np.array([[0.0, 0.0, 2.0]]), np.array([[1.0, 0, 0, 0]]),
                               np.log(np.full((1, 3), 0.08)), np.array([gamma]), f)
        assert np.allclose(sp.mean2d[0], [16.5, 16.5])
        tiles = bin_and_sort(sp, f)
        res = render_splats(sp, tiles, np.array([[1.0, 0.5, 0.25]]), np.array([gamma]))
        assert np.allclose(res.image[16, 16], gamma * np.array([1.0, 0.5, 0.25]),
                           atol=1e-12)
        assert res.transmittance[16, 16] == pytest.approx(1 - gamma)

    def test_two_splat_transmittance_chain(self):
        # beta*gamma = 0.6 then 0.3: T values 1.0, 0.4, final 0.28
        f = identity_frame(width=33, height=33, fx=50.0)
        mu = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 2.0]])
        sp = project_gaussians(mu, np.tile([1.0, 0, 0, 0], (2, 1)),
                               np.log(np.full((2, 3), 0.05)), np.array([0.6, 0.3]), f)
        tiles = bin_and_sort(sp, f)
        res = render_splats(sp, tiles, np.array([[1.0, 1, 1], [1.0, 1, 1]]),
                            np.array([0.6, 0.3]))
        assert res.image[16, 16, 0] == pytest.approx(0.6 + 0.3 * 0.4, abs=1e-12)
        assert res.transmittance[16, 16] == pytest.approx(0.4 * 0.7, abs=1e-12)

    def test_transmittance_in_unit_interval(self):
        rng = np.random.default_rng(11)
        cloud = random_cloud(60, rng)
        f = orbit_frame()
        sp = project_gaussians(cloud.mu, cloud.rot, cloud.scale_log, cloud.opacity, f)
        tiles = bin_and_sort(sp, f)
        res = render_splats(sp, tiles, rng.uniform(0, 1, (60, 3)), cloud.opacity)
        assert np.all(res.transmittance >= 0.0)
        assert np.all(res.transmittance <= 1.0)

    def test_transparent_splat_is_invisible(self):
        rng = np.random.default_rng(12)
        cloud = random_cloud(30, rng)
        payload = rng.uniform(0, 1, (30, 3))
        f = orbit_frame()

        def render(c, pay):
            sp = project_gaussians(c.mu, c.rot, c.scale_log, c.opacity, f)
            tiles = bin_and_sort(sp, f)
            return render_splats(sp, tiles, pay, c.opacity).image

        base = render(cloud, payload)
        extended = cloud.copy()
        extra = cloud.select([0])
        extra.opacity_logit = np.array([-745.0], dtype=np.float32)  # gamma == 0
        extended = GaussianCloud.concatenate([extended, extra])
        with_extra = render(extended, np.vstack([payload, [[5.0, 5.0, 5.0]]]))
        assert np.array_equal(base, with_extra)

    def test_deterministic_across_runs_and_threads(self):
        rng = np.random.default_rng(13)
        cloud = random_cloud(80, rng)
        payload = rng.uniform(0, 1, (80, 3))
        f = orbit_frame(width=64, height=64, fx=80.0)

        def render():
            sp = project_gaussians(cloud.mu, cloud.rot, cloud.scale_log,
                                   cloud.opacity, f)
            tiles = bin_and_sort(sp, f)
            return render_splats(sp, tiles, payload, cloud.opacity).image

        set_render_threads(1)
        a = render()
        b = render()
        assert np.array_equal(a, b)
        set_render_threads(2)
        c = render()
        set_render_threads(1)
        assert np.array_equal(a, c)  # tile-parallel == single-thread, bitwise


class TestThreadEnvVar:
    def test_gs3_threads_caps_parallelism(self):
        import subprocess
        import sys

        out = subprocess.run(
            [sys.executable, "-c",
             "import gs3.rasterize, numba; print(numba.get_num_threads())"],
            env={**__import__("os").environ, "GS3_THREADS": "1"},
            capture_output=True, text=True, timeout=120)
        assert out.returncode == 0, out.stderr
        assert out.stdout.strip().splitlines()[-1] == "1"


class TestOracleAgreement:
    def test_matches_naive_oracle(self):
        from conftest import oracle_scene_cloud

        rng = np.random.default_rng(14)
        for _ in range(10):
            cloud = oracle_scene_cloud(40, rng)
            payload = rng.uniform(0, 1, (40, 3))
            f = orbit_frame()
            sp = project_gaussians(cloud.mu, cloud.rot, cloud.scale_log,
                                   cloud.opacity, f)
            tiles = bin_and_sort(sp, f)
            res = render_splats(sp, tiles, payload, cloud.opacity)
            ref = oracle_render(cloud, f, payload)
            assert np.abs(res.image - ref).max() < 1e-6


class TestRenderBackward:
    def test_zero_upstream_zero_grads(self):
        rng = np.random.default_rng(15)
        cloud = random_cloud(10, rng)
        f = orbit_frame()
        sp = project_gaussians(cloud.mu, cloud.rot, cloud.scale_log, cloud.opacity, f)
        tiles = bin_and_sort(sp, f)
        res = render_splats(sp, tiles, rng.uniform(0, 1, (10, 3)), cloud.opacity)
        g = render_backward(res, np.zeros_like(res.image))
        for key in ("payload", "opacity", "mu", "quats", "scale_log"):
            assert np.all(g[key] == 0.0)

    def test_single_splat_payload_grad_is_alpha(self):
        f = identity_frame(width=33, height=33, fx=50.0)
        gamma = 0.37
        sp = project_gaussians(np.array([[0.0, 0.0, 2.0]]), np.array([[1.0, 0, 0, 0]]),
                               np.log(np.full((1, 3), 0.001)), np.array([gamma]), f)
        tiles = bin_and_sort(sp, f)
        res = render_splats(sp, tiles, np.array([[0.3, 0.3, 0.3]]), np.array([gamma]))
        d = np.zeros_like(res.image)
        d[16, 16, 0] = 1.0  # pixel at the mean: beta = 1, T = 1 -> dimage/dc = gamma
        g = render_backward(res, d)
        assert g["payload"][0, 0] == pytest.approx(gamma, abs=1e-9)

    def test_gradient_property_100_seeds(self):
        """Spot finite-difference probes across 100 random scenes."""
        from conftest import depth_gaps_safe, fd_settings

        settings = fd_settings()
        f = orbit_frame()
        h = 1e-5
        checked = 0
        for seed in range(100):
            rng = np.random.default_rng(3000 + seed)
            n = 10
            mu = rng.normal(size=(n, 3)) * 0.4
            quats = random_unit_quats(n, rng)
            slog = rng.normal(size=(n, 3)) * 0.2 - 1.6
            ol = rng.normal(size=n) * 0.8
            payload = rng.uniform(0.1, 1.0, (n, 3))
            probe = project_gaussians(mu, quats, slog, sigmoid(ol), f,
                                      skip_alpha=settings.skip_alpha)
            if not depth_gaps_safe(probe.depth):
                continue
            dimg = rng.normal(size=(32, 32, 3))

            def forward():
                sp = project_gaussians(mu, quats, slog, sigmoid(ol), f,
                                       skip_alpha=settings.skip_alpha)
                tiles = bin_and_sort(sp, f, settings)
                return render_splats(sp, tiles, payload, sigmoid(ol))

            g = render_backward(forward(), dimg)
            g_ol = g["opacity"] * sigmoid(ol) * (1 - sigmoid(ol))
            arrays = [(mu, g["mu"]), (quats, g["quats"]), (slog, g["scale_log"]),
                      (ol, g_ol), (payload, g["payload"])]
            name, (arr, grad) = ["mu", "quats", "slog", "ol", "payload"][seed % 5], \
                arrays[seed % 5]
            fi = int(rng.integers(arr.size))
            idx = np.unravel_index(fi, arr.shape)
            orig = arr[idx]
            arr[idx] = orig + h
            lp = float(np.sum(forward().image * dimg))
            arr[idx] = orig - h
            lm = float(np.sum(forward().image * dimg))
            arr[idx] = orig
            fd = (lp - lm) / (2 * h)
            an = grad[idx]
            checked += 1
            assert abs(an - fd) <= 1e-3 * max(abs(an), abs(fd), 1e-5), \
                f"seed {seed} {name}{idx}: {an} vs {fd}"
        assert checked >= 90  # nearly every scene is probe-safe

    @pytest.mark.parametrize("seed", range(8))
    def test_full_gradients_vs_finite_differences(self, seed):
        from conftest import depth_gaps_safe, fd_settings

        settings = fd_settings()
        n = 10
        f = orbit_frame()
        # derivative probes must not cross a compositing-order flip: redraw
        # deterministically until depths are well separated
        for attempt in range(50):
            rng = np.random.default_rng(100 + seed + 1000 * attempt)
            mu = rng.normal(size=(n, 3)) * 0.4
            quats = random_unit_quats(n, rng)
            slog = rng.normal(size=(n, 3)) * 0.2 - 1.6
            ol = rng.normal(size=n) * 0.8
            payload = rng.uniform(0.1, 1.0, (n, 3))
            probe = project_gaussians(mu, quats, slog, sigmoid(ol), f,
                                      skip_alpha=settings.skip_alpha)
            if depth_gaps_safe(probe.depth):
                break
        dimg = rng.normal(size=(32, 32, 3))

        def forward(mu_, q_, s_, ol_, pay_):
            sp = project_gaussians(mu_, q_, s_, sigmoid(ol_), f,
                                   skip_alpha=settings.skip_alpha)
            tiles = bin_and_sort(sp, f, settings)
            return render_splats(sp, tiles, pay_, sigmoid(ol_))

        res = forward(mu, quats, slog, ol, payload)
        g = render_backward(res, dimg)
        g_ol = g["opacity"] * sigmoid(ol) * (1 - sigmoid(ol))

        def loss():
            return float(np.sum(forward(mu, quats, slog, ol, payload).image * dimg))

        h = 1e-4
        params = [(mu, g["mu"]), (quats, g["quats"]), (slog, g["scale_log"]),
                  (ol, g_ol), (payload, g["payload"])]
        for arr, grad in params:
            flat_idx = rng.integers(arr.size, size=3)
            for fi in flat_idx:
                idx = np.unravel_index(fi, arr.shape)
                orig = arr[idx]
                arr[idx] = orig + h
                lp = loss()
                arr[idx] = orig - h
                lm = loss()
                arr[idx] = orig
                fd = (lp - lm) / (2 * h)
                an = grad[idx]
                assert abs(an - fd) <= 1e-3 * max(abs(an), abs(fd), 1e-5), \
                    f"param grad mismatch: {an} vs {fd}"
