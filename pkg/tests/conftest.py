"""Shared fixtures: constructed shadow-splat configurations and scene helpers."""

import numpy as np
import pytest

from gs3.frames import Frame, ProjectedSplats, look_at
from gs3.gaussians import initial_cloud
from gs3.quaternion import random_unit_quats
from gs3.rasterize import RasterSettings, bin_and_sort


def make_splats(mean2d, conic, depth, n_total=None):
    """Hand-built 2D splats (bypassing projection) for shadow-math tests."""
    mean2d = np.asarray(mean2d, dtype=np.float64)
    m = len(mean2d)
    return ProjectedSplats(
        gidx=np.arange(m, dtype=np.int64),
        mean2d=mean2d,
        conic=np.asarray(conic, dtype=np.float64),
        depth=np.asarray(depth, dtype=np.float64),
        radius=np.full(m, 64.0),
        cache={"n_total": n_total or m},
    )


def printed_shadow_configuration():
    """Two splats (occluder in front of a receiver) on a 2x2 shadow map whose
    receiver records exactly the printed density/transmittance pairs
    (0.6, 0.4) and (0.3, 0.6) plus one almost fully occluded ray of weight
    0.1, so the recorded weights total 1.0.

    Ray pixel centers: p1=(0.5,0.5), p2=(1.5,0.5), p3=(0.5,1.5). The fourth
    pixel's receiver record falls below the contribution threshold by
    construction. Returns (splats, opacity, frame-size, expected betas).
    """
    q1, q2, q3 = -2 * np.log(0.6), -2 * np.log(0.3), -2 * np.log(0.1)
    # receiver: diagonal conic, mean (0.5-u, 0.5-v) with u = 0.5
    u = 0.5
    a_r = (q2 - q1) / (2 * u + 1)
    b = q1 - a_r * u * u
    big_a = q3 - q1
    v = (b + np.sqrt(b * b + big_a * b)) / big_a
    c_r = big_a / (2 * v + 1)
    receiver_mean = (0.5 - u, 0.5 - v)
    receiver_conic = (a_r, 0.0, c_r)

    # occluder: mean exactly at p3, densities 0.6 / 0.4 at p1 / p2
    c_o = -2 * np.log(0.6)
    a_o = -2 * np.log(0.4) - c_o
    occluder_mean = (0.5, 1.5)
    occluder_conic = (a_o, 0.0, c_o)

    gamma_occ = 1.0 - 1e-12
    gamma_recv = 0.05
    splats = make_splats(
        mean2d=[occluder_mean, receiver_mean],
        conic=[occluder_conic, receiver_conic],
        depth=[1.0, 2.0],
    )
    opacity = np.array([gamma_occ, gamma_recv])
    return splats, opacity


def shadow_accumulate(splats, opacity, width, height,
                      settings: RasterSettings | None = None):
    from gs3.shadow import accumulate_shadow

    settings = settings or RasterSettings()
    frame = Frame(pose=np.eye(4), fx=1.0, fy=1.0, cx=width / 2, cy=height / 2,
                  width=width, height=height)
    tiles = bin_and_sort(splats, frame, settings)
    return accumulate_shadow(splats, tiles, opacity, settings)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def fd_settings():
    """Raster settings for finite-difference checks: the production skip
    threshold and early exit are step discontinuities of the rendered
    function, so derivative tests shrink them to negligible instead of
    probing across them. The backward code path is unchanged."""
    return RasterSettings(skip_alpha=1e-12, stop_t=0.0)


def depth_gaps_safe(depths, h=1e-3, bias=None):
    """True when no pair of depths sits within h of equality (compositing
    order flip) or, if bias is given, within h of the bias offset (shadow
    fold flip)."""
    d = np.sort(np.asarray(depths))
    if len(d) > 1 and np.min(np.diff(d)) < h:
        return False
    if bias is not None:
        diffs = np.abs(d[None, :] - d[:, None])
        off = np.abs(diffs - bias)
        np.fill_diagonal(off, np.inf)
        if off.min() < h:
            return False
    return True


def oracle_scene_cloud(n, rng, basis=2):
    """Random scene in the regime where per-pixel transmittance stays well
    above the compositing early-exit threshold (so the no-exit reference and
    the production renderer compute the same sum)."""
    cloud = initial_cloud(rng.normal(size=(n, 3)) * 0.45, basis, rng)
    cloud.rot = random_unit_quats(n, rng).astype(np.float32)
    cloud.scale_log = (rng.normal(size=(n, 3)) * 0.25 - 1.9).astype(np.float32)
    cloud.opacity_logit = (rng.normal(size=n) * 0.6 - 1.0).astype(np.float32)
    return cloud


def random_scene_cloud(n, rng, spread=0.3, basis=2):
    cloud = initial_cloud(rng.normal(size=(n, 3)) * spread, basis, rng)
    cloud.rot = random_unit_quats(n, rng).astype(np.float32)
    cloud.frame = random_unit_quats(n, rng).astype(np.float32)
    cloud.scale_log = (rng.normal(size=(n, 3)) * 0.25 - 1.7).astype(np.float32)
    cloud.opacity_logit = (rng.normal(size=n) * 0.8).astype(np.float32)
    cloud.rho_d_raw = (rng.normal(size=(n, 3)) * 0.5).astype(np.float32)
    cloud.rho_s_raw = (rng.normal(size=(n, 3)) * 0.5 - 0.5).astype(np.float32)
    cloud.alpha_raw = (rng.normal(size=(n, basis)) * 0.5).astype(np.float32)
    cloud.latent = (rng.normal(size=(n, 6)) * 0.3).astype(np.float32)
    return cloud


def orbit_camera(width=32, height=32, fx=42.0, eye=(0.3, 0.4, 2.8)):
    return Frame(pose=look_at(eye, (0, 0, 0)), fx=fx, fy=fx,
                 cx=width / 2, cy=height / 2, width=width, height=height)
