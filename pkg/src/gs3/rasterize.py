"""Tiled forward/backward splatting built on the numba kernels.

`GS3_THREADS` caps render parallelism (1 = fully deterministic ordering, but
forward images and reduced gradients are thread-count independent anyway: the
per-entry gradient slots are reduced per gaussian in fixed index order).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import numba

from . import _kernels
from .frames import Frame, ProjectedSplats, project_backward

DEFAULT_TILE = 16
DEFAULT_SKIP_ALPHA = 1.0 / 255.0
DEFAULT_STOP_T = 1e-4


def set_render_threads(n: int) -> int:
    """Clamp and apply the numba thread count; returns the value in effect."""
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


if os.environ.get("GS3_THREADS"):
    set_render_threads(int(os.environ["GS3_THREADS"]))


@dataclass
class RasterSettings:
    tile_size: int = DEFAULT_TILE
    skip_alpha: float = DEFAULT_SKIP_ALPHA
    stop_t: float = DEFAULT_STOP_T
    shadow_bias: float = 0.015


@dataclass
class TileStructure:
    """Depth-sorted CSR tile lists for one projected view."""

    ptr: np.ndarray
    entries: np.ndarray
    tiles_x: int
    tiles_y: int
    width: int
    height: int
    settings: RasterSettings


def bin_and_sort(splats: ProjectedSplats, frame: Frame,
                 settings: RasterSettings | None = None) -> TileStructure:
    """Tile lists: every splat whose bounding box touches a tile, front to back,
    depth ties broken by ascending gaussian index."""
    settings = settings or RasterSettings()
    ts = settings.tile_size
    tiles_x = (frame.width + ts - 1) // ts
    tiles_y = (frame.height + ts - 1) // ts
    order = np.lexsort((splats.gidx, splats.depth)).astype(np.int64)
    bounds = _kernels.tile_bounds(
        np.ascontiguousarray(splats.mean2d), np.ascontiguousarray(splats.radius),
        ts, tiles_x, tiles_y)
    ptr, entries = _kernels.build_tile_lists(order, bounds, tiles_x, tiles_y)
    return TileStructure(ptr=ptr, entries=entries, tiles_x=tiles_x, tiles_y=tiles_y,
                         width=frame.width, height=frame.height, settings=settings)


@dataclass
class RenderResult:
    image: np.ndarray        # (H, W, C)
    transmittance: np.ndarray  # (H, W) final per-pixel T
    n_processed: np.ndarray    # (H, W) entries consumed before exit
    splats: ProjectedSplats = field(repr=False, default=None)
    tiles: TileStructure = field(repr=False, default=None)
    payload: np.ndarray = field(repr=False, default=None)
    opacity: np.ndarray = field(repr=False, default=None)
    background: np.ndarray = field(repr=False, default=None)


def render_splats(splats: ProjectedSplats, tiles: TileStructure, payload: np.ndarray,
                  opacity: np.ndarray, background=0.0) -> RenderResult:
    """Composite per-gaussian payload colors into an image.

    payload: (N, C) per original gaussian; opacity: (N,) activated gammas.
    """
    payload = np.atleast_2d(np.asarray(payload, dtype=np.float64))
    opacity = np.asarray(opacity, dtype=np.float64)
    channels = payload.shape[1]
    bg = np.broadcast_to(np.asarray(background, dtype=np.float64).ravel(), (channels,)).copy()

    colors = np.ascontiguousarray(payload[splats.gidx])
    opac = np.ascontiguousarray(opacity[splats.gidx])
    h, w = tiles.height, tiles.width
    out_img = np.zeros((h, w, channels))
    out_T = np.ones((h, w))
    out_n = np.zeros((h, w), dtype=np.int64)
    _kernels.composite_forward(
        tiles.ptr, tiles.entries, np.ascontiguousarray(splats.mean2d),
        np.ascontiguousarray(splats.conic), opac, colors, bg,
        w, h, tiles.settings.tile_size, tiles.tiles_x, tiles.tiles_y,
        tiles.settings.skip_alpha, tiles.settings.stop_t, out_img, out_T, out_n)
    return RenderResult(image=out_img, transmittance=out_T, n_processed=out_n,
                        splats=splats, tiles=tiles, payload=payload, opacity=opacity,
                        background=bg)


def render_backward_splats(res: RenderResult, d_image: np.ndarray):
    """Kernel-level gradients: per-gaussian payload/opacity plus per-splat
    mean2d/conic (not yet chained through the projection)."""
    splats, tiles = res.splats, res.tiles
    E = len(tiles.entries)
    channels = res.payload.shape[1]
    g_color = np.zeros((E, channels))
    g_opac = np.zeros(E)
    g_mean = np.zeros((E, 2))
    g_conic = np.zeros((E, 3))
    colors = np.ascontiguousarray(res.payload[splats.gidx])
    opac = np.ascontiguousarray(res.opacity[splats.gidx])
    _kernels.composite_backward(
        tiles.ptr, tiles.entries, np.ascontiguousarray(splats.mean2d),
        np.ascontiguousarray(splats.conic), opac, colors, res.background,
        tiles.width, tiles.height, tiles.settings.tile_size,
        tiles.tiles_x, tiles.tiles_y, tiles.settings.skip_alpha,
        np.ascontiguousarray(d_image, dtype=np.float64),
        res.transmittance, res.n_processed,
        g_color, g_opac, g_mean, g_conic)

    m = len(splats)
    ent = tiles.entries
    d_color_s = np.stack(
        [np.bincount(ent, weights=g_color[:, c], minlength=m) for c in range(channels)],
        axis=1)
    d_opac_s = np.bincount(ent, weights=g_opac, minlength=m)
    d_mean_s = np.stack(
        [np.bincount(ent, weights=g_mean[:, c], minlength=m) for c in range(2)], axis=1)
    d_conic_s = np.stack(
        [np.bincount(ent, weights=g_conic[:, c], minlength=m) for c in range(3)], axis=1)

    n = res.splats.cache["n_total"]
    d_payload = np.zeros((n, channels))
    d_opacity = np.zeros(n)
    np.add.at(d_payload, splats.gidx, d_color_s)
    np.add.at(d_opacity, splats.gidx, d_opac_s)
    return {
        "payload": d_payload, "opacity": d_opacity,
        "mean2d": d_mean_s, "conic": d_conic_s,
    }


def render_backward(res: RenderResult, d_image: np.ndarray):
    """Gradients of a composited image w.r.t. payload, opacity and 3D geometry.

    Returns dict with d_payload (N, C), d_opacity (N,), d_mu, d_quats,
    d_scale_log (dense over the cloud).
    """
    g = render_backward_splats(res, d_image)
    d_mu, d_quats, d_scale_log = project_backward(res.splats, g["mean2d"], g["conic"])
    g.update({"mu": d_mu, "quats": d_quats, "scale_log": d_scale_log})
    return g


def render_cloud(cloud, frame: Frame, payload, background=0.0,
                 settings: RasterSettings | None = None) -> RenderResult:
    """Project + bin + composite a cloud's payload in one call."""
    from .frames import project_gaussians

    settings = settings or RasterSettings()
    splats = project_gaussians(cloud.mu, cloud.rot, cloud.scale_log, cloud.opacity,
                               frame, skip_alpha=settings.skip_alpha)
    tiles = bin_and_sort(splats, frame, settings)
    return render_splats(splats, tiles, payload, cloud.opacity, background)
