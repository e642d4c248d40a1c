"""Light visibility: splat every gaussian toward the light, aggregate
density-weighted transmittance per gaussian, refine with the small net.

For a shadow ray m crossing a splat, the splat records the transmittance
T_m of strictly nearer splats (depth < own depth - bias, bias 0.015 scene
units, guarding z-fighting) weighted by its own 2D density beta_m. The
per-gaussian shadow value is sum(beta_m T_m) / sum(beta_m); gaussians that
receive no ray keep T = 1 (a sliver invisible from the light should not
darken arbitrarily).

Point lights use a perspective frame centered at the light aimed at the
scene bound, covering 1.05x the bounding sphere; directional lights use an
orthographic frame. Point lights must sit strictly outside the bound.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .frames import Frame, ProjectedSplats, look_at, project_backward, project_gaussians
from .nets import (Mlp, mlp_backward, mlp_forward, positional_encode,
                   positional_encode_backward)
from .rasterize import RasterSettings, TileStructure, bin_and_sort

SHADOW_BIAS = 0.015
BOUND_MARGIN = 1.05
SHADOW_TABLE_MAGIC = b"GS3S"


class LightConfigurationError(ValueError):
    """Unusable light placement (e.g. point light inside the scene bound)."""


@dataclass
class LightDescriptor:
    """Point or directional emitter. `direction` is the propagation direction
    (source toward scene); incident directions are its negation."""

    kind: str
    position: np.ndarray | None = None
    direction: np.ndarray | None = None
    intensity: np.ndarray = field(default_factory=lambda: np.ones(3))
    falloff: str = "inverse_square"

    def __post_init__(self):
        if self.kind not in ("point", "directional"):
            raise ValueError(f"unknown light kind {self.kind!r}")
        self.intensity = np.broadcast_to(
            np.asarray(self.intensity, dtype=np.float64).ravel(), (3,)).copy()
        if np.any(self.intensity < 0):
            raise ValueError("light intensity must be nonnegative")
        if self.kind == "point":
            if self.position is None:
                raise ValueError("point light requires a position")
            self.position = np.asarray(self.position, dtype=np.float64)
        else:
            if self.direction is None:
                raise ValueError("directional light requires a direction")
            d = np.asarray(self.direction, dtype=np.float64)
            n = np.linalg.norm(d)
            if n < 1e-12:
                raise ValueError("light direction must be nonzero")
            self.direction = d / n
            self.falloff = "none"

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "intensity": self.intensity.tolist(),
             "falloff": self.falloff}
        if self.kind == "point":
            d["position"] = self.position.tolist()
        else:
            d["direction"] = self.direction.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LightDescriptor":
        return cls(kind=d["kind"], position=d.get("position"),
                   direction=d.get("direction"),
                   intensity=d.get("intensity", (1.0, 1.0, 1.0)),
                   falloff=d.get("falloff", "inverse_square"))


def point_light_frame(position, bound_center, bound_radius, width, height,
                      near=None) -> Frame:
    position = np.asarray(position, dtype=np.float64)
    center = np.asarray(bound_center, dtype=np.float64)
    dist = float(np.linalg.norm(position - center))
    if dist <= bound_radius:
        raise LightConfigurationError(
            f"point light at distance {dist:.4f} is inside the scene bound "
            f"(radius {bound_radius:.4f})")
    sin_half = min(BOUND_MARGIN * bound_radius / dist, np.sin(np.deg2rad(85.0)))
    tan_half = sin_half / np.sqrt(1.0 - sin_half * sin_half)
    pose = look_at(position, center)
    kwargs = {} if near is None else {"near": near}
    return Frame(pose=pose, fx=0.5 * width / tan_half, fy=0.5 * height / tan_half,
                 cx=width / 2.0, cy=height / 2.0, width=width, height=height,
                 mode="perspective", **kwargs)


def directional_light_frame(direction, bound_center, bound_radius, width, height) -> Frame:
    direction = np.asarray(direction, dtype=np.float64)
    direction = direction / np.linalg.norm(direction)
    center = np.asarray(bound_center, dtype=np.float64)
    extent = BOUND_MARGIN * bound_radius
    eye = center - direction * (extent + 1.0)
    pose = look_at(eye, center)
    return Frame(pose=pose, fx=0.5 * width / extent, fy=0.5 * height / extent,
                 cx=width / 2.0, cy=height / 2.0, width=width, height=height,
                 mode="orthographic")


def light_frame(light: LightDescriptor, bound_center, bound_radius,
                width: int, height: int) -> Frame:
    if light.kind == "point":
        return point_light_frame(light.position, bound_center, bound_radius, width, height)
    return directional_light_frame(light.direction, bound_center, bound_radius, width, height)


@dataclass
class ShadowResult:
    """Raw per-gaussian shadow values plus the state the backward pass replays."""

    raw_t: np.ndarray       # (N,)
    num: np.ndarray         # (N,) sum beta*T
    den: np.ndarray         # (N,) sum beta
    rays: np.ndarray        # (N,) contributing ray counts
    splats: ProjectedSplats = field(repr=False, default=None)
    tiles: TileStructure = field(repr=False, default=None)
    opacity: np.ndarray = field(repr=False, default=None)
    bias: float = SHADOW_BIAS


def accumulate_shadow(splats: ProjectedSplats, tiles: TileStructure,
                      opacity: np.ndarray,
                      settings: RasterSettings | None = None) -> ShadowResult:
    """Aggregate density-weighted transmittance over already-binned splats."""
    settings = settings or RasterSettings()
    opacity = np.asarray(opacity, dtype=np.float64)
    e = len(tiles.entries)
    num_partial = np.zeros(e)
    den_partial = np.zeros(e)
    ray_count = np.zeros(e, dtype=np.int64)
    _kernels.shadow_accumulate_forward(
        tiles.ptr, tiles.entries, np.ascontiguousarray(splats.mean2d),
        np.ascontiguousarray(splats.conic),
        np.ascontiguousarray(opacity[splats.gidx]),
        np.ascontiguousarray(splats.depth),
        tiles.width, tiles.height, settings.tile_size, tiles.tiles_x, tiles.tiles_y,
        settings.skip_alpha, settings.shadow_bias,
        num_partial, den_partial, ray_count)

    m = len(splats)
    num_s = np.bincount(tiles.entries, weights=num_partial, minlength=m)
    den_s = np.bincount(tiles.entries, weights=den_partial, minlength=m)
    ray_s = np.bincount(tiles.entries, weights=ray_count.astype(np.float64),
                        minlength=m).astype(np.int64)
    n = splats.cache["n_total"]
    num = np.zeros(n)
    den = np.zeros(n)
    rays = np.zeros(n, dtype=np.int64)
    num[splats.gidx] = num_s
    den[splats.gidx] = den_s
    rays[splats.gidx] = ray_s
    raw_t = np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0)
    return ShadowResult(raw_t=raw_t, num=num, den=den, rays=rays, splats=splats,
                        tiles=tiles, opacity=opacity, bias=settings.shadow_bias)


def shadow_splat_arrays(mu, quats, scale_log, opacity, frame: Frame,
                        settings: RasterSettings | None = None) -> ShadowResult:
    """Second splatting pass over raw parameter arrays."""
    settings = settings or RasterSettings()
    opacity = np.asarray(opacity, dtype=np.float64)
    splats = project_gaussians(mu, quats, scale_log, opacity, frame,
                               skip_alpha=settings.skip_alpha)
    tiles = bin_and_sort(splats, frame, settings)
    return accumulate_shadow(splats, tiles, opacity, settings)


def shadow_splat(model, light: LightDescriptor, resolution,
                 settings: RasterSettings | None = None) -> ShadowResult:
    """Per-gaussian raw shadow value for a scene model. `resolution` is
    (width, height), by default the training-image resolution."""
    w, h = resolution
    frame = light_frame(light, model.bound_center, model.bound_radius, w, h)
    cloud = model.cloud
    return shadow_splat_arrays(cloud.mu, cloud.rot, cloud.scale_log, cloud.opacity,
                               frame, settings)


def shadow_splat_backward(res: ShadowResult, d_raw_t: np.ndarray):
    """Gradients of the raw shadow values w.r.t. geometry and opacity."""
    splats, tiles = res.splats, res.tiles
    d_raw_t = np.asarray(d_raw_t, dtype=np.float64)
    covered = res.den > 0
    d_num = np.where(covered, d_raw_t / np.where(covered, res.den, 1.0), 0.0)
    d_den = np.where(covered, -d_raw_t * res.num / np.where(covered, res.den**2, 1.0), 0.0)

    e = len(tiles.entries)
    g_opac = np.zeros(e)
    g_mean = np.zeros((e, 2))
    g_conic = np.zeros((e, 3))
    _kernels.shadow_accumulate_backward(
        tiles.ptr, tiles.entries, np.ascontiguousarray(splats.mean2d),
        np.ascontiguousarray(splats.conic),
        np.ascontiguousarray(res.opacity[splats.gidx]),
        np.ascontiguousarray(splats.depth),
        tiles.width, tiles.height, tiles.settings.tile_size,
        tiles.tiles_x, tiles.tiles_y,
        tiles.settings.skip_alpha, res.bias,
        np.ascontiguousarray(d_num[splats.gidx]),
        np.ascontiguousarray(d_den[splats.gidx]),
        g_opac, g_mean, g_conic)

    m = len(splats)
    ent = tiles.entries
    d_opac_s = np.bincount(ent, weights=g_opac, minlength=m)
    d_mean_s = np.stack(
        [np.bincount(ent, weights=g_mean[:, c], minlength=m) for c in range(2)], axis=1)
    d_conic_s = np.stack(
        [np.bincount(ent, weights=g_conic[:, c], minlength=m) for c in range(3)], axis=1)

    n = splats.cache["n_total"]
    d_opacity = np.zeros(n)
    np.add.at(d_opacity, splats.gidx, d_opac_s)
    d_mu, d_quats, d_scale_log = project_backward(splats, d_mean_s, d_conic_s)
    return {"opacity": d_opacity, "mu": d_mu, "quats": d_quats,
            "scale_log": d_scale_log}


# ---------------------------------------------------------------------------
# Refinement net wiring.
# ---------------------------------------------------------------------------

def light_directions(light: LightDescriptor, mu: np.ndarray):
    """Unit directions toward the light, distances (point only) and falloff."""
    mu = np.asarray(mu, dtype=np.float64)
    n = len(mu)
    if light.kind == "point":
        d = light.position[None, :] - mu
        ri = np.linalg.norm(d, axis=1)
        wi = d / ri[:, None]
        if light.falloff == "inverse_square":
            falloff = 1.0 / np.maximum(ri * ri, 1e-12)
        else:
            falloff = np.ones(n)
        return wi, ri, falloff
    wi = np.tile(-light.direction, (n, 1))
    return wi, None, np.ones(n)


def shadow_image(model, light: LightDescriptor, camera: Frame,
                 settings: RasterSettings | None = None,
                 use_refinement: bool = True,
                 use_splatting: bool = True) -> np.ndarray:
    """Per-gaussian shadow values splatted to the camera over a fully-lit
    (T = 1) background; single channel in [0, 1]."""
    from .gaussians import sigmoid
    from .rasterize import render_splats
    settings = settings or RasterSettings()
    cloud = model.cloud
    opacity = sigmoid(np.asarray(cloud.opacity_logit, dtype=np.float64))
    if use_splatting:
        res = shadow_splat(model, light, (camera.width, camera.height), settings)
        raw_t = res.raw_t
    else:
        raw_t = np.ones(len(cloud))
    if use_refinement:
        wi, _, _ = light_directions(light, cloud.mu)
        payload = refine_shadow(model.phi, raw_t, wi, cloud.mu, cloud.latent)
    else:
        payload = raw_t
    splats = project_gaussians(cloud.mu, cloud.rot, cloud.scale_log, opacity,
                               camera, skip_alpha=settings.skip_alpha)
    tiles = bin_and_sort(splats, camera, settings)
    return render_splats(splats, tiles, payload[:, None], opacity,
                         background=1.0).image


def refine_input(raw_t, mu, wi, latent) -> np.ndarray:
    raw_t = np.asarray(raw_t, dtype=np.float64)
    return np.concatenate([
        raw_t[..., None], positional_encode(mu), positional_encode(wi),
        np.asarray(latent, dtype=np.float64),
    ], axis=-1)


def refine_shadow(phi: Mlp, raw_t, wi, mu, latent, want_cache: bool = False):
    """T' = net(T, encoded position, encoded incident direction, latent) in (0,1)."""
    x = refine_input(raw_t, mu, wi, latent)
    out, cache = mlp_forward(phi, x, want_cache=True)
    refined = out[..., 0]
    if want_cache:
        return refined, {"mlp": cache, "mu": np.asarray(mu, dtype=np.float64),
                         "wi": np.asarray(wi, dtype=np.float64), "phi": phi}
    return refined


def refine_shadow_backward(cache, d_refined):
    phi: Mlp = cache["phi"]
    d_out = np.asarray(d_refined, dtype=np.float64)[..., None]
    dW, db, dx = mlp_backward(phi, cache["mlp"], d_out)
    d_raw_t = dx[..., 0]
    pe = 9 * 3
    d_mu = positional_encode_backward(cache["mu"], dx[..., 1:1 + pe])
    d_wi = positional_encode_backward(cache["wi"], dx[..., 1 + pe:1 + 2 * pe])
    d_latent = dx[..., 1 + 2 * pe:]
    return {"dW": dW, "db": db, "raw_t": d_raw_t, "mu": d_mu, "wi": d_wi,
            "latent": d_latent}


def write_shadow_table(path, raw_t, refined_t) -> None:
    """Debug dump: magic "GS3S", u32 count, then f32 (raw, refined) pairs."""
    raw_t = np.asarray(raw_t, dtype="<f4")
    refined_t = np.asarray(refined_t, dtype="<f4")
    if raw_t.shape != refined_t.shape:
        raise ValueError("raw/refined length mismatch")
    pairs = np.stack([raw_t, refined_t], axis=1)
    with open(path, "wb") as f:
        f.write(SHADOW_TABLE_MAGIC)
        f.write(struct.pack("<I", len(raw_t)))
        f.write(pairs.tobytes())


def read_shadow_table(path):
    with open(path, "rb") as f:
        if f.read(4) != SHADOW_TABLE_MAGIC:
            raise ValueError("bad shadow table magic")
        (count,) = struct.unpack("<I", f.read(4))
        data = np.frombuffer(f.read(count * 8), dtype="<f4").reshape(count, 2)
    return data[:, 0].astype(np.float64), data[:, 1].astype(np.float64)
