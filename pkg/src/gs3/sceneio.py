"""Dataset manifests, checkpoints, toy-scene generation and reference oracles.

Manifest: UTF-8 JSON, a shared intrinsics block plus per-frame image path,
4x4 row-major camera_to_world (x-right / y-down / z-forward camera axes) and
a light block. On load the scene is rescaled so the camera + point-light
bounding sphere (centroid-centered) has radius 1; inverse-square intensities
are rescaled to keep images unchanged, and the applied (center, scale) is
recorded so writing round-trips.

Checkpoint: binary, magic "GS3C", u32 version(=1), u32 N, u32 J, then f32
little-endian arrays in fixed order: mu, scale_log, rot, opacity_logit,
frame, rho_d_raw, rho_s_raw, alpha_raw, latent, basis quats, basis
sigma_log, shadow-net layers (weight then bias, in order), residual-net
layers, bound_center, bound_radius; then u32 iteration, u32 config length
and the config echo as JSON bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frames import Frame, look_at, project_gaussians
from .gaussians import (AngularGaussianBasis, GaussianCloud, SceneModel)
from .image import load_image, write_png
from .metrics import psnr  # noqa: F401  (re-exported: image metric lives with IO tooling)
from .nets import Mlp, RESIDUAL_NET_WIDTHS, SHADOW_NET_WIDTHS
from .shadow import LightDescriptor

CHECKPOINT_MAGIC = b"GS3C"
CHECKPOINT_VERSION = 1


class ManifestError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class FrameRecord:
    image_path: str
    camera_to_world: np.ndarray
    light: LightDescriptor


@dataclass
class DatasetManifest:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    frames: list[FrameRecord]
    scene_scale: float | None = None
    norm_center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    norm_scale: float = 1.0
    root: Path = field(default_factory=Path)

    def __len__(self) -> int:
        return len(self.frames)

    def camera_frame(self, i: int) -> Frame:
        c2w = self.frames[i].camera_to_world
        pose = np.eye(4)
        pose[:3, :3] = c2w[:3, :3].T
        pose[:3, 3] = -c2w[:3, :3].T @ c2w[:3, 3]
        return Frame(pose=pose, fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy,
                     width=self.width, height=self.height)

    def load_target(self, i: int) -> np.ndarray:
        return load_image(self.root / self.frames[i].image_path)

    def camera_positions(self) -> np.ndarray:
        return np.stack([f.camera_to_world[:3, 3] for f in self.frames])


def _check_rigid(c2w: np.ndarray, idx: int):
    if c2w.shape != (4, 4):
        raise ManifestError(f"frame {idx}: camera_to_world must be 4x4")
    R = c2w[:3, :3]
    if np.abs(R @ R.T - np.eye(3)).max() > 1e-4:
        raise ManifestError(f"frame {idx}: camera_to_world rotation is not orthonormal")
    if np.linalg.det(R) < 0:
        raise ManifestError(f"frame {idx}: camera_to_world is left-handed")
    if np.abs(c2w[3] - np.array([0, 0, 0, 1])).max() > 1e-9:
        raise ManifestError(f"frame {idx}: camera_to_world last row must be [0,0,0,1]")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest is not valid JSON: {e}") from e
    for key in ("camera", "frames"):
        if key not in data:
            raise ManifestError(f"manifest missing top-level field {key!r}")
    cam = data["camera"]
    for key in ("fx", "fy", "cx", "cy", "width", "height"):
        if key not in cam:
            raise ManifestError(f"camera block missing field {key!r}")
    if not data["frames"]:
        raise ManifestError("manifest has no frames")

    frames = []
    for i, fr in enumerate(data["frames"]):
        for key in ("image_path", "camera_to_world", "light"):
            if key not in fr:
                raise ManifestError(f"frame {i}: missing field {key!r}")
        c2w = np.asarray(fr["camera_to_world"], dtype=np.float64)
        _check_rigid(c2w, i)
        try:
            light = LightDescriptor.from_dict(fr["light"])
        except (KeyError, ValueError) as e:
            raise ManifestError(f"frame {i}: bad light block: {e}") from e
        frames.append(FrameRecord(image_path=fr["image_path"], camera_to_world=c2w,
                                  light=light))

    # normalize: centroid-centered bounding sphere of cameras + point lights -> radius 1
    pts = [f.camera_to_world[:3, 3] for f in frames]
    pts += [f.light.position for f in frames if f.light.kind == "point"]
    pts = np.stack(pts)
    center = pts.mean(axis=0)
    radius = float(np.linalg.norm(pts - center, axis=1).max())
    scale = 1.0 / radius if radius > 0 else 1.0
    for f in frames:
        f.camera_to_world = f.camera_to_world.copy()
        f.camera_to_world[:3, 3] = (f.camera_to_world[:3, 3] - center) * scale
        if f.light.kind == "point":
            f.light.position = (f.light.position - center) * scale
            if f.light.falloff == "inverse_square":
                f.light.intensity = f.light.intensity * scale**2

    scene_scale = data.get("scene_scale")
    if scene_scale is not None:
        scene_scale = float(scene_scale) * scale
    return DatasetManifest(
        fx=float(cam["fx"]), fy=float(cam["fy"]), cx=float(cam["cx"]), cy=float(cam["cy"]),
        width=int(cam["width"]), height=int(cam["height"]), frames=frames,
        scene_scale=scene_scale, norm_center=center, norm_scale=scale, root=path.parent,
    )


def save_manifest(manifest: DatasetManifest, path) -> None:
    """Write back in original (de-normalized) units."""
    path = Path(path)
    inv = 1.0 / manifest.norm_scale
    frames = []
    for f in manifest.frames:
        c2w = f.camera_to_world.copy()
        c2w[:3, 3] = c2w[:3, 3] * inv + manifest.norm_center
        light = LightDescriptor.from_dict(f.light.to_dict())
        if light.kind == "point":
            light.position = light.position * inv + manifest.norm_center
            if light.falloff == "inverse_square":
                light.intensity = light.intensity * inv**2
        frames.append({"image_path": f.image_path, "camera_to_world": c2w.tolist(),
                       "light": light.to_dict()})
    data = {
        "camera": {"fx": manifest.fx, "fy": manifest.fy, "cx": manifest.cx,
                   "cy": manifest.cy, "width": manifest.width, "height": manifest.height},
        "frames": frames,
    }
    if manifest.scene_scale is not None:
        data["scene_scale"] = manifest.scene_scale / manifest.norm_scale
    path.write_text(json.dumps(data, indent=1, sort_keys=True))


# ---------------------------------------------------------------------------
# Checkpoints.
# ---------------------------------------------------------------------------

def _cloud_arrays(cloud: GaussianCloud):
    return [cloud.mu, cloud.scale_log, cloud.rot, cloud.opacity_logit, cloud.frame,
            cloud.rho_d_raw, cloud.rho_s_raw, cloud.alpha_raw, cloud.latent]


def _net_arrays(net: Mlp):
    out = []
    for w, b in zip(net.weights, net.biases):
        out.append(w)
        out.append(b)
    return out


def checkpoint_size(n: int, j: int, config: dict) -> int:
    """Expected file size in bytes for N gaussians, J lobes and a config echo."""
    floats = n * (3 + 3 + 4 + 1 + 4 + 3 + 3 + j + 6) + j * (4 + 3)
    for widths in (SHADOW_NET_WIDTHS, RESIDUAL_NET_WIDTHS):
        for fi, fo in zip(widths[:-1], widths[1:]):
            floats += fo * fi + fo
    floats += 4  # bound center + radius
    blob = json.dumps(config, sort_keys=True).encode()
    return 16 + 4 * floats + 4 + 4 + len(blob)


def save_checkpoint(model: SceneModel, path, config: dict | None = None) -> None:
    config = config or {}
    cloud = model.cloud
    arrays = _cloud_arrays(cloud)
    arrays += [model.basis.quats, model.basis.sigma_log]
    arrays += _net_arrays(model.phi)
    arrays += _net_arrays(model.psi)
    arrays += [np.asarray(model.bound_center), np.asarray([model.bound_radius])]
    blob = json.dumps(config, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<III", CHECKPOINT_VERSION, len(cloud), model.basis_count))
        for a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
        f.write(struct.pack("<I", model.iteration))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)


def load_checkpoint(path, want_config: bool = False):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad checkpoint magic/version: {magic!r}")
        version, n, j = struct.unpack("<III", f.read(12))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")

        def take(shape):
            count = int(np.prod(shape))
            raw = f.read(4 * count)
            if len(raw) != 4 * count:
                raise CheckpointError("truncated checkpoint payload")
            return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()

        cloud = GaussianCloud(
            mu=take((n, 3)), scale_log=take((n, 3)), rot=take((n, 4)),
            opacity_logit=take((n,)), frame=take((n, 4)), rho_d_raw=take((n, 3)),
            rho_s_raw=take((n, 3)), alpha_raw=take((n, j)), latent=take((n, 6)),
        )
        basis = AngularGaussianBasis(take((j, 4)), take((j, 3)))

        def take_net(widths):
            weights, biases = [], []
            for fi, fo in zip(widths[:-1], widths[1:]):
                weights.append(take((fo, fi)))
                biases.append(take((fo,)))
            return Mlp(weights, biases)

        phi = take_net(SHADOW_NET_WIDTHS)
        psi = take_net(RESIDUAL_NET_WIDTHS)
        bound_center = take((3,)).astype(np.float64)
        bound_radius = float(take((1,))[0])
        tail = f.read(8)
        if len(tail) != 8:
            raise CheckpointError("truncated checkpoint trailer")
        iteration, blob_len = struct.unpack("<II", tail)
        blob = f.read(blob_len)
        if len(blob) != blob_len:
            raise CheckpointError("truncated checkpoint config echo")
    model = SceneModel(cloud=cloud, basis=basis, phi=phi, psi=psi,
                       bound_center=bound_center, bound_radius=bound_radius,
                       iteration=iteration)
    if want_config:
        return model, json.loads(blob.decode() or "{}")
    return model


# ---------------------------------------------------------------------------
# Reference (oracle) renderer: global per-pixel sort, f64, no tiles, no exit.
# ---------------------------------------------------------------------------

def oracle_render(cloud: GaussianCloud, frame: Frame, payload, background=0.0,
                  skip_alpha: float = 1.0 / 255.0) -> np.ndarray:
    """Naive compositing reference for the tiled renderer.

    Shares only the projection math and the contribution rule (a splat counts
    at a pixel iff its log-density clears log(skip_alpha/opacity), i.e.
    alpha >= skip_alpha); everything else (global depth sort, every splat
    evaluated at every pixel, float64, no early termination) is deliberately
    naive.
    """
    payload = np.atleast_2d(np.asarray(payload, dtype=np.float64))
    channels = payload.shape[1]
    bg = np.broadcast_to(np.asarray(background, dtype=np.float64).ravel(), (channels,))
    opacity = cloud.opacity
    splats = project_gaussians(cloud.mu, cloud.rot, cloud.scale_log, opacity, frame,
                               skip_alpha=skip_alpha)
    h, w = frame.height, frame.width
    ys, xs = np.mgrid[0:h, 0:w]
    px = np.stack([xs + 0.5, ys + 0.5], axis=-1).reshape(-1, 2)

    order = np.lexsort((splats.gidx, splats.depth))
    T = np.ones(h * w)
    acc = np.zeros((h * w, channels))
    for oi in order:
        d = px - splats.mean2d[oi]
        ca, cb, cc = splats.conic[oi]
        gamma = opacity[splats.gidx[oi]]
        power = -0.5 * (ca * d[:, 0] ** 2 + cc * d[:, 1] ** 2) - cb * d[:, 0] * d[:, 1]
        active = (power >= np.log(skip_alpha / gamma)) & (power <= 0.0)
        alpha = np.where(active, gamma * np.exp(np.minimum(power, 0.0)), 0.0)
        acc += payload[splats.gidx[oi]][None, :] * (alpha * T)[:, None]
        T *= 1.0 - alpha
    acc += bg[None, :] * T[:, None]
    return acc.reshape(h, w, channels)


def line_integral_transmittance(cloud: GaussianCloud, light: LightDescriptor,
                                n_steps: int = 256) -> np.ndarray:
    """exp(-integral of the other gaussians' opacity-weighted density) along
    each center-to-light segment; a physical sanity reference, not a match."""
    mu = np.asarray(cloud.mu, dtype=np.float64)
    n = len(mu)
    gamma = cloud.opacity
    covs = cloud.covariances()
    inv_covs = np.linalg.inv(covs)
    out = np.empty(n)
    for i in range(n):
        if light.kind == "point":
            seg_end = light.position
        else:
            seg_end = mu[i] - light.direction * 4.0
        ts = (np.arange(n_steps) + 0.5) / n_steps
        pts = mu[i][None, :] * (1 - ts[:, None]) + np.asarray(seg_end)[None, :] * ts[:, None]
        seg_len = np.linalg.norm(np.asarray(seg_end) - mu[i])
        dens = np.zeros(n_steps)
        for k in range(n):
            if k == i:
                continue
            d = pts - mu[k]
            q = np.einsum("si,ij,sj->s", d, inv_covs[k], d)
            dens += gamma[k] * np.exp(-0.5 * q)
        out[i] = np.exp(-dens.sum() * seg_len / n_steps)
    return out


# ---------------------------------------------------------------------------
# Toy datasets: analytic ray-traced spheres.
# ---------------------------------------------------------------------------

TOY_KINDS = ("diffuse-sphere", "glossy-sphere", "occluder-pair")
_MAIN_SPHERE = (np.zeros(3), 0.5, np.array([0.80, 0.55, 0.35]))
_OCCLUDER = (np.array([0.0, 0.78, 0.0]), 0.22, np.array([0.40, 0.45, 0.85]))
_GLOSS_KS = 0.12
_GLOSS_EXP = 40.0


def _ray_sphere(origin, direction, center, radius):
    """Smallest positive hit parameter per ray, inf when missed."""
    oc = origin - center
    b = np.einsum("ri,ri->r", direction, oc)
    c = np.einsum("ri,ri->r", oc, oc) - radius**2
    disc = b * b - c
    hit = disc >= 0
    sq = np.sqrt(np.maximum(disc, 0.0))
    t0 = -b - sq
    t1 = -b + sq
    t = np.where(t0 > 1e-6, t0, np.where(t1 > 1e-6, t1, np.inf))
    return np.where(hit, t, np.inf)


def raytrace_toy(kind: str, camera: Frame, light: LightDescriptor) -> np.ndarray:
    """Analytic ground-truth image (linear, gamma 1.0) for the toy scenes."""
    if kind not in TOY_KINDS:
        raise ValueError(f"unknown toy kind {kind!r}")
    spheres = [_MAIN_SPHERE]
    if kind == "occluder-pair":
        spheres.append(_OCCLUDER)
    h, w = camera.height, camera.width
    ys, xs = np.mgrid[0:h, 0:w]
    dirs_cam = np.stack([
        (xs + 0.5 - camera.cx) / camera.fx,
        (ys + 0.5 - camera.cy) / camera.fy,
        np.ones_like(xs, dtype=np.float64),
    ], axis=-1).reshape(-1, 3)
    R = camera.rotation
    dirs = dirs_cam @ R  # camera -> world
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origin = np.broadcast_to(camera.origin, dirs.shape)

    best_t = np.full(len(dirs), np.inf)
    best_idx = np.full(len(dirs), -1)
    for si, (c, r, _) in enumerate(spheres):
        t = _ray_sphere(origin, dirs, c, r)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_idx = np.where(closer, si, best_idx)

    img = np.zeros((len(dirs), 3))
    hit = best_idx >= 0
    if np.any(hit):
        p = origin[hit] + dirs[hit] * best_t[hit][:, None]
        si = best_idx[hit]
        centers = np.stack([spheres[i][0] for i in si])
        radii = np.array([spheres[i][1] for i in si])
        albedo = np.stack([spheres[i][2] for i in si])
        normal = (p - centers) / radii[:, None]
        if light.kind == "point":
            lvec = light.position[None, :] - p
            dist = np.linalg.norm(lvec, axis=1)
            wi = lvec / dist[:, None]
            radiance = light.intensity[None, :] / dist[:, None] ** 2 \
                if light.falloff == "inverse_square" else light.intensity[None, :]
        else:
            wi = np.broadcast_to(-light.direction, p.shape)
            dist = np.full(len(p), np.inf)
            radiance = np.broadcast_to(light.intensity, p.shape)
        ndl = np.maximum(np.einsum("ri,ri->r", normal, wi), 0.0)

        # binary hard shadow: occluded if the segment to the light hits any sphere
        eps_p = p + normal * 1e-5
        visible = ndl > 0
        for c, r, _ in spheres:
            t = _ray_sphere(eps_p, wi, c, r)
            visible &= ~(t < dist - 1e-5)
        shade = albedo / np.pi * (ndl * visible)[:, None] * radiance
        if kind == "glossy-sphere":
            wo = -dirs[hit]
            hv = wi + wo
            hv /= np.maximum(np.linalg.norm(hv, axis=1, keepdims=True), 1e-12)
            ndh = np.maximum(np.einsum("ri,ri->r", normal, hv), 0.0)
            shade += _GLOSS_KS * (ndh**_GLOSS_EXP * (ndl > 0) * visible)[:, None] * radiance
        img[hit] = shade
    return img.reshape(h, w, 3)


def generate_toy_dataset(kind: str, n_views: int, n_lights: int, resolution: int,
                         seed: int, out_dir, manifest_name: str = "manifest.json"):
    """Write a toy OLAT dataset (PNG images + manifest); seeded and deterministic.

    Images land in a subdirectory derived from the manifest name, so several
    splits (train/test) can share one dataset root.
    """
    if resolution > 256:
        raise ValueError("toy datasets cap at 256px")
    out_dir = Path(out_dir)
    stem = Path(manifest_name).stem
    image_dir = "images" if stem == "manifest" else f"images_{stem.replace('manifest_', '')}"
    (out_dir / image_dir).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    cam_radius = 2.7
    # fibonacci placement, jittered deterministically, lower hemisphere allowed
    i = np.arange(n_views) + 0.5
    y = 1.0 - 2.0 * i / n_views
    r = np.sqrt(np.maximum(1.0 - y * y, 0.0))
    phi = i * np.pi * (3.0 - np.sqrt(5.0)) + rng.uniform(0, 2 * np.pi)
    cams = cam_radius * np.stack([r * np.cos(phi), y * 0.85, r * np.sin(phi)], axis=1)

    light_dirs = rng.normal(size=(n_lights, 3))
    light_dirs /= np.linalg.norm(light_dirs, axis=1, keepdims=True)
    light_radii = rng.uniform(3.0, 3.8, size=n_lights)
    lights = light_dirs * light_radii[:, None]

    fov_scale = 1.0  # ~53 deg horizontal: sphere fills most of the frame
    fx = fy = resolution * fov_scale
    cx = cy = resolution / 2.0

    frames = []
    for vi in range(n_views):
        li = vi % n_lights
        intensity = 2.5 * light_radii[li] ** 2
        light = LightDescriptor(kind="point", position=lights[li],
                                intensity=(intensity, intensity, intensity),
                                falloff="inverse_square")
        cam = Frame(pose=look_at(cams[vi], np.zeros(3)), fx=fx, fy=fy, cx=cx, cy=cy,
                    width=resolution, height=resolution)
        img = raytrace_toy(kind, cam, light)
        rel = f"{image_dir}/{vi:04d}.png"
        write_png(img, out_dir / rel)
        frames.append({
            "image_path": rel,
            "camera_to_world": cam.camera_to_world.tolist(),
            "light": light.to_dict(),
        })
    data = {
        "camera": {"fx": fx, "fy": fy, "cx": cx, "cy": cy,
                   "width": resolution, "height": resolution},
        "scene_scale": 1.0 if kind == "occluder-pair" else 0.6,
        "frames": frames,
    }
    (out_dir / manifest_name).write_text(json.dumps(data, indent=1, sort_keys=True))
    return out_dir / manifest_name
