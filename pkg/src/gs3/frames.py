"""Camera/light frames and the 3D -> 2D gaussian projection with its backward.

A Frame is a rigid world-to-view transform plus pinhole-style intrinsics.
View axes: x right, y down, z forward; pixel (i, j) has center (i+0.5, j+0.5)
in continuous image coordinates. Perspective frames project u = fx*x/z + cx;
orthographic frames use u = fx*x + cx with fx in pixels per scene unit and a
projection Jacobian that simply drops the depth row.

The 2D covariance is J W Sigma W^T J^T (Jacobian of the projection at the
mean, times the view rotation), dilated by +0.3 px^2 on the diagonal. The
per-splat bounding radius is max(3, sqrt(2*ln(opacity/skip_alpha))) standard
deviations so it always contains the whole region where a contribution can
pass the compositing skip test; this is what lets the tiled renderer agree
with a naive per-pixel reference to float precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quaternion import quat_to_rotmat, quat_to_rotmat_backward

DILATION = 0.3
DEFAULT_NEAR = 0.01
DEFAULT_SKIP_ALPHA = 1.0 / 255.0
MIN_RADIUS_SIGMAS = 3.0


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """World-to-view 4x4 for a camera at `eye` looking at `target` (y-up world)."""
    eye = np.asarray(eye, dtype=np.float64)
    f = np.asarray(target, dtype=np.float64) - eye
    f = f / np.linalg.norm(f)
    up = np.asarray(up, dtype=np.float64)
    r = np.cross(f, up)
    if np.linalg.norm(r) < 1e-8:
        r = np.cross(f, np.array([1.0, 0.0, 0.0]))
    r = r / np.linalg.norm(r)
    d = np.cross(f, r)
    R_c2w = np.stack([r, d, f], axis=1)  # columns: right, down, forward
    w2v = np.eye(4)
    w2v[:3, :3] = R_c2w.T
    w2v[:3, 3] = -R_c2w.T @ eye
    return w2v


@dataclass
class Frame:
    """Camera or light-centered view: intrinsics + world-to-view pose."""

    pose: np.ndarray  # (4, 4) world-to-view rigid transform
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    mode: str = "perspective"  # or "orthographic"
    near: float = DEFAULT_NEAR

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64)
        if self.pose.shape != (4, 4):
            raise ValueError("pose must be a 4x4 matrix")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        if self.mode not in ("perspective", "orthographic"):
            raise ValueError(f"unknown projection mode {self.mode!r}")

    @property
    def rotation(self) -> np.ndarray:
        return self.pose[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.pose[:3, 3]

    @property
    def origin(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def camera_to_world(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation.T
        out[:3, 3] = self.origin
        return out

    def to_view(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def resized(self, width: int, height: int) -> "Frame":
        """Same field of view at a different resolution."""
        sx, sy = width / self.width, height / self.height
        return Frame(self.pose.copy(), self.fx * sx, self.fy * sy,
                     self.cx * sx, self.cy * sy, width, height, self.mode, self.near)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height, "mode": self.mode,
            "near": self.near, "camera_to_world": self.camera_to_world.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Frame":
        c2w = np.asarray(d["camera_to_world"], dtype=np.float64)
        if c2w.shape != (4, 4):
            raise ValueError("camera_to_world must be 4x4")
        pose = np.eye(4)
        pose[:3, :3] = c2w[:3, :3].T
        pose[:3, 3] = -c2w[:3, :3].T @ c2w[:3, 3]
        return cls(pose=pose, fx=float(d["fx"]), fy=float(d["fy"]),
                   cx=float(d["cx"]), cy=float(d["cy"]),
                   width=int(d["width"]), height=int(d["height"]),
                   mode=d.get("mode", "perspective"),
                   near=float(d.get("near", DEFAULT_NEAR)))


@dataclass
class ProjectedSplats:
    """Unculled 2D splats (compacted) plus everything the backward pass needs."""

    gidx: np.ndarray      # (M,) indices into the original cloud
    mean2d: np.ndarray    # (M, 2)
    conic: np.ndarray     # (M, 3) upper-triangular inverse 2D covariance (a, b, c)
    depth: np.ndarray     # (M,)
    radius: np.ndarray    # (M,) bounding radius in pixels
    cache: dict = field(repr=False, default_factory=dict)

    def __len__(self) -> int:
        return len(self.gidx)


def project_gaussians(mu, quats, scale_log, opacity, frame: Frame,
                      skip_alpha: float = DEFAULT_SKIP_ALPHA) -> ProjectedSplats:
    """Project a cloud into a frame, culling behind-near and off-screen splats."""
    mu = np.asarray(mu, dtype=np.float64)
    quats = np.asarray(quats, dtype=np.float64)
    scale_log = np.asarray(scale_log, dtype=np.float64)
    opacity = np.asarray(opacity, dtype=np.float64)

    W = frame.rotation
    t = mu @ W.T + frame.translation
    z = t[:, 2]
    visible = (z > frame.near) & (opacity > skip_alpha)
    # radius multiplier: everything that can beat the skip threshold is inside
    mult = np.zeros_like(opacity)
    ok = opacity > skip_alpha
    mult[ok] = np.maximum(MIN_RADIUS_SIGMAS, np.sqrt(2.0 * np.log(opacity[ok] / skip_alpha)))

    idx = np.nonzero(visible)[0]
    t = t[idx]
    z = z[idx]
    scales = np.exp(scale_log[idx])
    R = quat_to_rotmat(quats[idx])
    Sigma = np.einsum("nik,nk,njk->nij", R, scales**2, R)

    if frame.mode == "perspective":
        inv_z = 1.0 / z
        mean2d = np.stack([frame.fx * t[:, 0] * inv_z + frame.cx,
                           frame.fy * t[:, 1] * inv_z + frame.cy], axis=1)
        J = np.zeros((len(idx), 2, 3))
        J[:, 0, 0] = frame.fx * inv_z
        J[:, 0, 2] = -frame.fx * t[:, 0] * inv_z**2
        J[:, 1, 1] = frame.fy * inv_z
        J[:, 1, 2] = -frame.fy * t[:, 1] * inv_z**2
    else:
        mean2d = np.stack([frame.fx * t[:, 0] + frame.cx,
                           frame.fy * t[:, 1] + frame.cy], axis=1)
        J = np.zeros((len(idx), 2, 3))
        J[:, 0, 0] = frame.fx
        J[:, 1, 1] = frame.fy

    M = J @ W[None]
    cov2d = np.einsum("nij,njk,nlk->nil", M, Sigma, M)
    cov2d[:, 0, 0] += DILATION
    cov2d[:, 1, 1] += DILATION
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)

    lam_max = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    radius = mult[idx] * np.sqrt(lam_max)

    on_screen = (
        (mean2d[:, 0] + radius > 0.0) & (mean2d[:, 0] - radius < frame.width)
        & (mean2d[:, 1] + radius > 0.0) & (mean2d[:, 1] - radius < frame.height)
    )
    sel = np.nonzero(on_screen)[0]
    cache = {
        "frame": frame, "n_total": len(mu), "idx": idx[sel],
        "t": t[sel], "z": z[sel], "scales": scales[sel], "R": R[sel],
        "quats": quats[idx[sel]], "Sigma": Sigma[sel], "J": J[sel], "M": M[sel],
        "cov2d": cov2d[sel], "det": det[sel], "conic": conic[sel],
    }
    return ProjectedSplats(
        gidx=idx[sel].astype(np.int64), mean2d=mean2d[sel], conic=conic[sel],
        depth=z[sel], radius=radius[sel], cache=cache,
    )


def project_backward(splats: ProjectedSplats, d_mean2d, d_conic):
    """Pull gradients on (mean2d, conic) back to (mu, rot quats, scale_log).

    Returns (d_mu, d_quats, d_scale_log) as dense (N, ...) arrays over the
    original cloud. Depth and the bounding radius carry no gradients (they
    only steer sorting and binning).
    """
    c = splats.cache
    frame: Frame = c["frame"]
    idx = c["idx"]
    n = c["n_total"]
    t, z = c["t"], c["z"]
    M, Sigma, J = c["M"], c["Sigma"], c["J"]
    a = c["cov2d"][:, 0, 0]
    b = c["cov2d"][:, 0, 1]
    cc = c["cov2d"][:, 1, 1]
    det = c["det"]
    d_mean2d = np.asarray(d_mean2d, dtype=np.float64)
    d_conic = np.asarray(d_conic, dtype=np.float64)
    dA, dB, dC = d_conic[:, 0], d_conic[:, 1], d_conic[:, 2]

    # conic (A,B,C) = (cc, -b, a)/det with det = a*cc - b^2
    inv_det2 = 1.0 / det**2
    da = (-dA * cc * cc + dB * b * cc - dC * b * b) * inv_det2
    db = (2 * dA * b * cc - dB * (det + 2 * b * b) + 2 * dC * a * b) * inv_det2
    dc = (-dA * b * b + dB * a * b - dC * a * a) * inv_det2

    d_cov = np.empty((len(idx), 2, 2))
    d_cov[:, 0, 0] = da
    d_cov[:, 0, 1] = 0.5 * db
    d_cov[:, 1, 0] = 0.5 * db
    d_cov[:, 1, 1] = dc

    # cov2d = M Sigma M^T (+ constant dilation)
    d_M = 2.0 * np.einsum("nij,njk,nlk->nil", d_cov, M, Sigma)
    d_Sigma = np.einsum("nji,njk,nkl->nil", M, d_cov, M)

    W = frame.rotation
    d_J = np.einsum("nij,kj->nik", d_M, W)

    d_t = np.zeros_like(t)
    if frame.mode == "perspective":
        inv_z = 1.0 / z
        inv_z2 = inv_z * inv_z
        fx, fy = frame.fx, frame.fy
        # mean2d
        d_t[:, 0] += d_mean2d[:, 0] * fx * inv_z
        d_t[:, 1] += d_mean2d[:, 1] * fy * inv_z
        d_t[:, 2] -= d_mean2d[:, 0] * fx * t[:, 0] * inv_z2
        d_t[:, 2] -= d_mean2d[:, 1] * fy * t[:, 1] * inv_z2
        # Jacobian entries J00=fx/z, J02=-fx x/z^2, J11=fy/z, J12=-fy y/z^2
        d_t[:, 0] += d_J[:, 0, 2] * (-fx * inv_z2)
        d_t[:, 1] += d_J[:, 1, 2] * (-fy * inv_z2)
        d_t[:, 2] += d_J[:, 0, 0] * (-fx * inv_z2)
        d_t[:, 2] += d_J[:, 1, 1] * (-fy * inv_z2)
        d_t[:, 2] += d_J[:, 0, 2] * (2 * fx * t[:, 0] * inv_z**3)
        d_t[:, 2] += d_J[:, 1, 2] * (2 * fy * t[:, 1] * inv_z**3)
    else:
        d_t[:, 0] += d_mean2d[:, 0] * frame.fx
        d_t[:, 1] += d_mean2d[:, 1] * frame.fy

    d_mu_c = d_t @ W  # t = W mu + tr

    # Sigma = R D R^T with D = diag(scales^2)
    R = c["R"]
    scales = c["scales"]
    D = scales**2
    d_R = np.einsum("nij,njk,nk->nik", d_Sigma + np.swapaxes(d_Sigma, 1, 2), R, D)
    d_D = np.einsum("nji,njk,nki->ni", R, d_Sigma, R)
    d_scale_log_c = 2.0 * d_D * D
    d_quats_c = quat_to_rotmat_backward(c["quats"], d_R)

    d_mu = np.zeros((n, 3))
    d_quats = np.zeros((n, 4))
    d_scale_log = np.zeros((n, 3))
    d_mu[idx] = d_mu_c
    d_quats[idx] = d_quats_c
    d_scale_log[idx] = d_scale_log_c
    return d_mu, d_quats, d_scale_log
