"""Spatial/angular Gaussian primitives and the trainable scene model.

A spatial Gaussian carries geometry (mean, factored covariance, opacity) and
appearance (shading frame, diffuse/specular albedo, specular mixture weights,
a 6-D latent shared by the shadow-refinement and residual nets). Constrained
quantities are stored unconstrained: opacity as a logit, scales and lobe
sigmas as logs, albedos and mixture weights through a softplus. Quaternions
are renormalized after every optimizer step and on read.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nets import Mlp, init_mlp, SHADOW_NET_WIDTHS, RESIDUAL_NET_WIDTHS
from .quaternion import IDENTITY_QUAT, Rotation, normalize_quat, quat_to_rotmat

SUPPORTED_BASIS_COUNTS = (1, 2, 4, 8, 16)
DEFAULT_BASIS_COUNT = 8


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(y):
    y = np.asarray(y, dtype=np.float64)
    return np.log(y) - np.log1p(-y)


def softplus(x):
    return np.logaddexp(0.0, np.asarray(x, dtype=np.float64))


def softplus_inv(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def build_covariance(rot, scale) -> np.ndarray:
    """Sigma = R S S^T R^T from a rotation and per-axis standard deviations.

    `rot` may be a Rotation, a quaternion (4,) or a batch (..., 4); `scale`
    has matching (..., 3) positive entries. Symmetric positive-definite by
    construction.
    """
    q = rot.q if isinstance(rot, Rotation) else np.asarray(rot, dtype=np.float64)
    R = quat_to_rotmat(q)
    s2 = np.asarray(scale, dtype=np.float64) ** 2
    return np.einsum("...ik,...k,...jk->...ij", R, s2, R)


def eval_spatial_density(mu, cov, p) -> np.ndarray:
    """exp(-0.5 (p-mu)^T Sigma^-1 (p-mu)) in (0, 1]."""
    d = np.asarray(p, dtype=np.float64) - np.asarray(mu, dtype=np.float64)
    sol = np.linalg.solve(np.asarray(cov, dtype=np.float64), d[..., None])[..., 0]
    return np.exp(-0.5 * np.einsum("...i,...i->...", d, sol))


@dataclass
class SpatialGaussian:
    """One geometry+appearance primitive (scalar view of the SoA cloud)."""

    mu: np.ndarray
    scale_log: np.ndarray
    rot: Rotation
    opacity_logit: float
    frame: Rotation
    rho_d_raw: np.ndarray
    rho_s_raw: np.ndarray
    alpha_raw: np.ndarray
    latent: np.ndarray

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    @property
    def scales(self) -> np.ndarray:
        return np.exp(np.asarray(self.scale_log, dtype=np.float64))

    @property
    def rho_d(self) -> np.ndarray:
        return softplus(self.rho_d_raw)

    @property
    def rho_s(self) -> np.ndarray:
        return softplus(self.rho_s_raw)

    @property
    def alpha(self) -> np.ndarray:
        return softplus(self.alpha_raw)

    def covariance(self) -> np.ndarray:
        return build_covariance(self.rot, self.scales)

    def density(self, p) -> float:
        return float(eval_spatial_density(self.mu, self.covariance(), p))


@dataclass
class AngularGaussian:
    """One anisotropic lobe over half vectors: local frame + three sigmas (stored as logs)."""

    frame: Rotation
    sigma_log: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(np.asarray(self.sigma_log, dtype=np.float64))


class AngularGaussianBasis:
    """J shared lobes, structure-of-arrays: quats (J, 4) and sigma_log (J, 3)."""

    def __init__(self, quats: np.ndarray, sigma_log: np.ndarray):
        quats = np.atleast_2d(np.asarray(quats))
        sigma_log = np.atleast_2d(np.asarray(sigma_log))
        if len(quats) != len(sigma_log):
            raise ValueError("lobe count mismatch between frames and sigmas")
        if len(quats) not in SUPPORTED_BASIS_COUNTS:
            raise ValueError(f"basis count {len(quats)} not in {SUPPORTED_BASIS_COUNTS}")
        self.quats = quats
        self.sigma_log = sigma_log

    def __len__(self) -> int:
        return len(self.quats)

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(np.asarray(self.sigma_log, dtype=np.float64))

    def lobe(self, j: int) -> AngularGaussian:
        return AngularGaussian(Rotation(self.quats[j]), np.asarray(self.sigma_log[j]))

    def copy(self) -> "AngularGaussianBasis":
        return AngularGaussianBasis(self.quats.copy(), self.sigma_log.copy())

    @classmethod
    def initial(cls, count: int, rng: np.random.Generator, dtype=np.float32) -> "AngularGaussianBasis":
        """World-axis-aligned lobes; sigma_x=0.5, sigma_y=1.0, sigma_z ~ U[0.13, 0.69]."""
        quats = np.tile(IDENTITY_QUAT, (count, 1))
        sz = rng.uniform(0.13, 0.69, size=count)
        sigma = np.stack([np.full(count, 0.5), np.full(count, 1.0), sz], axis=1)
        return cls(quats.astype(dtype), np.log(sigma).astype(dtype))


class GaussianCloud:
    """All spatial Gaussians, structure-of-arrays. Arrays are (N, ...) and share N."""

    ARRAY_FIELDS = (
        "mu", "scale_log", "rot", "opacity_logit", "frame",
        "rho_d_raw", "rho_s_raw", "alpha_raw", "latent",
    )

    def __init__(self, mu, scale_log, rot, opacity_logit, frame,
                 rho_d_raw, rho_s_raw, alpha_raw, latent):
        self.mu = np.asarray(mu)
        self.scale_log = np.asarray(scale_log)
        self.rot = np.asarray(rot)
        self.opacity_logit = np.asarray(opacity_logit)
        self.frame = np.asarray(frame)
        self.rho_d_raw = np.asarray(rho_d_raw)
        self.rho_s_raw = np.asarray(rho_s_raw)
        self.alpha_raw = np.asarray(alpha_raw)
        self.latent = np.asarray(latent)
        self._check_shapes()

    def _check_shapes(self):
        n = len(self.mu)
        expect = {
            "mu": (n, 3), "scale_log": (n, 3), "rot": (n, 4), "opacity_logit": (n,),
            "frame": (n, 4), "rho_d_raw": (n, 3), "rho_s_raw": (n, 3),
            "latent": (n, 6),
        }
        for name, shape in expect.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ValueError(f"{name} has shape {got}, expected {shape}")
        if self.alpha_raw.ndim != 2 or len(self.alpha_raw) != n:
            raise ValueError("alpha_raw must be (N, J)")

    def __len__(self) -> int:
        return len(self.mu)

    @property
    def basis_count(self) -> int:
        return self.alpha_raw.shape[1]

    @property
    def opacity(self) -> np.ndarray:
        return sigmoid(self.opacity_logit)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(np.asarray(self.scale_log, dtype=np.float64))

    @property
    def rho_d(self) -> np.ndarray:
        return softplus(self.rho_d_raw)

    @property
    def rho_s(self) -> np.ndarray:
        return softplus(self.rho_s_raw)

    @property
    def alpha(self) -> np.ndarray:
        return softplus(self.alpha_raw)

    def covariances(self) -> np.ndarray:
        return build_covariance(self.rot, self.scales)

    def gaussian(self, i: int) -> SpatialGaussian:
        return SpatialGaussian(
            mu=self.mu[i], scale_log=self.scale_log[i], rot=Rotation(self.rot[i]),
            opacity_logit=float(self.opacity_logit[i]), frame=Rotation(self.frame[i]),
            rho_d_raw=self.rho_d_raw[i], rho_s_raw=self.rho_s_raw[i],
            alpha_raw=self.alpha_raw[i], latent=self.latent[i],
        )

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(*(getattr(self, f).copy() for f in self.ARRAY_FIELDS))

    def select(self, mask_or_index) -> "GaussianCloud":
        return GaussianCloud(*(getattr(self, f)[mask_or_index] for f in self.ARRAY_FIELDS))

    def renormalize_quats(self):
        self.rot = normalize_quat(self.rot).astype(self.rot.dtype)
        self.frame = normalize_quat(self.frame).astype(self.frame.dtype)

    @classmethod
    def concatenate(cls, clouds) -> "GaussianCloud":
        return cls(*(np.concatenate([getattr(c, f) for c in clouds]) for f in cls.ARRAY_FIELDS))


def initial_cloud(positions: np.ndarray, basis_count: int, rng: np.random.Generator,
                  dtype=np.float32) -> GaussianCloud:
    """Fresh cloud at given positions: albedos (1,1,1), mixture weights 0.5,
    identity frames, isotropic scales from nearest-neighbor spacing, opacity 0.1."""
    from scipy.spatial import cKDTree

    positions = np.asarray(positions, dtype=np.float64)
    n = len(positions)
    if n >= 4:
        dist, _ = cKDTree(positions).query(positions, k=4)
        nn = np.clip(dist[:, 1:].mean(axis=1), 1e-7, None)
    else:
        nn = np.full(n, 0.1)
    scale_log = np.log(np.tile(nn[:, None], (1, 3)))
    one_raw = softplus_inv(1.0)
    return GaussianCloud(
        mu=positions.astype(dtype),
        scale_log=scale_log.astype(dtype),
        rot=np.tile(IDENTITY_QUAT, (n, 1)).astype(dtype),
        opacity_logit=np.full(n, logit(0.1), dtype=dtype),
        frame=np.tile(IDENTITY_QUAT, (n, 1)).astype(dtype),
        rho_d_raw=np.full((n, 3), one_raw, dtype=dtype),
        rho_s_raw=np.full((n, 3), one_raw, dtype=dtype),
        alpha_raw=np.full((n, basis_count), softplus_inv(0.5), dtype=dtype),
        latent=np.zeros((n, 6), dtype=dtype),
    )


@dataclass
class SceneModel:
    """The trainable, checkpointable artifact: cloud + shared lobes + both nets."""

    cloud: GaussianCloud
    basis: AngularGaussianBasis
    phi: Mlp
    psi: Mlp
    bound_center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bound_radius: float = 1.0
    iteration: int = 0

    @property
    def basis_count(self) -> int:
        return len(self.basis)

    def copy(self) -> "SceneModel":
        return SceneModel(
            cloud=self.cloud.copy(), basis=self.basis.copy(),
            phi=self.phi.copy(), psi=self.psi.copy(),
            bound_center=np.array(self.bound_center, dtype=np.float64),
            bound_radius=float(self.bound_radius), iteration=self.iteration,
        )


def initial_model(positions: np.ndarray, basis_count: int = DEFAULT_BASIS_COUNT,
                  seed: int = 0, dtype=np.float32) -> SceneModel:
    """Seeded model init. The scene bound (used by shadow cameras and the
    light-outside check) is frozen from the initial positions."""
    rng = np.random.default_rng(seed)
    cloud = initial_cloud(positions, basis_count, rng, dtype=dtype)
    basis = AngularGaussianBasis.initial(basis_count, rng, dtype=dtype)
    phi = init_mlp(SHADOW_NET_WIDTHS, rng)
    psi = init_mlp(RESIDUAL_NET_WIDTHS, rng)
    for net in (phi, psi):
        net.weights = [w.astype(dtype) for w in net.weights]
        net.biases = [b.astype(dtype) for b in net.biases]
    # the frozen bound rides along in the (f32) checkpoint; store it
    # f32-representable so a saved model renders identically after reload
    center = np.asarray(positions, dtype=np.float64).mean(axis=0)
    radius = float(np.linalg.norm(positions - center, axis=1).max()) * 1.05
    center = center.astype(np.float32).astype(np.float64)
    radius = float(np.float32(max(radius, 1e-3)))
    return SceneModel(cloud, basis, phi, psi, bound_center=center,
                      bound_radius=radius)
