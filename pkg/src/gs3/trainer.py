"""End-to-end optimization: deferred composition loss, Adam, per-group
learning-rate schedules, the two-stage curriculum and adaptive density
control.

Stage 1 trains the Lambertian term only (specular contribution and its
gradients are masked, parameters kept, so stage 2 resumes from the same
initialization); stage 2 enables the full appearance function. One uniformly
sampled training frame per iteration, seeded. Loss:
(1 - lambda) * L1 + lambda * (1 - SSIM), lambda = 0.2.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, asdict

import numpy as np

from .gaussians import SceneModel, initial_model, sigmoid
from .metrics import compute_ssim
from .quaternion import normalize_quat
from .rasterize import RasterSettings
from .rendering import ParamGrads, RenderToggles, backward_pipeline, compose_final, forward_pipeline
from .sceneio import DatasetManifest

__all__ = [
    "TrainConfig", "AdamState", "adam_step", "lr_schedule", "compute_loss",
    "compose_final", "density_control", "train", "TrainResult",
]


@dataclass
class TrainConfig:
    lam: float = 0.2                      # D-SSIM mixing weight
    stage1_iters: int = 15000
    total_iters: int = 115000
    basis_count: int = 8
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # per-group learning rates
    lr_rho: float = 0.01
    lr_angular: float = 0.01
    lr_angular_final: float = 1e-4
    lr_angular_hold: int = 40000
    lr_angular_end: int = 90000
    lr_position: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr_opacity: float = 0.05
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_nets: float = 1e-3
    # ablation toggles
    shadow_splatting: bool = True
    phi: bool = True
    psi: bool = True
    # density control
    densify: bool = True
    densify_interval: int = 100
    densify_grad_threshold: float = 2e-4
    densify_stop_frac: float = 0.5
    opacity_prune: float = 0.005
    percent_dense: float = 0.01
    split_scale_factor: float = 1.6
    max_gaussians: int = 200000
    # initialization
    n_init: int = 2000
    init_radius: float | None = None      # default: manifest hint or 0.45x min camera dist

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("loss mixing weight must be in [0, 1]")
        if self.stage1_iters >= self.total_iters:
            raise ValueError("stage 1 must end before the total iteration count")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


def compute_loss(render: np.ndarray, target: np.ndarray, lam: float = 0.2):
    """(1-lam)*mean|r-t| + lam*(1-SSIM). Returns (loss, dL/drender, l1, dssim)."""
    render = np.atleast_3d(np.asarray(render, dtype=np.float64))
    target = np.atleast_3d(np.asarray(target, dtype=np.float64))
    if render.shape != target.shape:
        raise ValueError(f"render/target shapes differ: {render.shape} vs {target.shape}")
    diff = render - target
    l1 = float(np.abs(diff).mean())
    grad = (1.0 - lam) * np.sign(diff) / diff.size
    if lam > 0.0:
        ssim, dssim_da = compute_ssim(render, target, want_grad=True)
        dssim = 1.0 - ssim
        grad = grad - lam * dssim_da
    else:
        dssim = 0.0
    loss = (1.0 - lam) * l1 + lam * dssim
    return loss, grad, l1, dssim


@dataclass
class AdamState:
    """First/second moments per parameter array plus the shared step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    def ensure(self, key: str, shape):
        if key not in self.m:
            self.m[key] = np.zeros(shape)
            self.v[key] = np.zeros(shape)


def adam_step(state: AdamState, key: str, param: np.ndarray, grad: np.ndarray,
              lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> np.ndarray:
    """One bias-corrected Adam update; returns the new parameter values.

    state.step must have been advanced (once per iteration) before the calls.
    """
    state.ensure(key, param.shape)
    g = np.asarray(grad, dtype=np.float64)
    m = state.m[key] = beta1 * state.m[key] + (1 - beta1) * g
    v = state.v[key] = beta2 * state.v[key] + (1 - beta2) * g * g
    t = state.step
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    return np.asarray(param, dtype=np.float64) - lr * m_hat / (np.sqrt(v_hat) + eps)


def lr_schedule(group: str, iteration: int, cfg: TrainConfig | None = None) -> float:
    """Per-group learning rate at an absolute iteration number."""
    cfg = cfg or TrainConfig()
    if group == "rho":
        return cfg.lr_rho
    if group == "angular":
        if iteration < cfg.lr_angular_hold:
            return cfg.lr_angular
        if iteration >= cfg.lr_angular_end:
            return cfg.lr_angular_final
        t = (iteration - cfg.lr_angular_hold) / (cfg.lr_angular_end - cfg.lr_angular_hold)
        return float(cfg.lr_angular * (cfg.lr_angular_final / cfg.lr_angular) ** t)
    if group == "position":
        t = min(iteration / cfg.total_iters, 1.0)
        return float(cfg.lr_position * (cfg.lr_position_final / cfg.lr_position) ** t)
    if group == "opacity":
        return cfg.lr_opacity
    if group == "scale":
        return cfg.lr_scale
    if group == "rotation":
        return cfg.lr_rotation
    if group == "nets":
        return cfg.lr_nets
    raise ValueError(f"unknown parameter group {group!r}")


# map cloud array -> (adam key, lr group)
_CLOUD_GROUPS = {
    "mu": "position",
    "scale_log": "scale",
    "rot": "rotation",
    "opacity_logit": "opacity",
    "frame": "rotation",
    "rho_d_raw": "rho",
    "rho_s_raw": "rho",
    "alpha_raw": "angular",
    "latent": "nets",
}


def apply_gradients(model: SceneModel, grads: ParamGrads, state: AdamState,
                    iteration: int, cfg: TrainConfig):
    """One optimizer step over every parameter family; quaternions renormalized."""
    state.step += 1
    cloud = model.cloud
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    for name, group in _CLOUD_GROUPS.items():
        lr = lr_schedule(group, iteration, cfg)
        new = adam_step(state, f"cloud.{name}", getattr(cloud, name),
                        getattr(grads, name), lr, b1, b2, eps)
        setattr(cloud, name, new.astype(np.float32))
    lr_ang = lr_schedule("angular", iteration, cfg)
    model.basis.quats = adam_step(state, "basis.quats", model.basis.quats,
                                  grads.basis_quats, lr_ang, b1, b2, eps).astype(np.float32)
    model.basis.sigma_log = adam_step(state, "basis.sigma_log", model.basis.sigma_log,
                                      grads.basis_sigma_log, lr_ang, b1, b2, eps).astype(np.float32)
    lr_nets = lr_schedule("nets", iteration, cfg)
    for net, g, tag in ((model.phi, grads.phi, "phi"), (model.psi, grads.psi, "psi")):
        for li in range(len(net.weights)):
            net.weights[li] = adam_step(state, f"{tag}.W{li}", net.weights[li],
                                        g.dW[li], lr_nets, b1, b2, eps).astype(np.float32)
            net.biases[li] = adam_step(state, f"{tag}.b{li}", net.biases[li],
                                       g.db[li], lr_nets, b1, b2, eps).astype(np.float32)
    cloud.renormalize_quats()
    model.basis.quats = normalize_quat(model.basis.quats).astype(np.float32)


@dataclass
class DensifyStats:
    grad_sum: np.ndarray
    seen: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "DensifyStats":
        return cls(grad_sum=np.zeros(n), seen=np.zeros(n))

    def accumulate(self, screen_grads: np.ndarray, width: int, height: int):
        # normalize pixel-space gradients to half-viewport units (GS convention)
        self.grad_sum += screen_grads * 0.5 * max(width, height)
        self.seen += screen_grads > 0


def density_control(model: SceneModel, state: AdamState, stats: DensifyStats,
                    cfg: TrainConfig, rng: np.random.Generator):
    """Clone small high-gradient gaussians, split large ones, prune transparent
    ones; optimizer moments survive for kept rows and start at zero for new."""
    cloud = model.cloud
    n = len(cloud)
    avg = stats.grad_sum / np.maximum(stats.seen, 1.0)
    opacity = sigmoid(np.asarray(cloud.opacity_logit, dtype=np.float64))
    keep = opacity >= cfg.opacity_prune
    scales = cloud.scales
    max_scale = scales.max(axis=1)
    size_limit = cfg.percent_dense * model.bound_radius
    hot = (avg > cfg.densify_grad_threshold) & keep
    room = max(cfg.max_gaussians - int(keep.sum()), 0)
    clone = hot & (max_scale <= size_limit)
    split = hot & (max_scale > size_limit)
    if int(clone.sum()) + 2 * int(split.sum()) > room:
        clone &= False
        split &= False

    keep_idx = np.nonzero(keep & ~split)[0]
    clone_idx = np.nonzero(clone & ~split)[0]
    split_idx = np.nonzero(split)[0]

    parts = [cloud.select(keep_idx)]
    if len(clone_idx):
        parts.append(cloud.select(clone_idx))
    if len(split_idx):
        parent = cloud.select(np.repeat(split_idx, 2))
        cov = parent.covariances()
        eps = rng.standard_normal((len(parent), 3))
        chol = np.linalg.cholesky(cov)
        parent.mu = (np.asarray(parent.mu, dtype=np.float64)
                     + np.einsum("nij,nj->ni", chol, eps)).astype(np.float32)
        parent.scale_log = (np.asarray(parent.scale_log, dtype=np.float64)
                            - np.log(cfg.split_scale_factor)).astype(np.float32)
        parts.append(parent)
    new_cloud = type(cloud).concatenate(parts) if len(parts) > 1 else parts[0]
    model.cloud = new_cloud

    n_new = len(new_cloud)
    for name in _CLOUD_GROUPS:
        key = f"cloud.{name}"
        if key not in state.m:
            continue
        old_m, old_v = state.m[key], state.v[key]
        new_m = np.zeros((n_new,) + old_m.shape[1:])
        new_v = np.zeros_like(new_m)
        new_m[:len(keep_idx)] = old_m[keep_idx]
        new_v[:len(keep_idx)] = old_v[keep_idx]
        state.m[key], state.v[key] = new_m, new_v
    counts = {"cloned": int(len(clone_idx)), "split": int(len(split_idx)),
              "pruned": int(n - int(keep.sum()))}
    return counts


def pick_init_positions(manifest: DatasetManifest, cfg: TrainConfig,
                        rng: np.random.Generator) -> np.ndarray:
    cams = manifest.camera_positions()
    if cfg.init_radius is not None:
        radius = cfg.init_radius
    elif manifest.scene_scale is not None:
        radius = manifest.scene_scale
    else:
        radius = 0.45 * float(np.linalg.norm(cams, axis=1).min())
    d = rng.standard_normal((cfg.n_init, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.uniform(0.0, 1.0, cfg.n_init) ** (1.0 / 3.0)
    return d * r[:, None]


@dataclass
class TrainResult:
    model: SceneModel
    log: list = field(default_factory=list)
    config: TrainConfig = None

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["iter", "stage", "loss", "l1", "dssim", "num_gaussians"])
        w.writerows(self.log)
        return buf.getvalue()


def train(manifest: DatasetManifest, cfg: TrainConfig | None = None,
          settings: RasterSettings | None = None,
          progress=None) -> TrainResult:
    """Two-stage training on an OLAT dataset. Deterministic for a fixed seed
    in single-thread mode."""
    cfg = cfg or TrainConfig()
    settings = settings or RasterSettings()
    rng = np.random.default_rng(cfg.seed)
    model = initial_model(pick_init_positions(manifest, cfg, rng),
                          basis_count=cfg.basis_count, seed=cfg.seed)

    targets = [manifest.load_target(i) for i in range(len(manifest))]
    cameras = [manifest.camera_frame(i) for i in range(len(manifest))]
    state = AdamState()
    stats = DensifyStats.zeros(len(model.cloud))
    log = []
    densify_until = int(cfg.total_iters * cfg.densify_stop_frac)

    for it in range(1, cfg.total_iters + 1):
        stage = 1 if it <= cfg.stage1_iters else 2
        toggles = RenderToggles(shadow_splat=cfg.shadow_splatting, phi=cfg.phi,
                                psi=cfg.psi, specular=stage == 2)
        k = int(rng.integers(len(manifest)))
        pipeline = forward_pipeline(model, cameras[k], manifest.frames[k].light,
                                    toggles, settings)
        loss, d_render, l1, dssim = compute_loss(pipeline.final, targets[k], cfg.lam)
        if not np.isfinite(loss):
            raise RuntimeError(
                f"non-finite loss at iteration {it} (frame {k}): "
                f"l1={l1}, dssim={dssim}, "
                f"render range [{pipeline.final.min()}, {pipeline.final.max()}]")
        grads = backward_pipeline(pipeline, d_render)
        apply_gradients(model, grads, state, it, cfg)
        stats.accumulate(grads.screen, cameras[k].width, cameras[k].height)
        model.iteration = it
        log.append([it, stage, loss, l1, dssim, len(model.cloud)])

        if (cfg.densify and stage == 2 and it <= densify_until
                and (it - cfg.stage1_iters) % cfg.densify_interval == 0):
            density_control(model, state, stats, cfg, rng)
            stats = DensifyStats.zeros(len(model.cloud))
        if progress is not None:
            progress(it, loss, len(model.cloud))
    return TrainResult(model=model, log=log, config=cfg)
