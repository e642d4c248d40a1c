"""Estimator-style entry point: fit a relightable model on an OLAT dataset,
then render (predict) novel lighting-and-view images.

Follows the sklearn parameter protocol (constructor params stored verbatim,
`get_params`/`set_params`, fitted state on trailing-underscore attributes) so
the engine composes with that ecosystem's tooling, without depending on it.
"""

from __future__ import annotations

import inspect
from pathlib import Path

import numpy as np

from .frames import Frame
from .metrics import psnr
from .rasterize import RasterSettings
from .rendering import RenderToggles, render_frame
from .sceneio import DatasetManifest, load_checkpoint, load_manifest, save_checkpoint
from .shadow import LightDescriptor
from .trainer import TrainConfig, train


class NotFittedError(RuntimeError):
    pass


def as_manifest(data) -> DatasetManifest:
    """Accept a manifest object or a path to one."""
    if isinstance(data, DatasetManifest):
        return data
    if isinstance(data, (str, Path)):
        return load_manifest(data)
    raise TypeError(f"expected a DatasetManifest or path, got {type(data).__name__}")


def as_camera(camera) -> Frame:
    if isinstance(camera, Frame):
        return camera
    if isinstance(camera, dict):
        return Frame.from_dict(camera)
    raise TypeError(f"expected a Frame or camera dict, got {type(camera).__name__}")


def as_light(light) -> LightDescriptor:
    if isinstance(light, LightDescriptor):
        return light
    if isinstance(light, dict):
        return LightDescriptor.from_dict(light)
    raise TypeError(f"expected a LightDescriptor or dict, got {type(light).__name__}")


class GaussianRelighter:
    """Trains the spatial+angular gaussian representation from one-light-at-a-
    time images; renders novel view/light combinations in linear RGB."""

    def __init__(self, basis_count=8, iterations=2000, stage1_iters=500, seed=0,
                 lam=0.2, n_init=2000, shadow_splatting=True, phi=True, psi=True,
                 densify=True, max_gaussians=200000, config_overrides=None):
        self.basis_count = basis_count
        self.iterations = iterations
        self.stage1_iters = stage1_iters
        self.seed = seed
        self.lam = lam
        self.n_init = n_init
        self.shadow_splatting = shadow_splatting
        self.phi = phi
        self.psi = psi
        self.densify = densify
        self.max_gaussians = max_gaussians
        self.config_overrides = config_overrides

    # -- sklearn parameter protocol -------------------------------------
    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ValueError(f"invalid parameter {key!r} for GaussianRelighter")
            setattr(self, key, value)
        return self

    # -- fitting ----------------------------------------------------------
    def build_config(self) -> TrainConfig:
        cfg = TrainConfig(
            basis_count=self.basis_count, total_iters=self.iterations,
            stage1_iters=min(self.stage1_iters, max(self.iterations - 1, 1)),
            seed=self.seed, lam=self.lam, n_init=self.n_init,
            shadow_splatting=self.shadow_splatting, phi=self.phi, psi=self.psi,
            densify=self.densify, max_gaussians=self.max_gaussians,
        )
        if self.config_overrides:
            merged = cfg.to_dict()
            merged.update(self.config_overrides)
            cfg = TrainConfig.from_dict(merged)
        return cfg

    def fit(self, X, y=None, progress=None):
        """Train on an OLAT dataset (manifest object or path). Returns self."""
        manifest = as_manifest(X)
        result = train(manifest, self.build_config(), progress=progress)
        self.model_ = result.model
        self.log_ = result.log
        self.config_ = result.config
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("this GaussianRelighter is not fitted; call fit() "
                                 "or load() first")

    # -- prediction ---------------------------------------------------------
    def render(self, camera, light, toggles: RenderToggles | None = None,
               exposure: float = 1.0) -> np.ndarray:
        self._require_fitted()
        if toggles is None:
            toggles = RenderToggles(shadow_splat=self.shadow_splatting,
                                    phi=self.phi, psi=self.psi)
        return render_frame(self.model_, as_camera(camera), as_light(light),
                            toggles, RasterSettings(), exposure=exposure)

    def predict(self, X):
        """Render a sequence of {"camera": ..., "light": ...} requests."""
        self._require_fitted()
        return [self.render(req["camera"], req["light"]) for req in X]

    def score(self, X, y=None) -> float:
        """Mean PSNR (dB) against a manifest's target images."""
        self._require_fitted()
        manifest = as_manifest(X)
        scores = []
        for i in range(len(manifest)):
            img = self.render(manifest.camera_frame(i), manifest.frames[i].light)
            scores.append(psnr(img, manifest.load_target(i)))
        finite = [s for s in scores if np.isfinite(s)]
        return float(np.mean(finite)) if finite else float("inf")

    # -- persistence ----------------------------------------------------------
    def save(self, path):
        self._require_fitted()
        cfg = self.config_.to_dict() if hasattr(self, "config_") else {}
        save_checkpoint(self.model_, path, config=cfg)
        return self

    def load(self, path):
        model, cfg = load_checkpoint(path, want_config=True)
        self.model_ = model
        self.config_ = TrainConfig.from_dict(cfg) if cfg else None
        return self
