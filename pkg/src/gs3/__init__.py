"""gs3: a relightable Gaussian-splatting engine.

Trains a spatial + angular gaussian representation from multi-view
one-light-at-a-time images and renders novel lighting-and-view combinations
in real time via a deferred triple-splatting pipeline (shading x shadow +
residual), with an interactive viewer protocol on top.
"""

from .quaternion import Rotation
from .gaussians import (AngularGaussian, AngularGaussianBasis, GaussianCloud,
                        SceneModel, SpatialGaussian, build_covariance,
                        eval_spatial_density, initial_model)
from .reflectance import (DegenerateDirectionError, eval_angular_gaussian,
                          eval_diffuse, eval_reflectance, eval_specular,
                          half_vector, rotate_to_frame)
from .frames import Frame, look_at, project_gaussians
from .rasterize import RasterSettings, bin_and_sort, render_cloud, set_render_threads
from .image import ImageBuffer, read_png, read_raw, write_png, write_raw
from .nets import Mlp, eval_residual, init_mlp, mlp_backward, mlp_forward, positional_encode
from .shadow import (LightDescriptor, LightConfigurationError, refine_shadow,
                     shadow_splat, write_shadow_table)
from .metrics import compute_ssim, psnr
from .rendering import (EnvironmentMap, RenderToggles, compose_final,
                        render_components, render_env, render_frame)
from .trainer import TrainConfig, adam_step, compute_loss, density_control, lr_schedule, train
from .sceneio import (DatasetManifest, CheckpointError, ManifestError,
                      generate_toy_dataset, load_checkpoint, load_manifest,
                      oracle_render, save_checkpoint, save_manifest)
from .estimator import GaussianRelighter, NotFittedError

__version__ = "0.1.0"

__all__ = [
    "Rotation", "SpatialGaussian", "AngularGaussian", "AngularGaussianBasis",
    "GaussianCloud", "SceneModel", "initial_model", "build_covariance",
    "eval_spatial_density", "eval_diffuse", "half_vector", "eval_angular_gaussian",
    "eval_specular", "eval_reflectance", "rotate_to_frame", "DegenerateDirectionError",
    "Frame", "look_at", "project_gaussians", "RasterSettings", "bin_and_sort",
    "render_cloud", "set_render_threads", "ImageBuffer", "read_png", "write_png",
    "read_raw", "write_raw", "Mlp", "init_mlp", "mlp_forward", "mlp_backward",
    "positional_encode", "eval_residual", "LightDescriptor",
    "LightConfigurationError", "shadow_splat", "refine_shadow", "write_shadow_table",
    "compute_ssim", "psnr", "EnvironmentMap", "RenderToggles", "compose_final",
    "render_components", "render_env", "render_frame", "TrainConfig", "train",
    "adam_step", "lr_schedule", "density_control", "compute_loss",
    "DatasetManifest", "ManifestError", "CheckpointError", "load_manifest",
    "save_manifest", "load_checkpoint", "save_checkpoint", "oracle_render",
    "generate_toy_dataset", "GaussianRelighter", "NotFittedError",
]
