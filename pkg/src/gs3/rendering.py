"""The deferred triple-splat pipeline and its end-to-end backward pass.

One render: (1) color every gaussian with its reflectance times the light's
RGB intensity and falloff and splat into the shading image; (2) splat all
gaussians toward the light, aggregate per-gaussian transmittance, refine it
with the shadow net, splat the refined values into the shadow image over a
white (fully lit) background; (3) evaluate the residual net per gaussian and
splat into the residual image. Final image = shading * shadow + residual,
per pixel per channel.

All toggles are behavior-exact: shadow splatting off means raw T = 1
everywhere (the refinement net, if enabled, still runs); refinement off
passes raw T through; residual off yields an identically zero residual
image. Stage-1 training masks the specular term the same way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frames import Frame, project_backward, project_gaussians
from .gaussians import SceneModel, sigmoid
from .nets import (MlpGrads, mlp_backward, mlp_forward,
                   positional_encode_backward, residual_net_input)
from .rasterize import (RasterSettings, RenderResult, bin_and_sort,
                        render_backward_splats, render_splats)
from .reflectance import shade_backward, shade_forward
from .shadow import (LightDescriptor, ShadowResult, light_directions,
                     light_frame, refine_shadow, refine_shadow_backward,
                     shadow_splat_arrays, shadow_splat_backward)


@dataclass
class RenderToggles:
    shadow_splat: bool = True
    phi: bool = True
    psi: bool = True
    specular: bool = True

    def to_dict(self) -> dict:
        return {"shadow": self.shadow_splat, "phi": self.phi, "psi": self.psi}

    @classmethod
    def from_dict(cls, d: dict) -> "RenderToggles":
        return cls(shadow_splat=bool(d.get("shadow", True)), phi=bool(d.get("phi", True)),
                   psi=bool(d.get("psi", True)), specular=bool(d.get("specular", True)))


@dataclass
class ParamGrads:
    """Gradients mirroring every trainable array of a SceneModel."""

    mu: np.ndarray
    scale_log: np.ndarray
    rot: np.ndarray
    opacity_logit: np.ndarray
    frame: np.ndarray
    rho_d_raw: np.ndarray
    rho_s_raw: np.ndarray
    alpha_raw: np.ndarray
    latent: np.ndarray
    basis_quats: np.ndarray
    basis_sigma_log: np.ndarray
    phi: MlpGrads
    psi: MlpGrads
    screen: np.ndarray  # camera-plane positional gradient norms (density control)

    @classmethod
    def zeros_for(cls, model: SceneModel) -> "ParamGrads":
        n = len(model.cloud)
        j = model.basis_count
        return cls(
            mu=np.zeros((n, 3)), scale_log=np.zeros((n, 3)), rot=np.zeros((n, 4)),
            opacity_logit=np.zeros(n), frame=np.zeros((n, 4)),
            rho_d_raw=np.zeros((n, 3)), rho_s_raw=np.zeros((n, 3)),
            alpha_raw=np.zeros((n, j)), latent=np.zeros((n, 6)),
            basis_quats=np.zeros((j, 4)), basis_sigma_log=np.zeros((j, 3)),
            phi=MlpGrads.zeros_like(model.phi), psi=MlpGrads.zeros_like(model.psi),
            screen=np.zeros(n),
        )


def compose_final(shading: np.ndarray, shadow: np.ndarray, residual: np.ndarray) -> np.ndarray:
    """shading (*) shadow + residual, per pixel per channel."""
    shading = np.atleast_3d(np.asarray(shading, dtype=np.float64))
    shadow = np.atleast_3d(np.asarray(shadow, dtype=np.float64))
    residual = np.atleast_3d(np.asarray(residual, dtype=np.float64))
    if shading.shape[:2] != shadow.shape[:2] or shading.shape != residual.shape:
        raise ValueError("component image dimensions do not match")
    if shadow.shape[2] not in (1, shading.shape[2]):
        raise ValueError("shadow image must be single channel or match shading")
    return shading * shadow + residual


@dataclass
class PipelineState:
    """Everything backward_pipeline needs to replay one forward render."""

    model: SceneModel
    camera: Frame
    light: LightDescriptor
    toggles: RenderToggles
    settings: RasterSettings
    shading_res: RenderResult
    shadow_img_res: RenderResult
    residual_res: RenderResult | None
    shade_cache: dict
    shadow_res: ShadowResult | None
    phi_cache: dict | None
    psi_cache: dict | None
    psi_input: np.ndarray | None
    wi: np.ndarray
    wo: np.ndarray
    ri: np.ndarray | None
    ro: np.ndarray | None
    falloff: np.ndarray
    refl: np.ndarray
    raw_t: np.ndarray
    refined_t: np.ndarray
    opacity: np.ndarray
    final: np.ndarray


def view_directions(camera: Frame, mu: np.ndarray):
    """Unit directions toward the camera (parallel for orthographic frames)."""
    if camera.mode == "orthographic":
        forward = camera.rotation[2]  # view z axis in world coords
        wo = np.tile(-forward, (len(mu), 1))
        return wo, None
    d = camera.origin[None, :] - mu
    ro = np.linalg.norm(d, axis=1)
    return d / ro[:, None], ro


def forward_pipeline(model: SceneModel, camera: Frame, light: LightDescriptor,
                     toggles: RenderToggles | None = None,
                     settings: RasterSettings | None = None) -> PipelineState:
    toggles = toggles or RenderToggles()
    settings = settings or RasterSettings()
    cloud = model.cloud
    mu = np.asarray(cloud.mu, dtype=np.float64)
    rot = np.asarray(cloud.rot, dtype=np.float64)
    scale_log = np.asarray(cloud.scale_log, dtype=np.float64)
    opacity = sigmoid(np.asarray(cloud.opacity_logit, dtype=np.float64))
    latent = np.asarray(cloud.latent, dtype=np.float64)
    n = len(cloud)

    wi, ri, falloff = light_directions(light, mu)
    wo, ro = view_directions(camera, mu)

    # 1st splatting: shading
    refl, shade_cache = shade_forward(
        cloud.frame, cloud.rho_d_raw, cloud.rho_s_raw, cloud.alpha_raw,
        model.basis.quats, model.basis.sigma_log, wi, wo,
        specular=toggles.specular)
    shading_payload = refl * (light.intensity[None, :] * falloff[:, None])

    cam_splats = project_gaussians(mu, rot, scale_log, opacity, camera,
                                   skip_alpha=settings.skip_alpha)
    cam_tiles = bin_and_sort(cam_splats, camera, settings)
    shading_res = render_splats(cam_splats, cam_tiles, shading_payload, opacity,
                                background=(0.0, 0.0, 0.0))

    # 2nd splatting: shadow
    shadow_res = None
    if toggles.shadow_splat:
        lframe = light_frame(light, model.bound_center, model.bound_radius,
                             camera.width, camera.height)
        shadow_res = shadow_splat_arrays(mu, rot, scale_log, opacity, lframe, settings)
        raw_t = shadow_res.raw_t
    else:
        raw_t = np.ones(n)

    phi_cache = None
    if toggles.phi:
        refined_t, phi_cache = refine_shadow(model.phi, raw_t, wi, mu, latent,
                                             want_cache=True)
    else:
        refined_t = raw_t
    shadow_img_res = render_splats(cam_splats, cam_tiles, refined_t[:, None], opacity,
                                   background=1.0)

    # 3rd splatting: residual
    residual_res = None
    psi_cache = None
    psi_input = None
    if toggles.psi:
        psi_input = residual_net_input(wo, mu, latent)
        resid_payload, psi_cache = mlp_forward(model.psi, psi_input, want_cache=True)
        residual_res = render_splats(cam_splats, cam_tiles, resid_payload, opacity,
                                     background=(0.0, 0.0, 0.0))
        residual_img = residual_res.image
    else:
        residual_img = np.zeros_like(shading_res.image)

    final = compose_final(shading_res.image, shadow_img_res.image, residual_img)
    return PipelineState(
        model=model, camera=camera, light=light, toggles=toggles, settings=settings,
        shading_res=shading_res, shadow_img_res=shadow_img_res, residual_res=residual_res,
        shade_cache=shade_cache, shadow_res=shadow_res, phi_cache=phi_cache,
        psi_cache=psi_cache, psi_input=psi_input, wi=wi, wo=wo, ri=ri, ro=ro,
        falloff=falloff, refl=refl, raw_t=raw_t, refined_t=refined_t,
        opacity=opacity, final=final,
    )


def backward_pipeline(state: PipelineState, d_final: np.ndarray) -> ParamGrads:
    model = state.model
    grads = ParamGrads.zeros_for(model)
    d_final = np.asarray(d_final, dtype=np.float64)

    shading = state.shading_res.image
    shadow_img = state.shadow_img_res.image
    d_shading_img = d_final * shadow_img
    d_shadow_img = np.sum(d_final * shading, axis=2, keepdims=True)
    d_residual_img = d_final

    opacity = state.opacity
    d_opacity = np.zeros(len(opacity))
    d_mu = np.zeros((len(opacity), 3))
    d_wi = np.zeros_like(state.wi)
    d_wo = np.zeros_like(state.wo)

    # the three camera-pass renders share one set of projected splats, so
    # their screen-space gradients merge into a single projection backward
    cam_splats = state.shading_res.splats
    d_mean2d = np.zeros((len(cam_splats), 2))
    d_conic = np.zeros((len(cam_splats), 3))

    def absorb_render(res: RenderResult, d_img):
        g = render_backward_splats(res, d_img)
        nonlocal d_mean2d, d_conic
        d_mean2d += g["mean2d"]
        d_conic += g["conic"]
        return g

    g_shade = absorb_render(state.shading_res, d_shading_img)
    d_opacity += g_shade["opacity"]
    g_shadowi = absorb_render(state.shadow_img_res, d_shadow_img)
    d_opacity += g_shadowi["opacity"]
    if state.residual_res is not None:
        g_resid = absorb_render(state.residual_res, d_residual_img)
        d_opacity += g_resid["opacity"]
        dW, db, dx = mlp_backward(model.psi, state.psi_cache, g_resid["payload"])
        grads.psi.add(dW, db)
        pe = 27
        d_wo += positional_encode_backward(state.wo, dx[:, :pe])
        d_mu += positional_encode_backward(
            np.asarray(model.cloud.mu, dtype=np.float64), dx[:, pe:2 * pe])
        grads.latent += dx[:, 2 * pe:]

    g_mu_c, g_quats_c, g_scale_c = project_backward(cam_splats, d_mean2d, d_conic)
    grads.mu += g_mu_c
    grads.rot += g_quats_c
    grads.scale_log += g_scale_c
    np.add.at(grads.screen, cam_splats.gidx, np.linalg.norm(d_mean2d, axis=1))

    # shading payload -> reflectance and light falloff
    light = state.light
    d_payload = g_shade["payload"]
    scale = light.intensity[None, :] * state.falloff[:, None]
    d_refl = d_payload * scale
    sg = shade_backward(state.shade_cache, d_refl)
    grads.frame += sg["frame_q"]
    grads.rho_d_raw += sg["rho_d_raw"]
    if state.toggles.specular:
        grads.rho_s_raw += sg["rho_s_raw"]
        grads.alpha_raw += sg["alpha_raw"]
        grads.basis_quats += sg["basis_quats"]
        grads.basis_sigma_log += sg["basis_sigma_log"]
    d_wi += sg["wi"]
    d_wo += sg["wo"]

    # shadow payload -> refinement net -> raw shadow -> light-space splats
    d_refined = g_shadowi["payload"][:, 0]
    if state.toggles.phi:
        pg = refine_shadow_backward(state.phi_cache, d_refined)
        grads.phi.add(pg["dW"], pg["db"])
        d_raw_t = pg["raw_t"]
        d_mu += pg["mu"]
        d_wi += pg["wi"]
        grads.latent += pg["latent"]
    else:
        d_raw_t = d_refined
    if state.toggles.shadow_splat and state.shadow_res is not None:
        sbg = shadow_splat_backward(state.shadow_res, d_raw_t)
        grads.mu += sbg["mu"]
        grads.rot += sbg["quats"]
        grads.scale_log += sbg["scale_log"]
        d_opacity += sbg["opacity"]

    # direction/falloff chains back to positions
    if light.kind == "point":
        ri = state.ri
        wi = state.wi
        d_vec = (d_wi - wi * np.sum(d_wi * wi, axis=1, keepdims=True)) / ri[:, None]
        if light.falloff == "inverse_square":
            d_ri = np.einsum("nc,nc->n", d_payload, state.refl * light.intensity[None, :])
            d_ri = d_ri * (-2.0 / ri**3)
            d_vec += wi * d_ri[:, None]
        d_mu -= d_vec
    if state.ro is not None:
        wo = state.wo
        d_vec = (d_wo - wo * np.sum(d_wo * wo, axis=1, keepdims=True)) / state.ro[:, None]
        d_mu -= d_vec

    grads.mu += d_mu
    grads.opacity_logit += d_opacity * opacity * (1.0 - opacity)
    return grads


# ---------------------------------------------------------------------------
# User-facing rendering entry points.
# ---------------------------------------------------------------------------

@dataclass
class EnvironmentMap:
    """Equirectangular radiance grid, width = 2 * height, nonnegative."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 3 or v.shape[1] != 2 * v.shape[0]:
            raise ValueError("environment map must be (H, 2H, 3)")
        if np.any(v < 0):
            raise ValueError("environment map must be nonnegative")
        self.values = v

    def sample(self, direction: np.ndarray) -> np.ndarray:
        """Nearest-texel radiance for a world direction (y up)."""
        d = np.asarray(direction, dtype=np.float64)
        d = d / np.linalg.norm(d)
        h, w = self.values.shape[:2]
        u = (np.arctan2(d[0], d[2]) / (2 * np.pi) + 0.5) * w
        v = np.arccos(np.clip(d[1], -1.0, 1.0)) / np.pi * h
        iu = min(int(u) % w, w - 1)
        iv = min(int(v), h - 1)
        return self.values[iv, iu]


def render_components(model: SceneModel, camera: Frame, light: LightDescriptor,
                      toggles: RenderToggles | None = None,
                      settings: RasterSettings | None = None):
    """(shading, shadow, residual) images for one view/light."""
    state = forward_pipeline(model, camera, light, toggles, settings)
    residual = (state.residual_res.image if state.residual_res is not None
                else np.zeros_like(state.shading_res.image))
    return state.shading_res.image, state.shadow_img_res.image, residual


def render_frame(model: SceneModel, camera: Frame, light: LightDescriptor,
                 toggles: RenderToggles | None = None,
                 settings: RasterSettings | None = None,
                 exposure: float = 1.0) -> np.ndarray:
    """Full composite under a point or directional light (linear RGB)."""
    shading, shadow_img, residual = render_components(model, camera, light, toggles, settings)
    out = compose_final(shading, shadow_img, residual)
    if exposure != 1.0:
        out = out * exposure
    return out


def fibonacci_directions(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    y = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(1.0 - y * y, 0.0))
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    return np.stack([r * np.cos(phi), y, r * np.sin(phi)], axis=1)


def render_env(model: SceneModel, camera: Frame, envmap: EnvironmentMap,
               n_samples: int = 64, toggles: RenderToggles | None = None,
               settings: RasterSettings | None = None,
               exposure: float = 1.0) -> np.ndarray:
    """Environment relighting: equal-solid-angle directional samples, each
    rendered at unit intensity and scaled by the map's radiance; linear in
    the map by construction."""
    if n_samples < 1:
        raise ValueError("need at least one directional sample")
    dirs = fibonacci_directions(n_samples)
    weight = 4.0 * np.pi / n_samples
    out = None
    for d in dirs:
        radiance = envmap.sample(-d)  # emitter sits opposite the propagation
        if not np.any(radiance > 0):
            continue
        light = LightDescriptor(kind="directional", direction=d, intensity=(1.0, 1.0, 1.0))
        img = render_frame(model, camera, light, toggles, settings)
        term = img * (weight * radiance)[None, None, :]
        out = term if out is None else out + term
    if out is None:
        h, w = camera.height, camera.width
        out = np.zeros((h, w, 3))
    return out * exposure
