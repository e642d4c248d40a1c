"""Per-gaussian reflectance: modified Lambertian plus a mixture of anisotropic
angular lobes over half vectors.

Directions are evaluated in each gaussian's shading frame (world vectors are
rotated by the inverse of the frame quaternion; the shading normal is the
frame's z axis). The diffuse term uses an ELU-softened cosine so the gradient
never dies on the back hemisphere:

    f_d(c) = (ELU_a(c) + e*(1 - 1/e)) / ((1 + e*(1 - 1/e)) * pi),  a = e = 0.01

which is exactly zero at c = -1 and 1/pi at c = 1. Each angular lobe, with
local frame [x, y, z] and spreads (sx, sy, sz), evaluates

    G(h) = (1/sz) * exp(-0.5 * (arccos(h.z) * A / sz)^2),
    A    = sqrt((s.x/sx)^2 + (s.y/sy)^2),   s = normalize(h - (h.z) z)

with A -> 1/sx at the pole (projection shorter than 1e-8) and h.z clamped to
[-1+1e-7, 1-1e-7] so gradients stay finite at the peak.
"""

from __future__ import annotations

import numpy as np

from .gaussians import AngularGaussianBasis, SpatialGaussian, sigmoid
from .quaternion import Rotation, quat_to_rotmat, quat_to_rotmat_backward

ELU_ALPHA = 0.01
ELU_EPS = 0.01
_K = ELU_EPS * (1.0 - np.exp(-1.0))
_DIFFUSE_DENOM = (1.0 + _K) * np.pi

COS_CLAMP = 1.0 - 1e-7
POLE_EPS = 1e-8
HALF_VECTOR_EPS = 1e-8


class DegenerateDirectionError(ValueError):
    """Raised when the half vector of (nearly) antipodal directions is requested."""


def eval_diffuse(c):
    """Softened cosine-weighted diffuse term on c = n'.w_i', c in [-1, 1]."""
    c = np.asarray(c, dtype=np.float64)
    elu = np.where(c >= 0, c, ELU_ALPHA * np.expm1(np.minimum(c, 0.0)))
    return (elu + _K) / _DIFFUSE_DENOM


def eval_diffuse_grad(c):
    c = np.asarray(c, dtype=np.float64)
    d = np.where(c >= 0, 1.0, ELU_ALPHA * np.exp(np.minimum(c, 0.0)))
    return d / _DIFFUSE_DENOM


def half_vector(wi, wo):
    """normalize(wi + wo); raises DegenerateDirectionError for antipodal inputs."""
    s = np.asarray(wi, dtype=np.float64) + np.asarray(wo, dtype=np.float64)
    n = np.linalg.norm(s, axis=-1)
    if np.any(n < HALF_VECTOR_EPS):
        raise DegenerateDirectionError("light and view directions are antipodal")
    return s / n[..., None]


def rotate_to_frame(frame: Rotation | np.ndarray, v: np.ndarray) -> np.ndarray:
    """World -> shading-frame coordinates (inverse of the stored rotation)."""
    q = frame.q if isinstance(frame, Rotation) else np.asarray(frame, dtype=np.float64)
    R = quat_to_rotmat(q)
    return np.einsum("...ji,...j->...i", R, np.asarray(v, dtype=np.float64))


def _lobe_eval(h_local: np.ndarray, sigma: np.ndarray):
    """Evaluate lobes given h already in each lobe's local frame.

    h_local: (..., 3), sigma: broadcastable (..., 3). Returns (value, cache).
    """
    sx, sy, sz = sigma[..., 0], sigma[..., 1], sigma[..., 2]
    cz = np.clip(h_local[..., 2], -COS_CLAMP, COS_CLAMP)
    theta = np.arccos(cz)
    px, py = h_local[..., 0], h_local[..., 1]
    pn = np.sqrt(px * px + py * py)
    pole = pn < POLE_EPS
    pn_safe = np.where(pole, 1.0, pn)
    shx = np.where(pole, 1.0, px / pn_safe)
    shy = np.where(pole, 0.0, py / pn_safe)
    aniso = np.sqrt((shx / sx) ** 2 + (shy / sy) ** 2)
    u = theta * aniso / sz
    val = np.exp(-0.5 * u * u) / sz
    cache = (cz, theta, pn, pole, shx, shy, aniso, u, val, sigma)
    return val, cache


def eval_angular_gaussian(lobe, h) -> np.ndarray:
    """One lobe at unit half vector(s) h given in the lobe's parent frame."""
    v = rotate_to_frame(lobe.frame, h)
    val, _ = _lobe_eval(v, lobe.sigma)
    return val


def eval_specular(alpha: np.ndarray, basis: AngularGaussianBasis, h) -> np.ndarray:
    """Mixture over the shared lobes: sum_j alpha_j G_j(h). Linear in alpha."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape[-1] != len(basis):
        raise ValueError("weight count does not match basis size")
    h = np.asarray(h, dtype=np.float64)
    R = quat_to_rotmat(basis.quats)  # (J, 3, 3)
    v = np.einsum("jba,...b->...ja", R, h)
    val, _ = _lobe_eval(v, basis.sigma)
    return np.einsum("...j,...j->...", alpha, val)


def eval_reflectance(g: SpatialGaussian, basis: AngularGaussianBasis, wi, wo) -> np.ndarray:
    """RGB reflectance of one gaussian for world-space unit directions."""
    wi_l = rotate_to_frame(g.frame, wi)
    wo_l = rotate_to_frame(g.frame, wo)
    diffuse = g.rho_d * eval_diffuse(wi_l[2])
    h = half_vector(wi_l, wo_l)
    return diffuse + g.rho_s * eval_specular(g.alpha, basis, h)


# ---------------------------------------------------------------------------
# Batched pipeline path with hand-written backward.
# ---------------------------------------------------------------------------

def shade_forward(frame_q, rho_d_raw, rho_s_raw, alpha_raw, basis_quats, basis_sigma_log,
                  wi, wo, specular: bool = True):
    """Reflectance for N gaussians at once. Returns (rgb (N,3), cache)."""
    frame_q = np.asarray(frame_q, dtype=np.float64)
    wi = np.asarray(wi, dtype=np.float64)
    wo = np.asarray(wo, dtype=np.float64)
    Rf = quat_to_rotmat(frame_q)
    wi_l = np.einsum("nji,nj->ni", Rf, wi)
    wo_l = np.einsum("nji,nj->ni", Rf, wo)
    rho_d = np.logaddexp(0.0, np.asarray(rho_d_raw, dtype=np.float64))
    c = wi_l[:, 2]
    fd = eval_diffuse(c)
    rgb = rho_d * fd[:, None]
    cache = {
        "frame_q": frame_q, "Rf": Rf, "wi": wi, "wo": wo, "wi_l": wi_l, "wo_l": wo_l,
        "rho_d_raw": np.asarray(rho_d_raw, dtype=np.float64), "fd": fd, "c": c,
        "specular": specular,
    }
    if specular:
        rho_s = np.logaddexp(0.0, np.asarray(rho_s_raw, dtype=np.float64))
        alpha = np.logaddexp(0.0, np.asarray(alpha_raw, dtype=np.float64))
        hw = wi_l + wo_l
        hn = np.linalg.norm(hw, axis=1)
        if np.any(hn < HALF_VECTOR_EPS):
            raise DegenerateDirectionError("light and view directions are antipodal")
        h = hw / hn[:, None]
        Rl = quat_to_rotmat(np.asarray(basis_quats, dtype=np.float64))
        v = np.einsum("jba,nb->nja", Rl, h)
        sigma = np.exp(np.asarray(basis_sigma_log, dtype=np.float64))
        G, lobe_cache = _lobe_eval(v, sigma)
        fs = np.einsum("nj,nj->n", alpha, G)
        rgb = rgb + rho_s * fs[:, None]
        cache.update({
            "rho_s_raw": np.asarray(rho_s_raw, dtype=np.float64),
            "alpha_raw": np.asarray(alpha_raw, dtype=np.float64), "alpha": alpha,
            "basis_quats": np.asarray(basis_quats, dtype=np.float64),
            "basis_sigma_log": np.asarray(basis_sigma_log, dtype=np.float64),
            "h": h, "hn": hn, "Rl": Rl, "v": v, "G": G, "fs": fs,
            "lobe_cache": lobe_cache,
        })
    return rgb, cache


def shade_backward(cache, drgb):
    """Reverse of shade_forward. Returns a dict of gradients including dwi/dwo."""
    drgb = np.asarray(drgb, dtype=np.float64)
    Rf, wi, wo = cache["Rf"], cache["wi"], cache["wo"]
    fd, c = cache["fd"], cache["c"]
    rho_d_raw = cache["rho_d_raw"]
    rho_d = np.logaddexp(0.0, rho_d_raw)

    d_rho_d = drgb * fd[:, None]
    d_rho_d_raw = d_rho_d * sigmoid(rho_d_raw)
    d_fd = np.einsum("nc,nc->n", drgb, rho_d)
    d_c = d_fd * eval_diffuse_grad(c)
    d_wi_l = np.zeros_like(cache["wi_l"])
    d_wo_l = np.zeros_like(cache["wo_l"])
    d_wi_l[:, 2] += d_c

    grads = {}
    if cache["specular"]:
        rho_s_raw, alpha_raw = cache["rho_s_raw"], cache["alpha_raw"]
        alpha, G, fs = cache["alpha"], cache["G"], cache["fs"]
        rho_s = np.logaddexp(0.0, rho_s_raw)
        h, hn, Rl, v = cache["h"], cache["hn"], cache["Rl"], cache["v"]
        cz, theta, pn, pole, shx, shy, aniso, u, val, sigma = cache["lobe_cache"]
        sx, sy, sz = sigma[..., 0], sigma[..., 1], sigma[..., 2]

        d_rho_s = drgb * fs[:, None]
        d_rho_s_raw = d_rho_s * sigmoid(rho_s_raw)
        d_fs = np.einsum("nc,nc->n", drgb, rho_s)
        d_alpha = d_fs[:, None] * G
        d_alpha_raw = d_alpha * sigmoid(alpha_raw)
        d_G = d_fs[:, None] * alpha

        # G = exp(-u^2/2)/sz with u = theta*A/sz: total dG/dsz = G(u^2-1)/sz.
        d_sz = np.sum(d_G * G * (u * u - 1.0) / sz, axis=0)
        d_u = d_G * G * (-u)
        d_theta = d_u * aniso / sz
        d_aniso = d_u * theta / sz

        # theta = arccos(clamped v_z); flat where the clamp is active.
        clamped = np.abs(v[..., 2]) >= COS_CLAMP
        d_cz = np.where(clamped, 0.0, -d_theta / np.sqrt(np.maximum(1.0 - cz * cz, 1e-30)))

        inv_a = 1.0 / np.maximum(aniso, 1e-30)
        d_shx = np.where(pole, 0.0, d_aniso * shx / (sx * sx) * inv_a)
        d_shy = np.where(pole, 0.0, d_aniso * shy / (sy * sy) * inv_a)
        d_sx = -np.sum(np.where(pole, d_aniso / (sx * sx),
                                d_aniso * shx * shx / (sx**3) * inv_a), axis=0)
        d_sy = -np.sum(np.where(pole, 0.0, d_aniso * shy * shy / (sy**3) * inv_a), axis=0)

        # s = proj/|proj|: pull back through the 2d normalize.
        pn_safe = np.where(pole, 1.0, pn)
        dot = d_shx * shx + d_shy * shy
        d_px = np.where(pole, 0.0, (d_shx - shx * dot) / pn_safe)
        d_py = np.where(pole, 0.0, (d_shy - shy * dot) / pn_safe)

        d_v = np.stack([d_px, d_py, d_cz], axis=-1)
        d_h = np.einsum("jba,nja->nb", Rl, d_v)
        d_Rl = np.einsum("nb,nja->jba", h, d_v)
        d_basis_quats = quat_to_rotmat_backward(cache["basis_quats"], d_Rl)
        d_sigma = np.stack([d_sx, d_sy, d_sz], axis=-1)
        d_basis_sigma_log = d_sigma * sigma

        # h = (wi_l + wo_l)/|wi_l + wo_l|
        d_hw = (d_h - h * np.sum(d_h * h, axis=1, keepdims=True)) / hn[:, None]
        d_wi_l += d_hw
        d_wo_l += d_hw

        grads.update({
            "rho_s_raw": d_rho_s_raw, "alpha_raw": d_alpha_raw,
            "basis_quats": d_basis_quats, "basis_sigma_log": d_basis_sigma_log,
        })

    # wi_l = Rf^T wi: dwi = Rf d(wi_l), dRf[b,a] += wi_b * d(wi_l)_a
    d_wi = np.einsum("nba,na->nb", Rf, d_wi_l)
    d_wo = np.einsum("nba,na->nb", Rf, d_wo_l)
    d_Rf = np.einsum("nb,na->nba", wi, d_wi_l) + np.einsum("nb,na->nba", wo, d_wo_l)
    d_frame_q = quat_to_rotmat_backward(cache["frame_q"], d_Rf)

    grads.update({
        "frame_q": d_frame_q, "rho_d_raw": d_rho_d_raw,
        "wi": d_wi, "wo": d_wo,
    })
    return grads
