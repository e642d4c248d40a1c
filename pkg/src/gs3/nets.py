"""Small dense-network machinery: positional encoding and hand-written MLPs.

Two fixed architectures are used by the engine: the shadow refinement net
(input 61 = raw shadow value + encoded position + encoded light direction +
6-D latent, three hidden layers of 32, scalar sigmoid output) and the
residual net (input 60 = encoded view direction + encoded position + latent,
three hidden layers of 128, RGB sigmoid output). Hidden activations are
leaky ReLU with slope 0.01. Backward passes are exact reverse mode written
by hand; there is no generic autodiff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAKY_SLOPE = 0.01
PE_BANDS = 4

SHADOW_NET_WIDTHS = (61, 32, 32, 32, 1)
RESIDUAL_NET_WIDTHS = (60, 128, 128, 128, 3)


def positional_encode(x: np.ndarray, bands: int = PE_BANDS) -> np.ndarray:
    """NeRF-style encoding: [c, sin(2^0 pi c), cos(2^0 pi c), ..., sin(2^{B-1} pi c), cos(...)].

    Component-major layout, (..., d) -> (..., (2*bands+1)*d). Inputs are
    expected pre-normalized to roughly [-1, 1].
    """
    x = np.asarray(x, dtype=np.float64)
    parts = [x[..., :, None]]
    for b in range(bands):
        arg = (2.0**b) * np.pi * x[..., :, None]
        parts.append(np.sin(arg))
        parts.append(np.cos(arg))
    stacked = np.concatenate(parts, axis=-1)  # (..., d, 2B+1)
    return stacked.reshape(x.shape[:-1] + (x.shape[-1] * (2 * bands + 1),))


def positional_encode_backward(x: np.ndarray, dout: np.ndarray, bands: int = PE_BANDS) -> np.ndarray:
    """dL/dx for positional_encode given dL/d(encoding)."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    g = dout.reshape(x.shape[:-1] + (d, 2 * bands + 1))
    dx = g[..., 0].copy()
    for b in range(bands):
        k = (2.0**b) * np.pi
        arg = k * x
        dx += g[..., 1 + 2 * b] * k * np.cos(arg)
        dx -= g[..., 2 + 2 * b] * k * np.sin(arg)
    return dx


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class Mlp:
    """Dense net: affine -> leaky ReLU per hidden layer, affine -> sigmoid output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_mlp(widths: tuple[int, ...], rng: np.random.Generator) -> Mlp:
    """Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases)


def zero_mlp(widths: tuple[int, ...]) -> Mlp:
    weights = [np.zeros((fo, fi)) for fi, fo in zip(widths[:-1], widths[1:])]
    biases = [np.zeros(fo) for fo in widths[1:]]
    return Mlp(weights, biases)


def mlp_forward(net: Mlp, x: np.ndarray, want_cache: bool = False):
    """Evaluate the net on a batch (B, in_dim) or a single (in_dim,) vector."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != net.in_dim:
        raise ValueError(f"input width {x.shape[1]} does not match net input {net.in_dim}")
    cache = [x]
    h = x
    n_layers = len(net.weights)
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ W.T + b
        if i < n_layers - 1:
            h = np.where(z >= 0, z, LEAKY_SLOPE * z)
        else:
            h = sigmoid(z)
        cache.append(z)
    out = h[0] if single else h
    if want_cache:
        return out, cache
    return out


def mlp_backward(net: Mlp, cache: list[np.ndarray], dout: np.ndarray):
    """Reverse pass. Returns (weight grads, bias grads, dL/dinput).

    `cache` is the list produced by mlp_forward(want_cache=True): the input
    followed by the pre-activation of every layer.
    """
    dout = np.asarray(dout, dtype=np.float64)
    single = dout.ndim == 1
    if single:
        dout = dout[None, :]
    n_layers = len(net.weights)
    dW = [None] * n_layers
    db = [None] * n_layers
    # output layer: sigmoid
    z_last = cache[-1]
    s = sigmoid(z_last)
    delta = dout * s * (1.0 - s)
    for i in range(n_layers - 1, -1, -1):
        # activation of layer i's input
        if i == 0:
            h_in = cache[0]
        else:
            z_prev = cache[i]
            h_in = np.where(z_prev >= 0, z_prev, LEAKY_SLOPE * z_prev)
        dW[i] = delta.T @ h_in
        db[i] = delta.sum(axis=0)
        dh = delta @ net.weights[i]
        if i > 0:
            z_prev = cache[i]
            delta = dh * np.where(z_prev >= 0, 1.0, LEAKY_SLOPE)
    dx = dh
    if single:
        dx = dx[0]
    return dW, db, dx


def residual_net_input(wo: np.ndarray, mu: np.ndarray, latent: np.ndarray) -> np.ndarray:
    """[PE(view dir), PE(position), latent] -> (..., 60)."""
    return np.concatenate(
        [positional_encode(wo), positional_encode(mu), np.asarray(latent, dtype=np.float64)],
        axis=-1,
    )


def eval_residual(psi: Mlp, wo: np.ndarray, mu: np.ndarray, latent: np.ndarray) -> np.ndarray:
    """Per-gaussian additive RGB term, sigmoid-bounded in (0,1)."""
    return mlp_forward(psi, residual_net_input(wo, mu, latent))


@dataclass
class MlpGrads:
    """Gradient accumulator shaped like an Mlp."""

    dW: list[np.ndarray]
    db: list[np.ndarray]

    @classmethod
    def zeros_like(cls, net: Mlp) -> "MlpGrads":
        return cls([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])

    def add(self, dW, db):
        for a, g in zip(self.dW, dW):
            a += g
        for a, g in zip(self.db, db):
            a += g
