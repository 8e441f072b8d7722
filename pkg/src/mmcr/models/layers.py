"""Neural network layers with explicit forward/backward passes.

Everything runs in float64 NCHW.  Each layer owns its parameters and the
gradients filled in by ``backward``; caches from the last forward pass are
kept on the instance, so a layer instance is used by one training loop at
a time (inference shares weights but goes through fresh activations).
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Layer",
    "Conv2d",
    "ChannelNorm",
    "ReLU",
    "MaxPool2",
    "GlobalAvgPool",
    "Dense",
]


class Layer:
    """Base layer: parameter-free unless a subclass registers arrays."""

    def parameters(self) -> dict[str, np.ndarray]:
        return {}

    def gradients(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _im2col(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    """(N, C, H, W) -> (N, C*k*k, H*W) patch matrix for stride-1 same conv."""
    n, c, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(2, 3))
    # windows: (N, C, H, W, k, k) -> (N, C*k*k, H*W)
    return np.ascontiguousarray(windows.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * k * k, h * w)


class Conv2d(Layer):
    """3x3 stride-1 same-padding convolution via im2col + GEMM."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, k: int = 3):
        self.c_in = c_in
        self.c_out = c_out
        self.k = k
        scale = np.sqrt(2.0 / (c_in * k * k))
        self.weight = rng.normal(0.0, scale, size=(c_out, c_in * k * k))
        self.bias = np.zeros(c_out)
        self.d_weight = np.zeros_like(self.weight)
        self.d_bias = np.zeros_like(self.bias)
        self._cache = None

    def parameters(self):
        return {"W": self.weight, "b": self.bias}

    def gradients(self):
        return {"W": self.d_weight, "b": self.d_bias}

    def forward(self, x):
        n, c, h, w = x.shape
        cols = _im2col(x, self.k, self.k // 2)
        out = np.matmul(self.weight, cols) + self.bias[None, :, None]
        self._cache = (cols, x.shape)
        return out.reshape(n, self.c_out, h, w)

    def backward(self, dout):
        cols, x_shape = self._cache
        n, c, h, w = x_shape
        k, pad = self.k, self.k // 2
        dout2 = dout.reshape(n, self.c_out, h * w)

        flat_dout = dout2.transpose(1, 0, 2).reshape(self.c_out, n * h * w)
        flat_cols = cols.transpose(0, 2, 1).reshape(n * h * w, c * k * k)
        self.d_weight[...] = flat_dout @ flat_cols
        self.d_bias[...] = dout2.sum(axis=(0, 2))

        dcols = np.matmul(self.weight.T, dout2).reshape(n, c, k, k, h, w)
        dpadded = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
        for ki in range(k):
            for kj in range(k):
                dpadded[:, :, ki:ki + h, kj:kj + w] += dcols[:, :, ki, kj]
        return dpadded[:, :, pad:pad + h, pad:pad + w]


class ChannelNorm(Layer):
    """Per-sample normalization over (C, H, W) with a per-channel affine.

    Stateless across batches (no running statistics), so inference is the
    same function as training and predictions depend only on the weights.
    """

    def __init__(self, channels: int, eps: float = 1e-5):
        self.eps = eps
        self.gamma = np.ones(channels)
        self.beta = np.zeros(channels)
        self.d_gamma = np.zeros_like(self.gamma)
        self.d_beta = np.zeros_like(self.beta)
        self._cache = None

    def parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def gradients(self):
        return {"gamma": self.d_gamma, "beta": self.d_beta}

    def forward(self, x):
        mu = x.mean(axis=(1, 2, 3), keepdims=True)
        var = x.var(axis=(1, 2, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        self._cache = (xhat, inv)
        return self.gamma[None, :, None, None] * xhat + self.beta[None, :, None, None]

    def backward(self, dout):
        xhat, inv = self._cache
        self.d_gamma[...] = (dout * xhat).sum(axis=(0, 2, 3))
        self.d_beta[...] = dout.sum(axis=(0, 2, 3))
        dxhat = dout * self.gamma[None, :, None, None]
        mean_d = dxhat.mean(axis=(1, 2, 3), keepdims=True)
        mean_dx = (dxhat * xhat).mean(axis=(1, 2, 3), keepdims=True)
        return inv * (dxhat - mean_d - xhat * mean_dx)


class ReLU(Layer):
    """Rectifier with an optional negative slope.

    A small nonzero slope keeps gradient flowing through inactive units, so a
    bad step cannot permanently silence a channel.
    """

    def __init__(self, negative_slope: float = 0.0):
        self.negative_slope = float(negative_slope)
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, self.negative_slope * x if self.negative_slope else 0.0)

    def backward(self, dout):
        return np.where(self._mask, dout, self.negative_slope * dout if self.negative_slope else 0.0)


class MaxPool2(Layer):
    """2x2 stride-2 max pooling; ties route the gradient to the first max."""

    def __init__(self):
        self._cache = None

    def forward(self, x):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"MaxPool2 requires even spatial dims, got {h}x{w}")
        tiles = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        flat = tiles.reshape(n, c, h // 2, w // 2, 4)
        idx = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        self._cache = (idx, x.shape)
        return out

    def backward(self, dout):
        idx, (n, c, h, w) = self._cache
        dflat = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(dflat, idx[..., None], dout[..., None], axis=-1)
        return (dflat.reshape(n, c, h // 2, w // 2, 2, 2)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, h, w))


class GlobalAvgPool(Layer):
    """(N, C, H, W) -> (N, C) spatial mean."""

    def __init__(self):
        self._shape = None

    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dout):
        n, c, h, w = self._shape
        return np.broadcast_to(dout[:, :, None, None] / (h * w), (n, c, h, w)).copy()


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.weight = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out))
        self.bias = np.zeros(n_out)
        self.d_weight = np.zeros_like(self.weight)
        self.d_bias = np.zeros_like(self.bias)
        self._x = None

    def parameters(self):
        return {"W": self.weight, "b": self.bias}

    def gradients(self):
        return {"W": self.d_weight, "b": self.d_bias}

    def forward(self, x):
        self._x = x
        return x @ self.weight + self.bias

    def backward(self, dout):
        self.d_weight[...] = self._x.T @ dout
        self.d_bias[...] = dout.sum(axis=0)
        return dout @ self.weight.T
