"""Tensor layers with explicit forward and backward passes.

Feature maps are (batch, channels, height, width) arrays; here height is
the frequency axis and width is time. Each layer exposes params/grads as
name -> array dicts; backward accumulates into the grad arrays until
zero_grad. Forward caches activations only when training is True, so
inference stays pure and thread-safe.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..errors import DimensionMismatch


class Layer:
    def params(self) -> dict:
        return {}

    def grads(self) -> dict:
        return {}

    def buffers(self) -> dict:
        return {}

    def zero_grad(self):
        for g in self.grads().values():
            g.fill(0.0)

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class Conv2d(Layer):
    """Bias-free 2-D convolution (batch norm always follows)."""

    def __init__(self, in_ch, out_ch, kernel=3, stride=1, padding=1, rng=None, dtype=np.float32):
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.padding = kernel, stride, padding
        std = np.sqrt(2.0 / (in_ch * kernel * kernel))
        self.w = (rng.standard_normal((out_ch, in_ch, kernel, kernel)) * std).astype(dtype)
        self.gw = np.zeros_like(self.w)

    def params(self):
        return {"w": self.w}

    def grads(self):
        return {"w": self.gw}

    def out_size(self, h, w):
        k, s, p = self.kernel, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, x, training=False):
        k, s, p = self.kernel, self.stride, self.padding
        b, c, h, w = x.shape
        if c != self.in_ch:
            raise DimensionMismatch(f"expected {self.in_ch} input channels, got {c}")
        ho, wo = self.out_size(h, w)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        out = np.zeros((b, self.out_ch, ho, wo), dtype=x.dtype)
        for di in range(k):
            for dj in range(k):
                xs = xp[:, :, di : di + s * (ho - 1) + 1 : s, dj : dj + s * (wo - 1) + 1 : s]
                # tensordot, not einsum: same GEMM, no per-call path search
                out += np.moveaxis(
                    np.tensordot(xs, self.w[:, :, di, dj], axes=([1], [1])), 3, 1
                )
        if training:
            self._cache = (x.shape, xp)
        return out

    def backward(self, dy):
        k, s, p = self.kernel, self.stride, self.padding
        (b, c, h, w), xp = self._cache
        ho, wo = dy.shape[2], dy.shape[3]
        dxp = np.zeros_like(xp)
        for di in range(k):
            for dj in range(k):
                si = slice(di, di + s * (ho - 1) + 1, s)
                sj = slice(dj, dj + s * (wo - 1) + 1, s)
                self.gw[:, :, di, dj] += np.tensordot(
                    dy, xp[:, :, si, sj], axes=([0, 2, 3], [0, 2, 3])
                )
                dxp[:, :, si, sj] += np.moveaxis(
                    np.tensordot(dy, self.w[:, :, di, dj], axes=([1], [0])), 3, 1
                )
        return dxp[:, :, p : p + h, p : p + w] if p else dxp


class BatchNorm2d(Layer):
    """Per-channel batch normalization (biased variance throughout)."""

    def __init__(self, ch, eps=1e-5, momentum=0.1, gamma_init=1.0, dtype=np.float32):
        self.eps, self.momentum = eps, momentum
        self.gamma = np.full(ch, gamma_init, dtype=dtype)
        self.beta = np.zeros(ch, dtype=dtype)
        self.g_gamma = np.zeros_like(self.gamma)
        self.g_beta = np.zeros_like(self.beta)
        self.running_mean = np.zeros(ch, dtype=dtype)
        self.running_var = np.ones(ch, dtype=dtype)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self.g_gamma, "beta": self.g_beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, training=False):
        shape = (1, -1, 1, 1)
        if training:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean += self.momentum * (mean - self.running_mean)
            self.running_var += self.momentum * (var - self.running_var)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            x_hat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
            self._cache = (x_hat, inv_std, x.shape[0] * x.shape[2] * x.shape[3])
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            x_hat = (x - self.running_mean.reshape(shape)) * inv_std.reshape(shape)
        return self.gamma.reshape(shape) * x_hat + self.beta.reshape(shape)

    def backward(self, dy):
        x_hat, inv_std, n = self._cache
        shape = (1, -1, 1, 1)
        self.g_gamma += np.sum(dy * x_hat, axis=(0, 2, 3))
        self.g_beta += np.sum(dy, axis=(0, 2, 3))
        dx_hat = dy * self.gamma.reshape(shape)
        sum_dx_hat = dx_hat.sum(axis=(0, 2, 3)).reshape(shape)
        sum_dx_hat_xhat = (dx_hat * x_hat).sum(axis=(0, 2, 3)).reshape(shape)
        return (inv_std.reshape(shape) / n) * (n * dx_hat - sum_dx_hat - x_hat * sum_dx_hat_xhat)


class ReLU(Layer):
    def forward(self, x, training=False):
        if training:
            self._mask = x > 0
        return np.maximum(x, 0.0)

    def backward(self, dy):
        return dy * self._mask


class MaxPool2d(Layer):
    """3x3 stride-2 max pooling with zero-effect (-inf) padding."""

    def __init__(self, kernel=3, stride=2, padding=1):
        self.kernel, self.stride, self.padding = kernel, stride, padding

    def out_size(self, h, w):
        k, s, p = self.kernel, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, x, training=False):
        k, s, p = self.kernel, self.stride, self.padding
        b, c, h, w = x.shape
        ho, wo = self.out_size(h, w)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=-np.inf) if p else x
        stack = np.stack(
            [
                xp[:, :, di : di + s * (ho - 1) + 1 : s, dj : dj + s * (wo - 1) + 1 : s]
                for di in range(k)
                for dj in range(k)
            ]
        )
        winner = np.argmax(stack, axis=0)  # first max wins: deterministic
        out = np.take_along_axis(stack, winner[None], axis=0)[0]
        if training:
            self._cache = (winner, x.shape, xp.shape)
        return out

    def backward(self, dy):
        k, s, p = self.kernel, self.stride, self.padding
        winner, (b, c, h, w), xp_shape = self._cache
        ho, wo = dy.shape[2], dy.shape[3]
        dxp = np.zeros(xp_shape, dtype=dy.dtype)
        for m in range(k * k):
            di, dj = divmod(m, k)
            si = slice(di, di + s * (ho - 1) + 1, s)
            sj = slice(dj, dj + s * (wo - 1) + 1, s)
            dxp[:, :, si, sj] += dy * (winner == m)
        return dxp[:, :, p : p + h, p : p + w] if p else dxp


class AvgPool2x2(Layer):
    """2x2 stride-2 average pooling, ceil mode, averaging valid cells only.

    Odd extents keep their last row/column (divided by the actual count),
    so output sizes match the stride-2 convolution path and constant maps
    stay constant.
    """

    @staticmethod
    def out_size(h, w):
        return (h + 1) // 2, (w + 1) // 2

    def forward(self, x, training=False):
        b, c, h, w = x.shape
        ho, wo = self.out_size(h, w)
        xp = np.pad(x, ((0, 0), (0, 0), (0, h % 2), (0, w % 2)))
        total = (
            xp[:, :, 0::2, 0::2]
            + xp[:, :, 0::2, 1::2]
            + xp[:, :, 1::2, 0::2]
            + xp[:, :, 1::2, 1::2]
        )
        rows = np.full(ho, 2.0, dtype=x.dtype)
        cols = np.full(wo, 2.0, dtype=x.dtype)
        if h % 2:
            rows[-1] = 1.0
        if w % 2:
            cols[-1] = 1.0
        counts = rows[:, None] * cols[None, :]
        if training:
            self._cache = (x.shape, counts)
        return total / counts

    def backward(self, dy):
        (b, c, h, w), counts = self._cache
        spread = np.repeat(np.repeat(dy / counts, 2, axis=2), 2, axis=3)
        return spread[:, :, :h, :w]


class Dense(Layer):
    def __init__(self, in_dim, out_dim, rng=None, dtype=np.float32):
        std = np.sqrt(2.0 / in_dim)
        self.w = (rng.standard_normal((out_dim, in_dim)) * std).astype(dtype)
        self.b = np.zeros(out_dim, dtype=dtype)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)

    def params(self):
        return {"w": self.w, "b": self.b}

    def grads(self):
        return {"w": self.gw, "b": self.gb}

    def forward(self, x, training=False):
        if training:
            self._x = x
        return x @ self.w.T + self.b

    def backward(self, dy):
        self.gw += dy.T @ self._x
        self.gb += dy.sum(axis=0)
        return dy @ self.w


class SEBlock(Layer):
    """Channel gating: global average pool -> bottleneck -> sigmoid scales.

    identity_override skips the gating entirely (scales treated as 1);
    it exists so tests can compare the wiring against the SE-free model.
    """

    def __init__(self, ch, reduction=16, rng=None, dtype=np.float32):
        if ch % reduction != 0:
            raise DimensionMismatch(f"reduction {reduction} does not divide {ch} channels")
        hidden = ch // reduction
        self.w1 = (rng.standard_normal((hidden, ch)) * np.sqrt(2.0 / ch)).astype(dtype)
        self.b1 = np.zeros(hidden, dtype=dtype)
        self.w2 = (rng.standard_normal((ch, hidden)) * np.sqrt(2.0 / hidden)).astype(dtype)
        self.b2 = np.zeros(ch, dtype=dtype)
        self.gw1 = np.zeros_like(self.w1)
        self.gb1 = np.zeros_like(self.b1)
        self.gw2 = np.zeros_like(self.w2)
        self.gb2 = np.zeros_like(self.b2)
        self.identity_override = False

    def params(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def grads(self):
        return {"w1": self.gw1, "b1": self.gb1, "w2": self.gw2, "b2": self.gb2}

    def forward(self, x, training=False):
        if self.identity_override:
            if training:
                self._cache = None
            return x
        b, c, h, w = x.shape
        z = x.mean(axis=(2, 3))
        a = np.maximum(z @ self.w1.T + self.b1, 0.0)
        s = expit(a @ self.w2.T + self.b2)
        if training:
            self._cache = (x, z, a, s, h * w)
        return x * s[:, :, None, None]

    def backward(self, dy):
        if self._cache is None:
            return dy
        x, z, a, s, hw = self._cache
        ds = (dy * x).sum(axis=(2, 3))
        dx = dy * s[:, :, None, None]
        dlogit = ds * s * (1.0 - s)
        self.gw2 += dlogit.T @ a
        self.gb2 += dlogit.sum(axis=0)
        da = (dlogit @ self.w2) * (a > 0)
        self.gw1 += da.T @ z
        self.gb1 += da.sum(axis=0)
        dz = da @ self.w1
        dx += dz[:, :, None, None] / hw
        return dx


class StatPool(Layer):
    """Statistical pooling over time.

    Each time step's channel x frequency column is flattened; the output
    concatenates the mean and standard deviation over time, giving
    2 * C * H values per example.
    """

    VAR_EPS = 1e-8

    def forward(self, x, training=False):
        b, c, h, w = x.shape
        mean = x.mean(axis=3)
        centered = x - mean[:, :, :, None]
        var = np.mean(centered**2, axis=3)
        std = np.sqrt(var + self.VAR_EPS)
        if training:
            self._cache = (centered, std, w)
        return np.concatenate([mean.reshape(b, c * h), std.reshape(b, c * h)], axis=1)

    def backward(self, dy):
        centered, std, w = self._cache
        b, c, h = std.shape
        d_mean = dy[:, : c * h].reshape(b, c, h)
        d_std = dy[:, c * h :].reshape(b, c, h)
        d_var = d_std / (2.0 * std)
        dx = np.broadcast_to(d_mean[:, :, :, None] / w, centered.shape).copy()
        dx += d_var[:, :, :, None] * 2.0 * centered / w
        return dx


def se_block(channel_map, weights: SEBlock):
    """Apply one squeeze-excitation gate to a single (C, H, W) map."""
    channel_map = np.asarray(channel_map)
    if channel_map.ndim != 3:
        raise DimensionMismatch("channel map must be (channels, height, width)")
    return weights.forward(channel_map[None], training=False)[0]
