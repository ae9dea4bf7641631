"""Minimal numpy layers with hand-written backward passes, plus Adam.

Activations are channels-last arrays of shape (batch, time, freq, channels).
Every layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``self.grads`` during ``backward``.
"""
from __future__ import annotations

import numpy as np


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)


class Conv2D(Layer):
    """2-D convolution; ``pad`` gives the zero padding on (time, freq)."""

    def __init__(self, c_in, c_out, kernel, pad, rng, dtype=np.float32):
        super().__init__()
        kh, kw = kernel
        fan_in = kh * kw * c_in
        limit = np.sqrt(6.0 / fan_in)
        self.params["W"] = rng.uniform(-limit, limit, size=(kh, kw, c_in, c_out)).astype(dtype)
        self.params["b"] = np.zeros(c_out, dtype=dtype)
        self.kernel = (kh, kw)
        self.pad = pad
        self.zero_grad()

    @staticmethod
    def _im2col(xp, kh, kw):
        B, T, F, C = xp.shape
        win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
        return win.transpose(0, 1, 2, 4, 5, 3).reshape(B * (T - kh + 1) * (F - kw + 1), kh * kw * C)

    def forward(self, x, training=False):
        kh, kw = self.kernel
        pt, pf = self.pad
        xp = np.pad(x, ((0, 0), (pt, pt), (pf, pf), (0, 0))) if (pt or pf) else x
        B, T, F, C = xp.shape
        cols = self._im2col(xp, kh, kw)
        W = self.params["W"]
        out = cols @ W.reshape(-1, W.shape[-1]) + self.params["b"]
        self._cache = (cols, xp.shape)
        return out.reshape(B, T - kh + 1, F - kw + 1, -1)

    def backward(self, dout):
        cols, xshape = self._cache
        kh, kw = self.kernel
        pt, pf = self.pad
        B, T, F, C = xshape
        W = self.params["W"]
        d2 = dout.reshape(-1, W.shape[-1])
        self.grads["W"] += (cols.T @ d2).reshape(W.shape)
        self.grads["b"] += d2.sum(axis=0)
        self._cache = None
        if dout.shape[2] < kw:
            # output narrower than the kernel (valid along freq): scatter columns back
            dcols = (d2 @ W.reshape(-1, W.shape[-1]).T).reshape(dout.shape[:3] + (kh, kw, C))
            To, Fo = dout.shape[1], dout.shape[2]
            dxp = np.zeros(xshape, dtype=dout.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + To, j:j + Fo, :] += dcols[:, :, :, i, j, :]
            return dxp[:, pt:T - pt, pf:F - pf, :]
        # input gradient: full correlation of dout with the flipped kernel,
        # evaluated only on the unpadded region of the input
        lo_t, lo_f = kh - 1 - pt, kw - 1 - pf
        dpad = np.pad(dout, ((0, 0), (max(lo_t, 0),) * 2, (max(lo_f, 0),) * 2, (0, 0)))
        To, Fo = T - 2 * pt, F - 2 * pf
        st, sf = max(lo_t, 0) - lo_t, max(lo_f, 0) - lo_f
        dpad = dpad[:, st:st + To + kh - 1, sf:sf + Fo + kw - 1]
        Wf = W[::-1, ::-1].transpose(0, 1, 3, 2).reshape(-1, C)
        dx = self._im2col(np.ascontiguousarray(dpad), kh, kw) @ Wf
        return dx.reshape(B, To, Fo, C)


class BatchNorm(Layer):
    """Per-channel normalization over (batch, time, freq)."""

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        super().__init__()
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self.zero_grad()

    def forward(self, x, training=False):
        axes = (0, 1, 2)
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            n = x.size // x.shape[-1]
            m = self.momentum
            self.buffers["running_mean"] = ((1 - m) * self.buffers["running_mean"] + m * mean).astype(x.dtype)
            unbiased = var * n / max(n - 1, 1)
            self.buffers["running_var"] = ((1 - m) * self.buffers["running_var"] + m * unbiased).astype(x.dtype)
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        self._cache = (xhat, inv, training)
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, dout):
        xhat, inv, training = self._cache
        axes = (0, 1, 2)
        gamma = self.params["gamma"]
        self.grads["gamma"] += (dout * xhat).sum(axis=axes)
        self.grads["beta"] += dout.sum(axis=axes)
        dxhat = dout * gamma
        self._cache = None
        if not training:
            # running statistics are constants at inference
            return dxhat * inv
        return inv * (dxhat - dxhat.mean(axis=axes) - xhat * (dxhat * xhat).mean(axis=axes))


class ReLU(Layer):
    def forward(self, x, training=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class TimePool(Layer):
    """Average pooling with size (2, 1): halves the time axis, drops an odd last frame."""

    def forward(self, x, training=False):
        B, T, F, C = x.shape
        self._shape = x.shape
        T2 = T // 2
        return 0.5 * (x[:, 0:2 * T2:2] + x[:, 1:2 * T2:2])

    def backward(self, dout):
        dx = np.zeros(self._shape, dtype=dout.dtype)
        T2 = dout.shape[1]
        dx[:, 0:2 * T2:2] = 0.5 * dout
        dx[:, 1:2 * T2:2] = 0.5 * dout
        return dx


class TemporalSummary(Layer):
    """(B, T, 1, C) -> (B, C): mean over time plus max over time."""

    def forward(self, x, training=False):
        x = x[:, :, 0, :]
        self._shape = x.shape
        self._argmax = x.argmax(axis=1)
        return x.mean(axis=1) + x.max(axis=1)

    def backward(self, dout):
        B, T, C = self._shape
        dx = np.broadcast_to(dout[:, None, :] / T, (B, T, C)).copy()
        b_idx, c_idx = np.meshgrid(np.arange(B), np.arange(C), indexing="ij")
        dx[b_idx, self._argmax, c_idx] += dout
        return dx[:, :, None, :]


class Linear(Layer):
    def __init__(self, n_in, n_out, rng, dtype=np.float32, zero=False):
        super().__init__()
        limit = np.sqrt(6.0 / n_in)
        W = np.zeros((n_in, n_out)) if zero else rng.uniform(-limit, limit, size=(n_in, n_out))
        self.params["W"] = W.astype(dtype)
        self.params["b"] = np.zeros(n_out, dtype=dtype)
        self.zero_grad()

    def forward(self, x, training=False):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        self.grads["W"] += self._x.T @ dout
        self.grads["b"] += dout.sum(axis=0)
        return dout @ self.params["W"].T


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Adam:
    def __init__(self, params: dict, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        step = self.lr * np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] *= b1
            self.m[k] += (1 - b1) * g
            self.v[k] *= b2
            self.v[k] += (1 - b2) * g * g
            p -= (step * self.m[k] / (np.sqrt(self.v[k]) + self.eps)).astype(p.dtype)
