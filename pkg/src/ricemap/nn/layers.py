"""Numpy layers with hand-written backward passes.

All tensors are NCHW.  Every layer caches what it needs during ``forward`` and
consumes that cache in ``backward``; a layer instance therefore handles one
forward/backward pair at a time.
"""

from __future__ import annotations

import numpy as np


class Layer:
    """Base class: parameters live in ``params``, gradients in ``grads``."""

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grad(self) -> None:
        for name, p in self.params.items():
            self.grads[name] = np.zeros_like(p)


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, gain: float = 2.0) -> np.ndarray:
    """Uniform init with variance ``gain / fan_in`` (gain 2 is He, gain 1 preserves variance)."""
    limit = np.sqrt(3.0 * gain / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


def _check_nchw(x: np.ndarray, channels: int, who: str) -> None:
    if x.ndim != 4 or x.shape[1] != channels:
        raise ValueError(f"{who}: expected (N, {channels}, H, W) input, got {x.shape}")


def _pad1(x: np.ndarray) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))


class Conv2D(Layer):
    """Stride-1 cross-correlation with a 1x1 or 3x3 kernel (zero same-padding)."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 1,
                 rng: np.random.Generator | None = None) -> None:
        super().__init__()
        if kernel_size not in (1, 3):
            raise ValueError("kernel_size must be 1 or 3")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.k = kernel_size
        fan_in = in_channels * kernel_size * kernel_size
        self.params["weight"] = he_uniform(
            rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in)
        self.params["bias"] = np.zeros(out_channels, dtype=np.float32)
        self.zero_grad()
        self._x = None

    def forward(self, x, training=False):
        _check_nchw(x, self.in_channels, "Conv2D")
        self._x = x
        n, c, h, w = x.shape
        wgt = self.params["weight"]
        b = self.params["bias"]
        if self.k == 1:
            out = np.matmul(wgt[:, :, 0, 0], x.reshape(n, c, h * w))
        else:
            xp = _pad1(x)
            out = None
            for dy in range(3):
                for dx in range(3):
                    xs = np.ascontiguousarray(xp[:, :, dy:dy + h, dx:dx + w]).reshape(n, c, h * w)
                    term = np.matmul(wgt[:, :, dy, dx], xs)
                    out = term if out is None else out + term
        out = out + b[None, :, None]
        return out.reshape(n, self.out_channels, h, w)

    def backward(self, dy):
        x = self._x
        n, c, h, w = x.shape
        wgt = self.params["weight"]
        g = dy.reshape(n, self.out_channels, h * w)
        self.grads["bias"] += g.sum(axis=(0, 2))
        if self.k == 1:
            xf = x.reshape(n, c, h * w)
            self.grads["weight"][:, :, 0, 0] += np.matmul(g, xf.transpose(0, 2, 1)).sum(axis=0)
            dx = np.matmul(wgt[:, :, 0, 0].T, g)
            return dx.reshape(n, c, h, w)
        xp = _pad1(x)
        dxp = np.zeros_like(xp, dtype=np.result_type(dy, wgt))
        for oy in range(3):
            for ox in range(3):
                xs = np.ascontiguousarray(xp[:, :, oy:oy + h, ox:ox + w]).reshape(n, c, h * w)
                self.grads["weight"][:, :, oy, ox] += np.matmul(g, xs.transpose(0, 2, 1)).sum(axis=0)
                dxp[:, :, oy:oy + h, ox:ox + w] += np.matmul(wgt[:, :, oy, ox].T, g).reshape(n, c, h, w)
        return dxp[:, :, 1:-1, 1:-1]


class DepthwiseConv3x3(Layer):
    """Per-channel 3x3 cross-correlation, no bias."""

    def __init__(self, channels: int, rng: np.random.Generator | None = None) -> None:
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        # No nonlinearity follows a depthwise conv directly (the pointwise mix
        # carries the He gain), so its init only preserves variance.
        self.params["weight"] = he_uniform(rng, (channels, 3, 3), 9, gain=1.0)
        self.zero_grad()
        self._xp = None

    def forward(self, x, training=False):
        _check_nchw(x, self.channels, "DepthwiseConv3x3")
        h, w = x.shape[2:]
        xp = _pad1(x)
        self._xp = xp
        wgt = self.params["weight"]
        out = None
        for dy in range(3):
            for dx in range(3):
                term = xp[:, :, dy:dy + h, dx:dx + w] * wgt[None, :, dy, dx, None, None]
                out = term if out is None else out + term
        return out

    def backward(self, dy):
        xp = self._xp
        h, w = dy.shape[2:]
        wgt = self.params["weight"]
        dxp = np.zeros(xp.shape, dtype=np.result_type(dy, wgt))
        for oy in range(3):
            for ox in range(3):
                xs = xp[:, :, oy:oy + h, ox:ox + w]
                self.grads["weight"][:, oy, ox] += np.einsum("nchw,nchw->c", dy, xs)
                dxp[:, :, oy:oy + h, ox:ox + w] += dy * wgt[None, :, oy, ox, None, None]
        return dxp[:, :, 1:-1, 1:-1]


class DepthwiseSeparableConv(Layer):
    """Depthwise 3x3 followed by a biased pointwise 1x1 channel mix."""

    def __init__(self, in_channels: int, out_channels: int,
                 rng: np.random.Generator | None = None) -> None:
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.depthwise = DepthwiseConv3x3(in_channels, rng)
        self.pointwise = Conv2D(in_channels, out_channels, 1, rng)
        # Share storage with the sublayers so optimizers see one flat dict.
        self.params = {
            "depthwise": self.depthwise.params["weight"],
            "pointwise": self.pointwise.params["weight"],
            "bias": self.pointwise.params["bias"],
        }
        self.zero_grad()

    def zero_grad(self) -> None:
        if not hasattr(self, "depthwise"):
            return
        self.depthwise.zero_grad()
        self.pointwise.zero_grad()
        self.grads = {
            "depthwise": self.depthwise.grads["weight"],
            "pointwise": self.pointwise.grads["weight"],
            "bias": self.pointwise.grads["bias"],
        }

    def rebind(self) -> None:
        """Push ``params`` back into the sublayers after external replacement."""
        self.depthwise.params["weight"] = self.params["depthwise"]
        self.pointwise.params["weight"] = self.params["pointwise"]
        self.pointwise.params["bias"] = self.params["bias"]

    def forward(self, x, training=False):
        return self.pointwise.forward(self.depthwise.forward(x, training), training)

    def backward(self, dy):
        return self.depthwise.backward(self.pointwise.backward(dy))


class ReLU(Layer):
    def forward(self, x, training=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, dy):
        return np.where(self._mask, dy, 0).astype(dy.dtype, copy=False)


class MaxPool2x2(Layer):
    """2x2/stride-2 max pooling; ties route to the first element in row-major order."""

    def forward(self, x, training=False):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"MaxPool2x2 needs even spatial dims, got {h}x{w}")
        win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        win = win.reshape(n, c, h // 2, w // 2, 4)
        self._idx = np.argmax(win, axis=-1)
        self._shape = x.shape
        return np.take_along_axis(win, self._idx[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        n, c, h, w = self._shape
        win = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
        np.put_along_axis(win, self._idx[..., None], dy[..., None], axis=-1)
        win = win.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return win.reshape(n, c, h, w)


class Upsample2x(Layer):
    """Nearest-neighbour 2x upsampling."""

    def forward(self, x, training=False):
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, dy):
        n, c, h, w = dy.shape
        return dy.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


class Dropout(Layer):
    """Inverted dropout; identity outside training mode or at rate 0."""

    def __init__(self, rate: float) -> None:
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate
        self.rng: np.random.Generator | None = None
        self._mask = None

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        rng = self.rng if self.rng is not None else np.random.default_rng(0)
        keep = rng.random(x.shape) >= self.rate
        self._mask = keep.astype(x.dtype) / x.dtype.type(1.0 - self.rate)
        return x * self._mask

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


def softmax_channels(logits: np.ndarray) -> np.ndarray:
    """Softmax over axis 1."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class Softmax(Layer):
    def forward(self, x, training=False):
        self._p = softmax_channels(x)
        return self._p

    def backward(self, dy):
        p = self._p
        return p * (dy - (dy * p).sum(axis=1, keepdims=True))


def add_residual(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ValueError(f"residual add shape mismatch: {a.shape} vs {b.shape}")
    return a + b


def cross_entropy(probs: np.ndarray, onehot: np.ndarray, eps: float = 1e-7) -> float:
    """Mean per-pixel categorical cross-entropy.

    Probabilities are floored at ``eps`` so log(0) cannot occur; there is no
    upper clip, so an exact one-hot prediction scores exactly 0.
    """
    p = np.maximum(probs, eps)
    per_pixel = -(onehot * np.log(p)).sum(axis=1)
    return float(per_pixel.mean(dtype=np.float64))


def softmax_cross_entropy(logits: np.ndarray, onehot: np.ndarray):
    """Fused softmax + mean cross-entropy.

    Returns ``(loss, probs, dlogits)``; the gradient is the exact derivative of
    the unclipped loss, ``(p - y) / pixels``.
    """
    if logits.shape != onehot.shape:
        raise ValueError(f"logits {logits.shape} vs labels {onehot.shape}")
    probs = softmax_channels(logits)
    z = logits - logits.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    pixels = logits.shape[0] * int(np.prod(logits.shape[2:]))
    loss = float(-(onehot * log_p).sum(dtype=np.float64) / pixels)
    dlogits = (probs - onehot) / logits.dtype.type(pixels)
    return loss, probs, dlogits
