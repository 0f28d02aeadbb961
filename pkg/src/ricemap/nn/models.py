"""The two rice-mapping architectures: a pixel-wise DNN and a depthwise-separable U-Net."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ricemap.nn.layers import (
    Conv2D,
    DepthwiseSeparableConv,
    Dropout,
    Layer,
    MaxPool2x2,
    ReLU,
    Upsample2x,
    add_residual,
    softmax_channels,
)

N_CLASSES = 5
UNET_DEPTH = 4
# Pixels per DNN inference block.  Every block has the same width, so BLAS
# runs the same kernel for each pixel wherever it sits in the input.
PIXEL_BLOCK = 1024


@dataclass(frozen=True)
class ModelSpec:
    architecture: str  # "dnn" or "unet"
    input_channels: int
    hidden: tuple[int, ...] = (256, 128, 64)
    dropout: float = 0.2
    base_filters: int = 32
    depth: int = UNET_DEPTH
    classes: int = N_CLASSES

    def __post_init__(self):
        arch = self.architecture.lower()
        object.__setattr__(self, "architecture", arch)
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if arch not in ("dnn", "unet"):
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.input_channels < 1:
            raise ValueError("input_channels must be >= 1")
        if self.classes != N_CLASSES:
            raise ValueError(f"classes is fixed at {N_CLASSES}")
        if arch == "unet" and self.depth != UNET_DEPTH:
            raise ValueError(f"U-Net depth is fixed at {UNET_DEPTH}")
        if arch == "dnn" and (len(self.hidden) != 3 or min(self.hidden) <= 0):
            raise ValueError("DNN needs three positive hidden widths")
        if self.base_filters <= 0:
            raise ValueError("base_filters must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "input_channels": self.input_channels,
            "hidden": list(self.hidden),
            "dropout": self.dropout,
            "base_filters": self.base_filters,
            "depth": self.depth,
            "classes": self.classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["hidden"] = tuple(d.get("hidden", (256, 128, 64)))
        return cls(**d)


class Model:
    """Shared plumbing: named parameters, gradient reset, fused loss/backward."""

    spec: ModelSpec
    layers: dict[str, Layer]

    def __init__(self) -> None:
        self.layers = {}

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for lname, layer in self.layers.items():
            for pname, p in layer.params.items():
                out[f"{lname}.{pname}"] = p
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for lname, layer in self.layers.items():
            for pname, g in layer.grads.items():
                out[f"{lname}.{pname}"] = g
        return out

    def zero_grad(self) -> None:
        for layer in self.layers.values():
            layer.zero_grad()

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def set_rng(self, rng: np.random.Generator | None) -> None:
        for layer in self.layers.values():
            if isinstance(layer, Dropout):
                layer.rng = rng

    def load_parameters(self, values: dict[str, np.ndarray]) -> None:
        """Copy ``values`` into the existing parameter arrays (shapes must match)."""
        params = self.parameters()
        if set(values) != set(params):
            missing = sorted(set(params) ^ set(values))
            raise ValueError(f"parameter names differ: {missing[:5]}")
        for name, p in params.items():
            v = values[name]
            if v.shape != p.shape:
                raise ValueError(f"{name}: shape {v.shape} != {p.shape}")
            p[...] = v

    def astype(self, dtype) -> "Model":
        """Recast every parameter in place (used by float64 gradient checks)."""
        for layer in self.layers.values():
            for k in list(layer.params):
                layer.params[k] = layer.params[k].astype(dtype)
            if isinstance(layer, DepthwiseSeparableConv):
                layer.rebind()
        self.zero_grad()
        return self

    def logits(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Class probabilities, shape (N, 5, H, W)."""
        if x.ndim == 3:
            return self.predict(x[None])[0]
        if x.shape[1] != self.spec.input_channels:
            raise ValueError(
                f"model expects {self.spec.input_channels} channels, got {x.shape[1]}")
        return softmax_channels(self.logits(x, training=False))


class DNN(Model):
    """Three hidden 1x1-conv layers with ReLU and dropout; pixel-wise by construction."""

    def __init__(self, spec: ModelSpec, seed: int = 0) -> None:
        super().__init__()
        if spec.architecture != "dnn":
            raise ValueError("spec.architecture must be 'dnn'")
        self.spec = spec
        rng = np.random.default_rng(seed)
        widths = (spec.input_channels, *spec.hidden)
        self._order: list[str] = []
        for i in range(3):
            self._add(f"dense{i}", Conv2D(widths[i], widths[i + 1], 1, rng))
            self._add(f"relu{i}", ReLU())
            self._add(f"drop{i}", Dropout(spec.dropout))
        self._add("head", Conv2D(widths[3], spec.classes, 1, rng))

    def _add(self, name: str, layer: Layer) -> None:
        self.layers[name] = layer
        self._order.append(name)

    def logits(self, x, training=False):
        for name in self._order:
            x = self.layers[name].forward(x, training)
        return x

    def backward(self, dlogits):
        g = dlogits
        for name in reversed(self._order):
            g = self.layers[name].backward(g)
        return g

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Per-pixel probabilities, bit-identical whether a pixel is predicted alone or in a tile."""
        if x.ndim == 3:
            return self.predict(x[None])[0]
        n, c, h, w = x.shape
        if c != self.spec.input_channels:
            raise ValueError(f"model expects {self.spec.input_channels} channels, got {c}")
        pixels = x.transpose(1, 0, 2, 3).reshape(c, -1)
        total = pixels.shape[1]
        out = np.empty((self.spec.classes, total), dtype=np.float32)
        block = np.zeros((1, c, 1, PIXEL_BLOCK), dtype=np.float32)
        for s in range(0, total, PIXEL_BLOCK):
            k = min(PIXEL_BLOCK, total - s)
            block[0, :, 0, :k] = pixels[:, s:s + k]
            block[0, :, 0, k:] = 0.0
            out[:, s:s + k] = softmax_channels(self.logits(block))[0, :, 0, :k]
        return out.reshape(self.spec.classes, n, h, w).transpose(1, 0, 2, 3)


class UNet(Model):
    """Four-level encoder/decoder with depthwise-separable convolutions.

    Decoder skips are fused by element-wise addition; a 1x1 conv brings the
    upsampled tensor to the skip's channel count first.
    """

    def __init__(self, spec: ModelSpec, seed: int = 0) -> None:
        super().__init__()
        if spec.architecture != "unet":
            raise ValueError("spec.architecture must be 'unet'")
        self.spec = spec
        rng = np.random.default_rng(seed)
        L = self.layers
        f = [spec.base_filters * 2 ** lvl for lvl in range(spec.depth + 1)]
        self.filters = f
        cin = spec.input_channels
        for lvl in range(spec.depth):
            L[f"enc{lvl}.conv0"] = DepthwiseSeparableConv(cin, f[lvl], rng)
            L[f"enc{lvl}.relu0"] = ReLU()
            L[f"enc{lvl}.conv1"] = DepthwiseSeparableConv(f[lvl], f[lvl], rng)
            L[f"enc{lvl}.relu1"] = ReLU()
            L[f"enc{lvl}.pool"] = MaxPool2x2()
            cin = f[lvl]
        L["mid.conv0"] = Conv2D(cin, f[-1], 3, rng)
        L["mid.relu0"] = ReLU()
        L["mid.conv1"] = Conv2D(f[-1], f[-1], 3, rng)
        L["mid.relu1"] = ReLU()
        cin = f[-1]
        for lvl in reversed(range(spec.depth)):
            L[f"dec{lvl}.match"] = Conv2D(cin, f[lvl], 1, rng)
            L[f"dec{lvl}.up"] = Upsample2x()
            L[f"dec{lvl}.conv0"] = DepthwiseSeparableConv(f[lvl], f[lvl], rng)
            L[f"dec{lvl}.relu0"] = ReLU()
            L[f"dec{lvl}.conv1"] = DepthwiseSeparableConv(f[lvl], f[lvl], rng)
            L[f"dec{lvl}.relu1"] = ReLU()
            cin = f[lvl]
        L["head"] = Conv2D(cin, spec.classes, 1, rng)

    def logits(self, x, training=False):
        L = self.layers
        d = self.spec.depth
        h, w = x.shape[2:]
        if h % 2 ** d or w % 2 ** d:
            raise ValueError(f"U-Net input spatial size must be divisible by {2 ** d}, got {h}x{w}")
        skips = []
        for lvl in range(d):
            for step in ("conv0", "relu0", "conv1", "relu1"):
                x = L[f"enc{lvl}.{step}"].forward(x, training)
            skips.append(x)
            x = L[f"enc{lvl}.pool"].forward(x, training)
        for step in ("conv0", "relu0", "conv1", "relu1"):
            x = L[f"mid.{step}"].forward(x, training)
        for lvl in reversed(range(d)):
            # A 1x1 conv commutes exactly with nearest upsampling, so it runs
            # at the coarse resolution.
            x = L[f"dec{lvl}.match"].forward(x, training)
            x = L[f"dec{lvl}.up"].forward(x, training)
            x = add_residual(x, skips[lvl])
            for step in ("conv0", "relu0", "conv1", "relu1"):
                x = L[f"dec{lvl}.{step}"].forward(x, training)
        return L["head"].forward(x, training)

    def backward(self, dlogits):
        L = self.layers
        d = self.spec.depth
        g = L["head"].backward(dlogits)
        dskips = [None] * d
        for lvl in range(d):
            for step in ("relu1", "conv1", "relu0", "conv0"):
                g = L[f"dec{lvl}.{step}"].backward(g)
            dskips[lvl] = g
            g = L[f"dec{lvl}.up"].backward(g)
            g = L[f"dec{lvl}.match"].backward(g)
        for step in ("relu1", "conv1", "relu0", "conv0"):
            g = L[f"mid.{step}"].backward(g)
        for lvl in reversed(range(d)):
            g = L[f"enc{lvl}.pool"].backward(g)
            g = g + dskips[lvl]
            for step in ("relu1", "conv1", "relu0", "conv0"):
                g = L[f"enc{lvl}.{step}"].backward(g)
        return g


def build_dnn(spec: ModelSpec, seed: int = 0) -> DNN:
    return DNN(spec, seed)


def build_unet(spec: ModelSpec, seed: int = 0) -> UNet:
    return UNet(spec, seed)


def build_model(spec: ModelSpec, seed: int = 0) -> Model:
    return DNN(spec, seed) if spec.architecture == "dnn" else UNet(spec, seed)
