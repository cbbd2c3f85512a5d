"""Layers, models, forward/backward passes with hand-written gradients, and losses.

Weights follow the ``y = W u + b`` convention: a dense layer stores ``W`` with
shape ``(out, in)``; a conv layer stores ``(out_ch, in_ch, kh, kw)``. Inputs
are batched along axis 0, images in NCHW layout.
"""

import itertools
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import kernels
from .errors import ContractError, InputError, ShapeError
from .linalg import LinearOperator, conv_operator

DEFAULT_SLOPE = 0.01


class Layer:
    """Base layer. Subclasses with parameters set ``params`` to a name->array dict."""

    kind = "layer"
    params: dict = {}

    def build(self, in_shape, rng, dtype):
        self.in_shape = tuple(in_shape)
        self.out_shape = self._out_shape(self.in_shape)
        return self.out_shape

    def _out_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy, cache, need_params=True):
        raise NotImplementedError

    def to_spec(self):
        return {"kind": self.kind}

    @property
    def has_params(self):
        return bool(self.params)

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.to_spec().items() if k != "kind")
        return f"{type(self).__name__}({args})"


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, out_features):
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        self.params = {}
        self.power_state = None

    def build(self, in_shape, rng, dtype):
        if tuple(in_shape) != (self.in_features,):
            raise ShapeError(f"Dense({self.in_features}, {self.out_features}) got input {in_shape}")
        limit = np.sqrt(6.0 / (self.in_features + self.out_features))
        self.params = {
            "W": rng.uniform(-limit, limit, (self.out_features, self.in_features)).astype(dtype),
            "b": np.zeros(self.out_features, dtype=dtype),
        }
        return super().build(in_shape, rng, dtype)

    def _out_shape(self, in_shape):
        return (self.out_features,)

    def forward(self, x):
        return x @ self.params["W"].T + self.params["b"], x

    def backward(self, dy, x, need_params=True):
        W = self.params["W"]
        grads = {"W": dy.T @ x, "b": dy.sum(axis=0)} if need_params else None
        return dy @ W, grads

    def operator(self):
        return LinearOperator.from_matrix(self.params["W"].astype(np.float64))

    def to_spec(self):
        return {"kind": self.kind, "in": self.in_features, "out": self.out_features}


class Conv2d(Layer):
    kind = "conv"

    def __init__(self, out_ch, in_ch, kh, kw, stride=1, pad=0):
        self.out_ch, self.in_ch = int(out_ch), int(in_ch)
        self.kh, self.kw = int(kh), int(kw)
        self.stride, self.pad = int(stride), int(pad)
        if self.stride < 1 or self.pad < 0:
            raise ShapeError("conv stride must be >= 1 and pad >= 0")
        self.params = {}
        self.power_state = None

    def build(self, in_shape, rng, dtype):
        if len(in_shape) != 3 or in_shape[0] != self.in_ch:
            raise ShapeError(f"Conv2d expects ({self.in_ch}, H, W) input, got {in_shape}")
        fan_in = self.in_ch * self.kh * self.kw
        fan_out = self.out_ch * self.kh * self.kw
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        self.params = {
            "W": rng.uniform(-limit, limit, (self.out_ch, self.in_ch, self.kh, self.kw)).astype(dtype),
            "b": np.zeros(self.out_ch, dtype=dtype),
        }
        return super().build(in_shape, rng, dtype)

    def _out_shape(self, in_shape):
        _, h, w = in_shape
        oh = kernels.conv_out_size(h, self.kh, self.stride, self.pad)
        ow = kernels.conv_out_size(w, self.kw, self.stride, self.pad)
        if oh <= 0 or ow <= 0:
            raise ShapeError(f"kernel {self.kh}x{self.kw} does not fit input {in_shape}")
        return (self.out_ch, oh, ow)

    def forward(self, x):
        cols = kernels.im2col(x, self.kh, self.kw, self.stride, self.pad)
        Wm = self.params["W"].reshape(self.out_ch, -1)
        out = np.matmul(Wm, cols) + self.params["b"][:, None]
        return out.reshape((x.shape[0],) + self.out_shape), (cols, x.shape)

    def backward(self, dy, cache, need_params=True):
        cols, x_shape = cache
        n = dy.shape[0]
        dyf = dy.reshape(n, self.out_ch, -1)
        Wm = self.params["W"].reshape(self.out_ch, -1)
        grads = None
        if need_params:
            dW = np.tensordot(dyf, cols, axes=([0, 2], [0, 2]))
            grads = {"W": dW.reshape(self.params["W"].shape), "b": dyf.sum(axis=(0, 2))}
        dcols = np.matmul(Wm.T, dyf)
        return kernels.col2im(dcols, x_shape, self.kh, self.kw, self.stride, self.pad), grads

    def operator(self):
        return conv_operator(self.params["W"], self.in_shape, self.stride, self.pad)

    def to_spec(self):
        return {"kind": self.kind, "out_ch": self.out_ch, "in_ch": self.in_ch, "kh": self.kh,
                "kw": self.kw, "stride": self.stride, "pad": self.pad}


class LeakyReLU(Layer):
    """``h(y) = max(y, a*y)``; the subgradient at exactly 0 uses slope ``a``."""

    kind = "leaky_relu"

    def __init__(self, slope=DEFAULT_SLOPE):
        slope = float(slope)
        if not 0.0 < slope <= 1.0:
            raise ShapeError(f"LeakyReLU slope must lie in (0, 1], got {slope}")
        self.slope = slope
        self.params = {}

    def forward(self, x):
        pos = x > 0
        return np.where(pos, x, x * x.dtype.type(self.slope)), pos

    def backward(self, dy, pos, need_params=True):
        return np.where(pos, dy, dy * dy.dtype.type(self.slope)), None

    def to_spec(self):
        return {"kind": self.kind, "slope": self.slope}


class MaxPool(Layer):
    """Non-overlapping max pooling (stride = window)."""

    kind = "maxpool"

    def __init__(self, window):
        self.window = int(window)
        self.params = {}

    def _out_shape(self, in_shape):
        c, h, w = in_shape
        if h < self.window or w < self.window:
            raise ShapeError(f"pool window {self.window} larger than input {in_shape}")
        return (c, h // self.window, w // self.window)

    def forward(self, x):
        out, idx = kernels.maxpool_forward(np.ascontiguousarray(x), self.window)
        return out, (idx, x.shape)

    def backward(self, dy, cache, need_params=True):
        idx, x_shape = cache
        return kernels.maxpool_backward(dy, idx, x_shape, self.window), None

    def to_spec(self):
        return {"kind": self.kind, "window": self.window}


class AvgPool(MaxPool):
    kind = "avgpool"

    def forward(self, x):
        n, c, h, w = x.shape
        k = self.window
        oh, ow = h // k, w // k
        blocks = x[:, :, :oh * k, :ow * k].reshape(n, c, oh, k, ow, k)
        return blocks.mean(axis=(3, 5)), x.shape

    def backward(self, dy, x_shape, need_params=True):
        k = self.window
        oh, ow = dy.shape[2], dy.shape[3]
        dx = np.zeros(x_shape, dtype=dy.dtype)
        spread = np.repeat(np.repeat(dy, k, axis=2), k, axis=3) / dy.dtype.type(k * k)
        dx[:, :, :oh * k, :ow * k] = spread
        return dx, None


class Flatten(Layer):
    kind = "flatten"

    def __init__(self):
        self.params = {}

    def _out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, x_shape, need_params=True):
        return dy.reshape(x_shape), None


class ResidualBlock(Layer):
    """``y = u + F(u)`` where ``F`` is the branch layer sequence."""

    kind = "residual"

    def __init__(self, branch):
        self.branch = list(branch)
        self.params = {}

    def build(self, in_shape, rng, dtype):
        shape = tuple(in_shape)
        for layer in self.branch:
            shape = layer.build(shape, rng, dtype)
        if shape != tuple(in_shape):
            raise ShapeError(f"residual branch maps {tuple(in_shape)} to {shape}; skip needs equal shapes")
        self.in_shape = self.out_shape = tuple(in_shape)
        return self.out_shape

    def forward(self, x):
        h, caches = x, []
        for layer in self.branch:
            h, c = layer.forward(h)
            caches.append(c)
        return x + h, caches

    def backward(self, dy, caches, need_params=True):
        g, grads = dy, []
        for layer, c in zip(reversed(self.branch), reversed(caches)):
            g, pg = layer.backward(g, c, need_params)
            grads.append(pg)
        grads.reverse()
        return dy + g, grads

    def to_spec(self):
        return {"kind": self.kind, "branch": [layer.to_spec() for layer in self.branch]}


LAYER_KINDS = {cls.kind: cls for cls in (Dense, Conv2d, LeakyReLU, MaxPool, AvgPool, Flatten, ResidualBlock)}


def layer_from_spec(spec):
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "dense":
        return Dense(spec["in"], spec["out"])
    if kind == "conv":
        return Conv2d(spec["out_ch"], spec["in_ch"], spec["kh"], spec["kw"],
                      spec.get("stride", 1), spec.get("pad", 0))
    if kind == "leaky_relu":
        return LeakyReLU(spec.get("slope", DEFAULT_SLOPE))
    if kind in ("maxpool", "avgpool"):
        return LAYER_KINDS[kind](spec["window"])
    if kind == "flatten":
        return Flatten()
    if kind == "residual":
        return ResidualBlock([layer_from_spec(s) for s in spec["branch"]])
    raise ShapeError(f"unknown layer kind {kind!r}")


_model_ids = itertools.count()


class Model:
    """An ordered layer stack with parameters held on the layers.

    ``version`` increases whenever parameters change through the library,
    which is how stale forward caches are detected.
    """

    def __init__(self, layers, input_shape, seed=0, dtype=np.float32):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.dtype = np.dtype(dtype)
        self.seed = seed
        self.version = 0
        self.uid = next(_model_ids)
        rng = np.random.default_rng(seed)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.build(shape, rng, self.dtype)
        self.output_shape = shape

    @classmethod
    def from_spec(cls, specs, input_shape, seed=0, dtype=np.float32):
        return cls([layer_from_spec(s) for s in specs], input_shape, seed, dtype)

    def to_spec(self):
        return [layer.to_spec() for layer in self.layers]

    def param_layers(self):
        """Parameterized layers in traversal order (residual branches inlined)."""
        out = []

        def walk(layers):
            for layer in layers:
                if isinstance(layer, ResidualBlock):
                    walk(layer.branch)
                elif layer.has_params:
                    out.append(layer)

        walk(self.layers)
        return out

    @property
    def power_states(self):
        return [layer.power_state for layer in self.param_layers()]

    def parameters(self):
        return [(layer, name) for layer in self.param_layers() for name in ("W", "b")]

    def touch(self):
        self.version += 1

    def copy(self):
        clone = Model.__new__(Model)
        clone.__dict__.update(self.__dict__)
        clone.layers = [layer_from_spec(s) for s in self.to_spec()]
        clone.uid = next(_model_ids)
        for src, dst in zip(_all_layers(self.layers), _all_layers(clone.layers)):
            dst.in_shape, dst.out_shape = src.in_shape, src.out_shape
            dst.params = {k: v.copy() for k, v in src.params.items()}
            if hasattr(src, "power_state"):
                dst.power_state = src.power_state
        return clone

    def predict(self, x, batch_size=4096):
        preds = [forward(self, x[i:i + batch_size])[0].argmax(axis=1)
                 for i in range(0, len(x), batch_size)]
        return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def _all_layers(layers):
    for layer in layers:
        yield layer
        if isinstance(layer, ResidualBlock):
            yield from _all_layers(layer.branch)


@dataclass
class ForwardCache:
    model_uid: int
    version: int
    layer_caches: list


@dataclass
class Gradients:
    """Per-parameter gradients aligned with ``Model.param_layers()``, plus d(loss)/d(input)."""

    params: Optional[List[dict]]
    input: np.ndarray = field(repr=False)

    def flat(self):
        return [g[name] for g in self.params for name in ("W", "b")]


def forward(model, batch):
    batch = np.asarray(batch)
    if batch.shape[1:] != model.input_shape:
        raise ShapeError(f"batch shape {batch.shape[1:]} does not match model input {model.input_shape}")
    h = np.ascontiguousarray(batch, dtype=model.dtype)
    caches = []
    for layer in model.layers:
        h, c = layer.forward(h)
        caches.append(c)
    return h, ForwardCache(model.uid, model.version, caches)


def backward(model, cache, loss_grad, need_params=True):
    """Backpropagate ``loss_grad`` (d loss / d logits) through ``model``."""
    if cache.model_uid != model.uid or cache.version != model.version:
        raise ContractError("forward cache is stale: parameters changed since the forward pass")
    g = np.asarray(loss_grad, dtype=model.dtype)
    collected = []
    for layer, c in zip(reversed(model.layers), reversed(cache.layer_caches)):
        g, pg = layer.backward(g, c, need_params)
        collected.append((layer, pg))
    collected.reverse()

    if not need_params:
        return Gradients(None, g)
    flat = []
    for layer, pg in collected:
        if isinstance(layer, ResidualBlock):
            flat.extend(_flatten_residual(layer, pg))
        elif layer.has_params:
            flat.append(pg)
    return Gradients(flat, g)


def _flatten_residual(block, grads):
    out = []
    for sub, sg in zip(block.branch, grads):
        if isinstance(sub, ResidualBlock):
            out.extend(_flatten_residual(sub, sg))
        elif sub.has_params:
            out.append(sg)
    return out


def residual_forward(block, x):
    x = np.asarray(x)
    if x.shape[1:] != block.in_shape:
        raise ShapeError(f"input {x.shape[1:]} does not match block input {block.in_shape}")
    return block.forward(x)[0]


def cross_entropy(logits, labels):
    """Mean negative log-softmax at the true class and its gradient w.r.t. ``logits``."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise InputError(f"labels shape {labels.shape} does not match batch {n}")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise InputError(f"labels must lie in [0, {k})")
    if n == 0:
        return 0.0, np.zeros_like(logits)
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logsum - z[rows, labels]))
    p = np.exp(z - logsum[:, None])
    p[rows, labels] -= 1.0
    return loss, (p / n).astype(logits.dtype)


def per_sample_cross_entropy(logits, labels):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    return np.log(np.exp(z).sum(axis=1)) - z[np.arange(len(z)), labels]


def accuracy(model, x, y):
    if len(x) == 0:
        raise InputError("empty dataset")
    return float(np.mean(model.predict(x) == y))
