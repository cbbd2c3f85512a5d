"""SGD with momentum and Adam, both with optional L2 (Frobenius) weight decay."""

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import ConfigError, NumericError, ShapeError


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    buffers: List[dict] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer kind {self.kind!r}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")

    @classmethod
    def from_config(cls, cfg):
        cfg = dict(cfg)
        return cls(**{k: v for k, v in cfg.items() if k in cls.__dataclass_fields__ and k not in ("t", "buffers")})


def optimizer_step(state, params, grads, decay_mask=None):
    """Update ``params`` in place and return them.

    SGD:  v <- mu*v - lr*(g + lam*w);  w <- w + v
    Adam: g' = g + lam*w, then the usual bias-corrected moment update.

    ``decay_mask`` selects which parameters receive weight decay (all by default).
    """
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    for w, g in zip(params, grads):
        if w.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {w.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
    if decay_mask is None:
        decay_mask = [True] * len(params)
    if not state.buffers:
        state.buffers = [{"m": np.zeros_like(w), "v": np.zeros_like(w)} for w in params]
    elif len(state.buffers) != len(params) or any(b["m"].shape != w.shape for b, w in zip(state.buffers, params)):
        raise ShapeError("optimizer buffers do not match parameters")

    state.t += 1
    for w, g, buf, decay in zip(params, grads, state.buffers, decay_mask):
        if decay and state.weight_decay:
            g = g + w.dtype.type(state.weight_decay) * w
        if state.kind == "sgd":
            m = buf["m"]
            m *= m.dtype.type(state.momentum)
            m -= m.dtype.type(state.lr) * g
            w += m
        else:
            b1, b2 = state.beta1, state.beta2
            m, v = buf["m"], buf["v"]
            m *= m.dtype.type(b1)
            m += m.dtype.type(1 - b1) * g
            v *= v.dtype.type(b2)
            v += v.dtype.type(1 - b2) * g * g
            m_hat = m / (1 - b1 ** state.t)
            v_hat = v / (1 - b2 ** state.t)
            w -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(w.dtype)
    return params


def step_model(model, state, grads):
    """Apply one optimizer step to every parameter of ``model``; biases are not decayed."""
    params = [layer.params[name] for layer, name in model.parameters()]
    mask = [name == "W" for _, name in model.parameters()]
    optimizer_step(state, params, grads.flat(), mask)
    for w in params:
        if not np.all(np.isfinite(w)):
            raise NumericError("parameters became non-finite after optimizer step")
    model.touch()
