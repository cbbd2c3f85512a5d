"""White-box l2 attacks (FGM, PGD) and the adversarial training step."""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigError, InputError
from .nn import backward, cross_entropy, forward
from .optim import step_model
from .spectral import apply_constraints

ATTACK_BATCH = 2048


@dataclass(frozen=True)
class AttackConfig:
    """``alpha = alpha_ratio * eps`` is the PGD step length; ``clip`` optionally boxes the result."""

    kind: str = "pgd"
    eps: float = 0.1
    k: int = 100
    alpha_ratio: float = 0.02
    seed: int = 0
    clip: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if self.kind not in ("fgm", "pgd"):
            raise ConfigError(f"unknown attack {self.kind!r}")
        if self.eps < 0:
            raise ConfigError("eps must be non-negative")
        if self.kind == "pgd" and self.k < 1:
            raise ConfigError("PGD needs k >= 1")
        if not self.alpha_ratio > 0:
            raise ConfigError("alpha_ratio must be positive")

    def with_eps(self, eps):
        return AttackConfig(self.kind, eps, self.k, self.alpha_ratio, self.seed, self.clip)


def workers():
    """Worker cap from ``LYAPNET_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("LYAPNET_THREADS", "1")))
    except ValueError:
        return 1


def shard_map(fn, n, chunk=ATTACK_BATCH):
    """Apply ``fn(slice)`` over ``range(n)`` in chunks; results come back in index order."""
    slices = [slice(i, min(i + chunk, n)) for i in range(0, n, chunk)]
    w = workers()
    if w == 1 or len(slices) == 1:
        return [fn(s) for s in slices]
    with ThreadPoolExecutor(max_workers=w) as ex:
        return list(ex.map(fn, slices))


def input_gradient(model, x, y):
    """Gradient of the cross-entropy w.r.t. the input, one row per sample (float64)."""
    logits, cache = forward(model, x)
    _, g = cross_entropy(logits, y)
    return backward(model, cache, g, need_params=False).input.astype(np.float64)


def _row_norms(a):
    return np.sqrt(np.einsum("ij,ij->i", a, a)) if len(a) else np.zeros(0)


def _normalized(g):
    flat = g.reshape(len(g), -1)
    norms = _row_norms(flat)
    out = np.zeros_like(flat)
    nz = norms > 0
    out[nz] = flat[nz] / norms[nz, None]
    return out.reshape(g.shape)


def project_l2_ball(delta, eps, per_sample=False):
    """Nearest point of the closed l2 ball of radius ``eps`` (per row when ``per_sample``)."""
    if eps < 0:
        raise ConfigError("eps must be non-negative")
    delta = np.asarray(delta, dtype=np.float64)
    if not per_sample:
        n = float(np.linalg.norm(delta))
        return delta * (eps / n) if n > eps else delta.copy()
    flat = delta.reshape(len(delta), -1)
    norms = _row_norms(flat)
    scale = np.ones_like(norms)
    over = norms > eps
    scale[over] = eps / norms[over]
    return (flat * scale[:, None]).reshape(delta.shape)


def _clip(x, clip):
    return x if clip is None else np.clip(x, clip[0], clip[1])


def fgm_l2(model, x, y, eps, clip=None):
    """One normalized gradient step of length ``eps``; zero-gradient samples are left as is."""
    x = np.asarray(x, dtype=np.float64)
    if eps == 0 or len(x) == 0:
        return x.copy()

    def run(s):
        g = input_gradient(model, x[s], y[s])
        return _clip(x[s] + eps * _normalized(g), clip)

    return np.concatenate(shard_map(run, len(x)))


def pgd_l2(model, x, y, cfg):
    """``k`` normalized ascent steps of length ``alpha_ratio*eps``, each projected onto the eps-ball.

    Starts at the clean point (no random start).
    """
    if cfg.kind != "pgd":
        raise ConfigError("pgd_l2 needs a PGD config")
    x = np.asarray(x, dtype=np.float64)
    eps = cfg.eps
    if eps == 0 or len(x) == 0:
        return x.copy()
    alpha = cfg.alpha_ratio * eps

    def run(s):
        x0, ys = x[s], y[s]
        xt = x0.copy()
        for _ in range(cfg.k):
            g = input_gradient(model, xt, ys)
            delta = project_l2_ball(xt + alpha * _normalized(g) - x0, eps, per_sample=True)
            xt = _clip(x0 + delta, cfg.clip)
        return xt

    return np.concatenate(shard_map(run, len(x)))


def attack(model, x, y, cfg):
    if cfg.kind == "fgm":
        return fgm_l2(model, x, y, cfg.eps, cfg.clip)
    return pgd_l2(model, x, y, cfg)


def robust_accuracy(model, x, y, cfg):
    """Fraction of samples still classified correctly after the attack."""
    if len(x) == 0:
        raise InputError("empty dataset")
    x_adv = attack(model, x, y, cfg)
    return float(np.mean(model.predict(x_adv) == np.asarray(y)))


def adversarial_train_step(model, x, y, cfg, opt_state, reg=None):
    """Attack the batch, take one optimizer step on the adversarial loss, then re-apply the caps.

    Returns the adversarial loss.
    """
    x_in = attack(model, x, y, cfg) if cfg is not None and cfg.eps > 0 else x
    logits, cache = forward(model, x_in)
    loss, g = cross_entropy(logits, y)
    grads = backward(model, cache, g)
    step_model(model, opt_state, grads)
    if reg is not None:
        apply_constraints(model, reg)
    return loss
