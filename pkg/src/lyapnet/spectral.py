"""Per-layer spectral-norm enforcement by power iteration and weight rescaling."""

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import ConfigError, NumericError
from .linalg import power_iteration

SEMANTICS = ("sigma", "sigma_squared")


@dataclass
class RegularizerConfig:
    """How spectral caps are enforced.

    ``semantics="sigma"`` caps the largest singular value at ``beta``;
    ``"sigma_squared"`` caps its square, i.e. sigma at ``sqrt(beta)``.
    ``uniform_beta`` overrides the per-layer list with one shared cap.
    """

    mode: str = "projection"
    semantics: str = "sigma"
    per_layer_beta: List[float] = field(default_factory=list)
    train_power_iters: int = 1
    cert_power_iters: int = 100
    tol: float = 1e-3
    uniform_beta: Optional[float] = None

    def __post_init__(self):
        if self.mode not in ("projection", "off"):
            raise ConfigError(f"unknown regularizer mode {self.mode!r}")
        if self.semantics == "sigma2":
            self.semantics = "sigma_squared"
        if self.semantics not in SEMANTICS:
            raise ConfigError(f"unknown semantics {self.semantics!r}")
        if any(not b > 0 for b in self.per_layer_beta):
            raise ConfigError("every per-layer beta must be positive")
        if self.uniform_beta is not None and not self.uniform_beta > 0:
            raise ConfigError("uniform_beta must be positive")
        if self.train_power_iters < 1 or self.cert_power_iters < 1:
            raise ConfigError("power-iteration counts must be positive")

    def betas(self, n_layers):
        if self.uniform_beta is not None:
            return [float(self.uniform_beta)] * n_layers
        if len(self.per_layer_beta) != n_layers:
            raise ConfigError(f"{len(self.per_layer_beta)} betas configured for {n_layers} parameterized layers")
        return [float(b) for b in self.per_layer_beta]

    def threshold(self, beta):
        return math.sqrt(beta) if self.semantics == "sigma_squared" else beta


def estimate_layer_sigma(layer, power_state=None, iters=100, rng=None, tol=0.0):
    """Largest singular value of a dense/conv layer's linear part (bias excluded)."""
    if not hasattr(layer, "operator"):
        raise ConfigError(f"{type(layer).__name__} has no weight operator")
    if not np.all(np.isfinite(layer.params["W"])):
        raise NumericError("layer weights are non-finite")
    return power_iteration(layer.operator(), iters=iters, tol=tol, state=power_state, rng=rng)


def project_layer(layer, beta, sigma, semantics="sigma"):
    """Rescale ``W`` by ``threshold/sigma`` when ``sigma`` exceeds the threshold; the bias is kept."""
    thr = math.sqrt(beta) if semantics == "sigma_squared" else beta
    if sigma > thr:
        W = layer.params["W"]
        W *= W.dtype.type(thr / sigma)
    return layer


def _layer_rng(model, i):
    return np.random.default_rng([int(model.seed or 0), i])


def apply_constraints(model, config, full=False):
    """Bring every parameterized layer back under its cap.

    With ``full=False`` (once per optimizer step) each layer gets
    ``train_power_iters`` warm-started iterations and at most one rescale.
    With ``full=True`` (epoch end, before certification) the estimate uses
    ``cert_power_iters`` and the rescale repeats until the estimate sits
    within ``1 + tol`` of the threshold.
    """
    if config.mode == "off":
        return model
    layers = model.param_layers()
    betas = config.betas(len(layers))
    changed = False
    for i, (layer, beta) in enumerate(zip(layers, betas)):
        thr = config.threshold(beta)
        iters = config.cert_power_iters if full else config.train_power_iters
        rounds, slack = (5, 1 + 0.1 * config.tol) if full else (1, 1.0)
        for _ in range(rounds):
            sigma, layer.power_state = estimate_layer_sigma(
                layer, layer.power_state, iters=iters, rng=_layer_rng(model, i))
            if sigma <= thr * slack:
                break
            project_layer(layer, beta, sigma, config.semantics)
            changed = True
    if changed:
        model.touch()
    return model


def layer_sigmas(model, iters=100):
    """Certification-grade sigma estimate per parameterized layer (state is not persisted)."""
    out = []
    for i, layer in enumerate(model.param_layers()):
        sigma, _ = estimate_layer_sigma(layer, layer.power_state, iters=iters,
                                        rng=_layer_rng(model, i), tol=1e-12)
        out.append(sigma)
    return out
