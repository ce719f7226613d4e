"""AdamW with decoupled weight decay, warmup + cosine lr, layer-wise lr decay."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError


@dataclass(frozen=True)
class OptimConfig:
    base_lr: float = 5e-4
    weight_decay: float = 0.05
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 32
    warmup_lr: float = 1e-6
    warmup_epochs: float = 5
    total_epochs: float = 100
    layer_decay: float = 0.75
    min_lr: float = 0.0

    def validate(self) -> None:
        b1, b2 = self.betas
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")
        if not 0 <= self.warmup_epochs <= self.total_epochs:
            raise ConfigError("need 0 <= warmup_epochs <= total_epochs")
        if not 0.0 < self.layer_decay <= 1.0:
            raise ConfigError("layer_decay must lie in (0, 1]")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if min(self.base_lr, self.warmup_lr, self.min_lr, self.weight_decay, self.eps) < 0:
            raise ConfigError("rates, eps and weight decay must be >= 0")


@dataclass
class AdamWState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamWState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


def scaled_base_lr(cfg: OptimConfig) -> float:
    """Linear scaling rule: ``base_lr * batch_size / 256``."""
    return cfg.base_lr * cfg.batch_size / 256


def lr_at(step: int, steps_per_epoch: int, cfg: OptimConfig) -> float:
    """Per-step learning rate.

    Linear from ``warmup_lr`` to the scaled peak over the warmup steps, then
    half-cosine from the peak down to ``min_lr``. The warmup lr is not scaled
    by batch size. Steps past the end return the final value.
    """
    if step < 0:
        raise ConfigError("step must be >= 0")
    peak = scaled_base_lr(cfg)
    warm = int(round(cfg.warmup_epochs * steps_per_epoch))
    total = int(round(cfg.total_epochs * steps_per_epoch))
    if step < warm:
        return cfg.warmup_lr + (peak - cfg.warmup_lr) * step / warm
    decay_steps = total - warm
    if decay_steps <= 0:
        return peak
    progress = min((step - warm) / decay_steps, 1.0)
    return cfg.min_lr + 0.5 * (peak - cfg.min_lr) * (1.0 + math.cos(math.pi * progress))


def layer_lr_scale(layer_index: int, num_layers: int, decay: float) -> float:
    """``decay ** (num_layers - layer_index)``; heads sit at ``num_layers``."""
    if not 0 <= layer_index <= num_layers:
        raise ConfigError(f"layer_index {layer_index} outside [0, {num_layers}]")
    return decay ** (num_layers - layer_index)


def adamw_step(params: dict, grads: dict, state: AdamWState, lr: float, cfg: OptimConfig,
               lr_scales: dict | None = None, decay_mask: dict | None = None) -> None:
    """One in-place AdamW update.

    ``lr_scales`` maps parameter name to a multiplier (layer-wise decay);
    ``decay_mask`` maps name to whether weight decay applies (default: all).
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    b1, b2 = cfg.betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step_lr = lr * (lr_scales[name] if lr_scales else 1.0)
        wd = cfg.weight_decay if (decay_mask is None or decay_mask[name]) else 0.0
        update = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        if wd:
            update = update + wd * p
        p -= step_lr * update
