"""Exponential moving average of model parameters."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from ..errors import ConfigError


@dataclass
class EMAState:
    """Shadow copy of every trainable parameter, updated every step."""

    decay: float
    shadow: dict[str, torch.Tensor]

    @classmethod
    def init(cls, params: dict[str, torch.Tensor], decay: float = 0.9999) -> "EMAState":
        if not 0 <= decay <= 1:
            raise ConfigError("EMA decay must lie in [0, 1]")
        return cls(decay=decay,
                   shadow={k: v.detach().clone() for k, v in params.items()})


@torch.no_grad()
def ema_update(ema: EMAState, params: dict[str, torch.Tensor]) -> EMAState:
    """shadow <- decay * shadow + (1 - decay) * param, elementwise."""
    for name, p in params.items():
        s = ema.shadow.get(name)
        if s is None or s.shape != p.shape:
            raise ConfigError(
                f"EMA shadow missing or mis-shaped for parameter '{name}'")
        s.mul_(ema.decay).add_(p, alpha=1.0 - ema.decay)
    return ema


@torch.no_grad()
def load_weights(module: torch.nn.Module, weights: dict[str, torch.Tensor]) -> None:
    """Copy a named-tensor dict into a module's parameters."""
    own = dict(module.named_parameters())
    for name, value in weights.items():
        if name not in own:
            raise ConfigError(f"unknown parameter '{name}' in weight dict")
        own[name].copy_(value)
