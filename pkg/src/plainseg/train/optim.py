"""Optimization recipe: AdamW with decoupled decay, constant-LR-after-warmup.

The learning rate ramps linearly from ``warmup_init_factor * base_lr`` at step
0 up to ``base_lr`` at the end of the warmup window (a fixed fraction of the
whole schedule) and stays constant afterwards. Weight decay is skipped for
one-dimensional parameters (biases, normalization weights).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from ..errors import ConfigError, NumericError


@dataclass(frozen=True)
class OptimizerConfig:
    base_lr: float = 4e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.1
    batch_size: int = 32
    clip_norm: float | None = None

    def __post_init__(self) -> None:
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("betas must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass(frozen=True)
class ScheduleConfig:
    total_steps: int = 2000
    warmup_fraction: float = 0.01
    warmup_init_factor: float = 0.001

    def __post_init__(self) -> None:
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if not 0 <= self.warmup_fraction < 1:
            raise ConfigError("warmup_fraction must lie in [0, 1)")
        if not 0 < self.warmup_init_factor <= 1:
            raise ConfigError("warmup_init_factor must lie in (0, 1]")

    @property
    def warmup_steps(self) -> int:
        return int(round(self.warmup_fraction * self.total_steps))


def lr_at_step(step: int, sched: ScheduleConfig, base_lr: float) -> float:
    """Learning rate at a given step: linear warmup then constant."""
    if step < 0:
        raise ConfigError("step must be non-negative")
    warmup = sched.warmup_steps
    if warmup > 0 and step < warmup:
        factor = sched.warmup_init_factor + \
            (1.0 - sched.warmup_init_factor) * (step / warmup)
        return base_lr * factor
    return base_lr


@dataclass
class AdamWState:
    step: int = 0
    exp_avg: dict[str, torch.Tensor] = field(default_factory=dict)
    exp_avg_sq: dict[str, torch.Tensor] = field(default_factory=dict)

    @classmethod
    def init(cls, params: dict[str, torch.Tensor]) -> "AdamWState":
        return cls(
            step=0,
            exp_avg={k: torch.zeros_like(v) for k, v in params.items()},
            exp_avg_sq={k: torch.zeros_like(v) for k, v in params.items()},
        )


def decay_applies(name: str, param: torch.Tensor) -> bool:
    """Decoupled decay skips biases and normalization scales (1-d tensors)."""
    return param.ndim > 1


@torch.no_grad()
def adamw_step(
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor],
    state: AdamWState,
    cfg: OptimizerConfig,
    lr: float,
) -> AdamWState:
    """One decoupled-weight-decay Adam update, in place.

    Matches the reference AdamW recurrence: decay first, then bias-corrected
    moment update ``p -= lr * m_hat / (sqrt(v_hat) + eps)``.
    """
    state.step += 1
    t = state.step
    bias_c1 = 1.0 - cfg.beta1 ** t
    bias_c2 = 1.0 - cfg.beta2 ** t
    for name, p in params.items():
        if name not in grads:
            continue
        g = grads[name]
        if not torch.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter '{name}'")
        if g.shape != p.shape:
            raise ConfigError(
                f"gradient shape {tuple(g.shape)} does not match parameter "
                f"'{name}' shape {tuple(p.shape)}"
            )
        if cfg.weight_decay and decay_applies(name, p):
            p.mul_(1.0 - lr * cfg.weight_decay)
        m = state.exp_avg[name]
        v = state.exp_avg_sq[name]
        m.mul_(cfg.beta1).add_(g, alpha=1.0 - cfg.beta1)
        v.mul_(cfg.beta2).addcmul_(g, g, value=1.0 - cfg.beta2)
        denom = (v.sqrt() / math.sqrt(bias_c2)).add_(cfg.epsilon)
        p.addcdiv_(m, denom, value=-lr / bias_c1)
    return state


def clip_gradients(grads: dict[str, torch.Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for g in grads.values():
            g.mul_(scale)
    return total
