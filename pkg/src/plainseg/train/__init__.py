"""Training recipe: AdamW + warmup schedule + parameter EMA + loop."""

from .ema import EMAState, ema_update, load_weights
from .loop import (
    LoopConfig,
    TrainState,
    apply_state,
    load_checkpoint,
    save_checkpoint,
    train_loop,
    weights_for_eval,
)
from .optim import (
    AdamWState,
    OptimizerConfig,
    ScheduleConfig,
    adamw_step,
    clip_gradients,
    lr_at_step,
)

__all__ = [
    "AdamWState",
    "EMAState",
    "LoopConfig",
    "OptimizerConfig",
    "ScheduleConfig",
    "TrainState",
    "adamw_step",
    "apply_state",
    "clip_gradients",
    "ema_update",
    "load_checkpoint",
    "load_weights",
    "lr_at_step",
    "save_checkpoint",
    "train_loop",
    "weights_for_eval",
]
