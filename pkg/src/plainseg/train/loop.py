"""Deterministic training loop: sample, jitter, forward, AdamW, EMA, log.

Every step derives its own RNG from (seed, step), so the trajectory is a pure
function of the checkpointed state and resuming from step k reproduces the
uninterrupted run bit for bit. The metrics log is an append-only JSONL file
with one line per step carrying the learning rate and every named loss.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..augment import AugmentConfig, lsj_transform, sample_scale
from ..data.coco import DatasetManifest
from ..errors import ConfigError, DataError, NumericError
from ..model.detector import CascadeMaskRCNN, targets_from_annotations
from .ema import EMAState, ema_update
from .optim import AdamWState, OptimizerConfig, ScheduleConfig, adamw_step, \
    clip_gradients, lr_at_step

CHECKPOINT_FORMAT = "plainseg-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LoopConfig:
    checkpoint_interval: int = 500
    ema_decay: float = 0.9999

    def __post_init__(self) -> None:
        if self.checkpoint_interval < 1:
            raise ConfigError("checkpoint_interval must be >= 1")


@dataclass
class TrainState:
    step: int
    params: dict[str, torch.Tensor]
    opt: AdamWState
    ema: EMAState
    seed: int
    config: dict | None = None


def save_checkpoint(path: str | Path, state: TrainState) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "step": state.step,
        "params": {k: v.detach().clone() for k, v in state.params.items()},
        "shapes": {k: tuple(v.shape) for k, v in state.params.items()},
        "opt_step": state.opt.step,
        "exp_avg": state.opt.exp_avg,
        "exp_avg_sq": state.opt.exp_avg_sq,
        "ema_decay": state.ema.decay,
        "ema_shadow": state.ema.shadow,
        "seed": state.seed,
        "torch_rng": torch.get_rng_state(),
        "config": state.config,
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> TrainState:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    payload = torch.load(path, weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path} is not a plainseg checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise DataError(
            f"unsupported checkpoint version {payload.get('version')}")
    return TrainState(
        step=payload["step"],
        params=payload["params"],
        opt=AdamWState(step=payload["opt_step"], exp_avg=payload["exp_avg"],
                       exp_avg_sq=payload["exp_avg_sq"]),
        ema=EMAState(decay=payload["ema_decay"], shadow=payload["ema_shadow"]),
        seed=payload["seed"],
        config=payload.get("config"),
    )


def apply_state(model: CascadeMaskRCNN, state: TrainState) -> None:
    own = dict(model.named_parameters())
    if set(own) != set(state.params):
        raise DataError("checkpoint parameters do not match the model")
    with torch.no_grad():
        for name, value in state.params.items():
            if own[name].shape != value.shape:
                raise DataError(
                    f"checkpoint parameter '{name}' has shape "
                    f"{tuple(value.shape)}, model expects {tuple(own[name].shape)}"
                )
            own[name].copy_(value)


def weights_for_eval(state: TrainState, which: str) -> dict[str, torch.Tensor]:
    if which == "ema":
        return state.ema.shadow
    if which == "raw":
        return state.params
    raise ConfigError(f"weights must be 'ema' or 'raw', got '{which}'")


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step, 7])


def _build_batch(
    manifest: DatasetManifest,
    images: dict[int, np.ndarray],
    anns_by_image: dict[int, list],
    category_ids: list[int],
    aug_cfg: AugmentConfig,
    batch_size: int,
    rng: np.random.Generator,
):
    ids = sorted(images)
    chosen = rng.choice(ids, size=batch_size, replace=len(ids) < batch_size)
    tensors, targets = [], []
    for image_id in chosen:
        image_id = int(image_id)
        scale = sample_scale(aug_cfg, rng)
        sample = lsj_transform(images[image_id], anns_by_image[image_id],
                               scale, aug_cfg, rng)
        tensors.append(torch.from_numpy(
            np.ascontiguousarray(sample.image.transpose(2, 0, 1))))
        targets.append(targets_from_annotations(
            sample.annotations, (aug_cfg.crop_size, aug_cfg.crop_size),
            category_ids))
    return torch.stack(tensors), targets


def train_loop(
    model: CascadeMaskRCNN,
    manifest: DatasetManifest,
    images: dict[int, np.ndarray],
    aug_cfg: AugmentConfig,
    opt_cfg: OptimizerConfig,
    sched_cfg: ScheduleConfig,
    loop_cfg: LoopConfig,
    seed: int,
    out_dir: str | Path | None = None,
    resume: TrainState | None = None,
    config_snapshot: dict | None = None,
    steps: int | None = None,
) -> tuple[TrainState, list[dict]]:
    """Run (or continue) training for up to ``steps`` total optimizer steps.

    Returns the final state plus the metric records produced by this call.
    Checkpoints land in ``out_dir`` every ``checkpoint_interval`` steps and at
    the end; the metrics log is appended to when resuming.
    """
    if not manifest.images:
        raise DataError("cannot train on an empty dataset")
    total_steps = steps if steps is not None else sched_cfg.total_steps
    params = dict(model.named_parameters())
    if resume is not None:
        apply_state(model, resume)
        params = dict(model.named_parameters())
        opt_state = AdamWState(step=resume.opt.step,
                               exp_avg=resume.opt.exp_avg,
                               exp_avg_sq=resume.opt.exp_avg_sq)
        ema = resume.ema
        start_step = resume.step
    else:
        opt_state = AdamWState.init(params)
        ema = EMAState.init(params, decay=loop_cfg.ema_decay)
        start_step = 0

    anns_by_image = {im.id: manifest.annotations_for_image(im.id)
                     for im in manifest.images}
    category_ids = sorted(c.id for c in manifest.categories)

    out_path = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        log_file = open(out_path / "metrics.jsonl",
                        "a" if resume is not None else "w")

    records: list[dict] = []
    state = TrainState(step=start_step, params=params, opt=opt_state, ema=ema,
                       seed=seed, config=config_snapshot)
    model.train()
    try:
        for step in range(start_step, total_steps):
            rng = _step_rng(seed, step)
            batch, targets = _build_batch(
                manifest, images, anns_by_image, category_ids, aug_cfg,
                opt_cfg.batch_size, rng)
            try:
                losses = model.forward_train(batch, targets, rng)
            except NumericError as exc:
                raise NumericError(f"step {step}: {exc}") from exc
            model.zero_grad(set_to_none=True)
            losses["loss_total"].backward()
            grads = {name: p.grad for name, p in params.items()
                     if p.grad is not None}
            if opt_cfg.clip_norm is not None:
                clip_gradients(grads, opt_cfg.clip_norm)
            lr = lr_at_step(step, sched_cfg, opt_cfg.base_lr)
            try:
                adamw_step(params, grads, opt_state, opt_cfg, lr)
            except NumericError as exc:
                raise NumericError(f"step {step}: {exc}") from exc
            ema_update(ema, params)
            state.step = step + 1

            record = {"step": step, "lr": lr}
            record.update({name: float(value.detach())
                           for name, value in losses.items()})
            records.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            if out_path is not None and (
                    state.step % loop_cfg.checkpoint_interval == 0
                    or state.step == total_steps):
                save_checkpoint(out_path / f"ckpt_{state.step:06d}.pt", state)
    finally:
        if log_file is not None:
            log_file.close()
    return state, records
