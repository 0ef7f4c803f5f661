"""Aggregate run configuration, presets, and file/CLI merging.

Precedence: built-in defaults < preset < config file < CLI overrides, with the
``PLAINSEG_SEED`` environment variable trumping everything for the seed. The
run-level seed is authoritative: sub-config seeds are derived from it after
merging so a snapshot fully reproduces the run.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from . import __version__
from .augment import AugmentConfig
from .data.toygen import ToyDatasetConfig
from .errors import ConfigError
from .evaluation import EvalConfig
from .model.anchors import AnchorConfig
from .model.cascade import CascadeConfig
from .model.vit import BackboneConfig
from .train.loop import LoopConfig
from .train.optim import OptimizerConfig, ScheduleConfig

SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class RunConfig:
    run_name: str = "run"
    seed: int = 0
    eval_weights: str = "ema"
    dataset: ToyDatasetConfig = ToyDatasetConfig()
    augment: AugmentConfig = AugmentConfig(crop_size=96)
    backbone: BackboneConfig = BackboneConfig()
    anchors: AnchorConfig = AnchorConfig()
    cascade: CascadeConfig = CascadeConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    schedule: ScheduleConfig = ScheduleConfig()
    loop: LoopConfig = LoopConfig()
    eval: EvalConfig = EvalConfig()

    def __post_init__(self) -> None:
        if self.eval_weights not in ("ema", "raw"):
            raise ConfigError("eval_weights must be 'ema' or 'raw'")
        if self.augment.crop_size != self.backbone.img_size:
            raise ConfigError(
                f"augment.crop_size ({self.augment.crop_size}) must equal "
                f"backbone.img_size ({self.backbone.img_size})"
            )


_SECTIONS = {
    "dataset": ToyDatasetConfig,
    "augment": AugmentConfig,
    "backbone": BackboneConfig,
    "anchors": AnchorConfig,
    "cascade": CascadeConfig,
    "optimizer": OptimizerConfig,
    "schedule": ScheduleConfig,
    "loop": LoopConfig,
    "eval": EvalConfig,
}

PRESETS: dict[str, dict[str, Any]] = {
    # desk-scale defaults: small enough to overfit a handful of images on a
    # single CPU core within minutes
    "toy": {
        "run_name": "toy",
        "dataset": {"num_images": 20, "image_size": 96},
        "augment": {"crop_size": 96, "scale_min": 0.1, "scale_max": 2.0},
        "backbone": {
            "img_size": 96, "patch_size": 8, "embed_dim": 64, "depth": 4,
            "num_heads": 4, "window_size": 4, "pyramid_channels": 32,
        },
        "cascade": {"mask_rois_per_image": 16},
        "optimizer": {"base_lr": 5e-4, "batch_size": 2, "weight_decay": 0.1},
        "schedule": {"total_steps": 2000, "warmup_fraction": 0.01,
                     "warmup_init_factor": 0.001},
        "loop": {"checkpoint_interval": 500, "ema_decay": 0.9999},
    },
    # the published large-scale recipe, queryable but far beyond desk scale
    "paper": {
        "run_name": "paper",
        "augment": {"crop_size": 1920, "scale_min": 0.1, "scale_max": 2.0},
        "backbone": {
            "img_size": 1920, "patch_size": 16, "embed_dim": 1024, "depth": 24,
            "num_heads": 16, "window_size": 16, "pyramid_channels": 256,
        },
        "cascade": {
            "pre_nms_topk": 1000, "post_nms_topk": 512, "rois_per_image": 512,
            "mask_rois_per_image": 128, "box_head_dim": 1024,
            "mask_head_channels": 256, "canonical_box_size": 224.0,
        },
        "optimizer": {"base_lr": 4e-5, "batch_size": 32, "weight_decay": 0.1},
        "schedule": {"total_steps": 103000, "warmup_fraction": 0.01,
                     "warmup_init_factor": 0.001},
        "loop": {"checkpoint_interval": 1000, "ema_decay": 0.9999},
    },
}


def _deep_update(base: dict, overlay: dict) -> dict:
    out = dict(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_update(out[key], value)
        else:
            out[key] = value
    return out


def _tupleize(value):
    if isinstance(value, list):
        return tuple(_tupleize(v) for v in value)
    return value


def _build_section(cls, values: dict, section: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(
            f"unknown option(s) in '{section}': {', '.join(sorted(unknown))}")
    try:
        return cls(**{k: _tupleize(v) for k, v in values.items()})
    except TypeError as exc:
        raise ConfigError(f"bad '{section}' configuration: {exc}") from exc


def config_from_dict(doc: dict[str, Any]) -> RunConfig:
    doc = dict(doc)
    doc.pop("snapshot_version", None)
    doc.pop("package_version", None)
    top_known = {"run_name", "seed", "eval_weights"} | set(_SECTIONS)
    unknown = set(doc) - top_known
    if unknown:
        raise ConfigError(f"unknown top-level option(s): {', '.join(sorted(unknown))}")
    kwargs: dict[str, Any] = {}
    for key in ("run_name", "seed", "eval_weights"):
        if key in doc:
            kwargs[key] = doc[key]
    for section, cls in _SECTIONS.items():
        if section in doc:
            if not isinstance(doc[section], dict):
                raise ConfigError(f"'{section}' must be an object")
            kwargs[section] = _build_section(cls, doc[section], section)
    return RunConfig(**kwargs)


def config_to_dict(cfg: RunConfig) -> dict[str, Any]:
    doc = dataclasses.asdict(cfg)
    doc["snapshot_version"] = SNAPSHOT_VERSION
    doc["package_version"] = __version__
    return doc


def resolve_config(
    preset: str | None = None,
    config_file: str | Path | None = None,
    overrides: dict[str, Any] | None = None,
    env_seed: str | None = None,
) -> RunConfig:
    """Merge defaults, preset, file, and overrides into a validated RunConfig."""
    doc = config_to_dict(RunConfig())
    doc.pop("snapshot_version")
    doc.pop("package_version")
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(
                f"unknown preset '{preset}' (have: {', '.join(sorted(PRESETS))})")
        doc = _deep_update(doc, PRESETS[preset])
    if config_file is not None:
        path = Path(config_file)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            file_doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(file_doc, dict):
            raise ConfigError("config file must contain a JSON object")
        doc = _deep_update(doc, file_doc)
    if overrides:
        doc = _deep_update(doc, overrides)
    if env_seed is not None:
        try:
            doc["seed"] = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"PLAINSEG_SEED must be an integer: {exc}") from exc
    seed = int(doc.get("seed", 0))
    doc = _deep_update(doc, {
        "dataset": {"seed": seed},
        "augment": {"seed": seed + 1},
        "backbone": {"seed": seed + 2},
    })
    return config_from_dict(doc)


def write_snapshot(cfg: RunConfig, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config_snapshot.json"
    path.write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True))
    return path
