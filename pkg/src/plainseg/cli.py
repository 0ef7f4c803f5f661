"""Command-line surface wiring the pipeline end to end.

Commands: generate-data, train, eval, infer, augment-preview, stats. Every
command writes a config snapshot before doing work, so a run is reproducible
from its output directory alone. Exit codes: 0 success, 2 configuration
error, 3 data error, 4 numeric failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import __version__
from .augment import augment_preview, render_overlay
from .config import RunConfig, config_from_dict, resolve_config, write_snapshot
from .data.coco import detections_to_json, load_manifest
from .data.toygen import dataset_stats, generate_toy_dataset, load_images
from .errors import ConfigError, DataError, NumericError, PlainsegError
from .evaluation import evaluate, report_render, write_report
from .model.detector import build_detector, detections_from_output, run_inference
from .train.ema import load_weights
from .train.loop import load_checkpoint, train_loop, weights_for_eval

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--preset", choices=["toy", "paper"], default=None,
                        help="named defaults bundle")
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON config file overlaying the preset")
    parser.add_argument("--seed", type=int, default=None,
                        help="run seed (PLAINSEG_SEED env var wins)")


def _resolve(args: argparse.Namespace, extra: dict | None = None) -> RunConfig:
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if extra:
        for key, value in extra.items():
            if value is None:
                continue
            section, _, name = key.partition(".")
            if name:
                overrides.setdefault(section, {})[name] = value
            else:
                overrides[key] = value
    return resolve_config(
        preset=args.preset,
        config_file=args.config,
        overrides=overrides,
        env_seed=os.environ.get("PLAINSEG_SEED"),
    )


def _load_dataset(data_dir: Path):
    manifest = load_manifest(data_dir / "annotations.json")
    images = load_images(manifest, data_dir)
    return manifest, images


def _model_config_for_checkpoint(state, fallback: RunConfig) -> RunConfig:
    if state.config:
        return config_from_dict(state.config)
    return fallback


def cmd_generate_data(args: argparse.Namespace) -> int:
    cfg = _resolve(args, {
        "dataset.num_images": args.num_images,
        "dataset.image_size": args.image_size,
        "dataset.rare_fraction_target": args.rare_fraction,
    })
    out = Path(args.out)
    write_snapshot(cfg, out)
    manifest, _ = generate_toy_dataset(cfg.dataset, out_dir=out)
    stats = dataset_stats(manifest)
    print(f"wrote {len(manifest.images)} images, "
          f"{stats.total_instances} instances to {out}")
    if stats.rare_fraction is not None:
        print(f"rare-instance fraction: {stats.rare_fraction:.4f}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve(args, {
        "schedule.total_steps": args.steps,
        "optimizer.batch_size": args.batch_size,
        "optimizer.base_lr": args.lr,
    })
    out = Path(args.out)
    snapshot_path = write_snapshot(cfg, out)
    if args.dry_run:
        print(f"config snapshot written to {snapshot_path}")
        return 0
    manifest, images = _load_dataset(Path(args.data))
    if cfg.cascade.num_classes != len(manifest.categories):
        raise ConfigError(
            f"cascade.num_classes ({cfg.cascade.num_classes}) does not match "
            f"the dataset's {len(manifest.categories)} categories")
    resume_state = load_checkpoint(args.resume) if args.resume else None
    model = build_detector(cfg.backbone, cfg.anchors, cfg.cascade,
                           seed=cfg.backbone.seed)
    snapshot = json.loads(snapshot_path.read_text())
    state, records = train_loop(
        model, manifest, images, cfg.augment, cfg.optimizer, cfg.schedule,
        cfg.loop, seed=cfg.seed, out_dir=out, resume=resume_state,
        config_snapshot=snapshot,
    )
    if records:
        last = records[-1]
        print(f"finished at step {state.step}: "
              f"loss_total={last['loss_total']:.4f} lr={last['lr']:.2e}")
    else:
        print(f"nothing to do: checkpoint already at step {state.step}")
    return 0


def _restore_model(ckpt_path: Path, which_weights: str, fallback: RunConfig):
    state = load_checkpoint(ckpt_path)
    cfg = _model_config_for_checkpoint(state, fallback)
    model = build_detector(cfg.backbone, cfg.anchors, cfg.cascade,
                           seed=cfg.backbone.seed)
    load_weights(model, weights_for_eval(state, which_weights))
    model.eval()
    return model, cfg


def cmd_eval(args: argparse.Namespace) -> int:
    fallback = _resolve(args)
    model, cfg = _restore_model(Path(args.ckpt), args.weights, fallback)
    manifest, images = _load_dataset(Path(args.data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    detections = run_inference(model, manifest, images)
    det_path = out / f"detections_{args.weights}.json"
    det_path.write_text(detections_to_json(detections))
    report = evaluate(detections, manifest, cfg.eval)
    write_report(report, out / f"report_{args.weights}.json", manifest.categories)
    print(report_render(report, manifest.categories))
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    fallback = _resolve(args)
    model, cfg = _restore_model(Path(args.ckpt), args.weights, fallback)
    image_path = Path(args.image)
    if not image_path.exists():
        raise DataError(f"image not found: {image_path}")
    try:
        arr = np.asarray(Image.open(image_path).convert("RGB"))
    except OSError as exc:
        raise DataError(f"cannot read image {image_path}: {exc}") from exc

    side = cfg.backbone.img_size
    h, w = arr.shape[:2]
    canvas = np.zeros((side, side, 3), dtype=np.uint8)
    scale = min(side / h, side / w, 1.0)
    new_h, new_w = max(1, round(h * scale)), max(1, round(w * scale))
    resized = np.asarray(
        Image.fromarray(arr).resize((new_w, new_h), Image.BILINEAR))
    canvas[:new_h, :new_w] = resized

    tensor = torch.from_numpy(np.ascontiguousarray(canvas.transpose(2, 0, 1))[None])
    output = model.forward_inference(tensor)[0]
    category_ids = list(range(1, cfg.cascade.num_classes + 1))
    detections = detections_from_output(output, image_id=0,
                                        image_hw=(side, side),
                                        category_ids=category_ids)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "detections.json").write_text(detections_to_json(detections))
    overlay = render_overlay(canvas, detections)
    Image.fromarray(overlay).save(out / "overlay.png")
    print(f"{len(detections)} detections written to {out}")
    return 0


def cmd_augment_preview(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    manifest, images = _load_dataset(Path(args.data))
    records = augment_preview(manifest, images, cfg.augment, args.n, args.out)
    print(f"wrote {len(records)} previews to {args.out}")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    manifest = load_manifest(Path(args.data) / "annotations.json")
    stats = dataset_stats(manifest)
    if args.json:
        print(json.dumps({
            "per_category": {str(k): v for k, v in stats.per_category.items()},
            "total_instances": stats.total_instances,
            "rare_instances": stats.rare_instances,
            "rare_fraction": stats.rare_fraction,
        }, indent=2))
        return 0
    names = {c.id: c.name for c in manifest.categories}
    rare = {c.id for c in manifest.categories if c.is_rare}
    for cat_id in sorted(stats.per_category):
        label = names[cat_id] + (" (rare)" if cat_id in rare else "")
        print(f"{label:<16}{stats.per_category[cat_id]:>6}")
    print(f"{'total':<16}{stats.total_instances:>6}")
    if stats.rare_fraction is not None:
        print(f"rare fraction: {stats.rare_fraction:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plainseg",
        description="Desk-scale instance segmentation pipeline.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="render a synthetic dataset")
    _common_flags(p)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--num-images", type=int, default=None)
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--rare-fraction", type=float, default=None)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train the detector")
    _common_flags(p)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--resume", type=Path, default=None)
    p.add_argument("--dry-run", action="store_true",
                   help="write the config snapshot and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _common_flags(p)
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--weights", choices=["ema", "raw"], default="ema")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="detect instances in a single image")
    _common_flags(p)
    p.add_argument("--ckpt", required=True, type=Path)
    p.add_argument("--image", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--weights", choices=["ema", "raw"], default="ema")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("augment-preview", help="render jittered overlays")
    _common_flags(p)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("-n", type=int, default=4)
    p.set_defaults(func=cmd_augment_preview)

    p = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PlainsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
