"""CLI surface: commands, snapshots, presets, exit codes, artifacts."""

import json

import numpy as np
import pytest

from plainseg.cli import main
from plainseg.config import PRESETS, resolve_config
from plainseg.data.coco import load_manifest, parse_coco_json, parse_results_json

TINY = {
    "dataset": {"num_images": 3, "image_size": 32, "size_range": [8, 14]},
    "augment": {"crop_size": 32, "scale_min": 0.8, "scale_max": 1.2},
    "backbone": {"img_size": 32, "patch_size": 8, "embed_dim": 16, "depth": 2,
                 "num_heads": 2, "window_size": 2, "global_block_indices": [1],
                 "pyramid_channels": 8},
    "cascade": {"pre_nms_topk": 32, "post_nms_topk": 8, "rois_per_image": 8,
                "mask_rois_per_image": 2, "box_head_dim": 16,
                "mask_head_channels": 8, "canonical_box_size": 12.0},
    "optimizer": {"base_lr": 1e-3, "batch_size": 2},
    "schedule": {"total_steps": 3, "warmup_fraction": 0.0},
    "loop": {"checkpoint_interval": 3},
}


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


@pytest.fixture()
def tiny_dataset(tmp_path, tiny_config):
    out = tmp_path / "data"
    assert main(["generate-data", "--config", str(tiny_config),
                 "--out", str(out), "--seed", "4"]) == 0
    return out


def test_generate_data_roundtrips(tiny_dataset):
    manifest = load_manifest(tiny_dataset / "annotations.json")
    assert len(manifest.images) == 3
    text = (tiny_dataset / "annotations.json").read_text()
    assert parse_coco_json(text).annotations == manifest.annotations
    snapshot = json.loads((tiny_dataset / "config_snapshot.json").read_text())
    assert snapshot["seed"] == 4
    assert snapshot["dataset"]["seed"] == 4


def test_generate_data_identical_bytes(tmp_path, tiny_config):
    out1, out2 = tmp_path / "d1", tmp_path / "d2"
    for out in (out1, out2):
        assert main(["generate-data", "--config", str(tiny_config),
                     "--out", str(out), "--seed", "9"]) == 0
    assert (out1 / "annotations.json").read_bytes() == \
        (out2 / "annotations.json").read_bytes()
    for png in sorted((out1 / "images").glob("*.png")):
        assert png.read_bytes() == (out2 / "images" / png.name).read_bytes()


def test_rare_fraction_flag_recorded(tmp_path, tiny_config):
    out = tmp_path / "frac"
    assert main(["generate-data", "--config", str(tiny_config),
                 "--out", str(out), "--rare-fraction", "0.18"]) == 0
    snapshot = json.loads((out / "config_snapshot.json").read_text())
    assert snapshot["dataset"]["rare_fraction_target"] == 0.18


def test_paper_preset_snapshot_values(tmp_path):
    out = tmp_path / "paper"
    assert main(["train", "--preset", "paper", "--data", str(tmp_path),
                 "--out", str(out), "--dry-run"]) == 0
    snap = json.loads((out / "config_snapshot.json").read_text())
    assert snap["optimizer"]["base_lr"] == 4e-5
    assert snap["optimizer"]["batch_size"] == 32
    assert snap["schedule"]["warmup_fraction"] == 0.01
    assert snap["schedule"]["warmup_init_factor"] == 0.001
    assert snap["schedule"]["total_steps"] == 103000
    assert snap["loop"]["ema_decay"] == 0.9999
    assert snap["augment"]["crop_size"] == 1920
    assert snap["augment"]["scale_min"] == 0.1
    assert snap["augment"]["scale_max"] == 2.0


def test_toy_preset_declared_defaults():
    cfg = resolve_config(preset="toy")
    assert cfg.optimizer.batch_size == 2
    assert cfg.schedule.total_steps == 2000
    assert cfg.loop.ema_decay == 0.9999
    assert cfg.backbone.img_size == cfg.augment.crop_size == 96
    assert PRESETS["toy"]["backbone"]["embed_dim"] == 64


def test_train_eval_infer_end_to_end(tmp_path, tiny_config, tiny_dataset):
    run_dir = tmp_path / "run"
    assert main(["train", "--config", str(tiny_config), "--data",
                 str(tiny_dataset), "--out", str(run_dir), "--seed", "4"]) == 0
    assert (run_dir / "metrics.jsonl").exists()
    ckpt = run_dir / "ckpt_000003.pt"
    assert ckpt.exists()

    eval_dir = tmp_path / "eval"
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(tiny_dataset),
                 "--out", str(eval_dir), "--weights", "ema"]) == 0
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(tiny_dataset),
                 "--out", str(eval_dir), "--weights", "raw"]) == 0
    ema_report = json.loads((eval_dir / "report_ema.json").read_text())
    raw_report = json.loads((eval_dir / "report_raw.json").read_text())
    for doc in (ema_report, raw_report):
        assert set(doc) == {"mAP", "ap50", "ap75", "rare_map", "per_category",
                            "counts"}
    dets = parse_results_json((eval_dir / "detections_ema.json").read_text())
    manifest = load_manifest(tiny_dataset / "annotations.json")
    image_ids = {im.id for im in manifest.images}
    for det in dets:
        assert det.image_id in image_ids

    blank = tmp_path / "blank.png"
    from PIL import Image
    Image.fromarray(np.zeros((40, 40, 3), dtype=np.uint8)).save(blank)
    infer_dir = tmp_path / "infer"
    assert main(["infer", "--ckpt", str(ckpt), "--image", str(blank),
                 "--out", str(infer_dir)]) == 0
    out_dets = parse_results_json((infer_dir / "detections.json").read_text())
    assert len(out_dets) <= 100
    assert (infer_dir / "overlay.png").exists()


def test_resume_continues(tmp_path, tiny_config, tiny_dataset):
    run_dir = tmp_path / "resume"
    assert main(["train", "--config", str(tiny_config), "--data",
                 str(tiny_dataset), "--out", str(run_dir), "--seed", "4"]) == 0
    ckpt = run_dir / "ckpt_000003.pt"
    override = json.loads(tiny_config.read_text())
    override["schedule"]["total_steps"] = 5
    cfg2 = tmp_path / "tiny5.json"
    cfg2.write_text(json.dumps(override))
    assert main(["train", "--config", str(cfg2), "--data", str(tiny_dataset),
                 "--out", str(run_dir), "--seed", "4",
                 "--resume", str(ckpt)]) == 0
    lines = (run_dir / "metrics.jsonl").read_text().splitlines()
    steps = [json.loads(l)["step"] for l in lines]
    assert steps == [0, 1, 2, 3, 4]


def test_augment_preview_and_stats(tmp_path, tiny_config, tiny_dataset, capsys):
    prev = tmp_path / "prev"
    assert main(["augment-preview", "--config", str(tiny_config), "--data",
                 str(tiny_dataset), "--out", str(prev), "-n", "2"]) == 0
    records = json.loads((prev / "preview.json").read_text())
    assert len(records) == 2
    for rec in records:
        assert 0.8 <= rec["scale"] <= 1.2

    capsys.readouterr()  # drop the preview command's output
    assert main(["stats", "--data", str(tiny_dataset), "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["total_instances"] >= 1
    assert set(doc["per_category"]) == {"1", "2", "3", "4", "5"}


def test_exit_codes(tmp_path, tiny_config):
    # config error: unknown preset field in file
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"nonsense": 1}))
    assert main(["generate-data", "--config", str(bad),
                 "--out", str(tmp_path / "x")]) == 2
    # config error: invalid values
    bad2 = tmp_path / "bad2.json"
    bad2.write_text(json.dumps({"dataset": {"rare_fraction_target": 2.0}}))
    assert main(["generate-data", "--config", str(bad2),
                 "--out", str(tmp_path / "y")]) == 2
    # data error: missing dataset
    assert main(["stats", "--data", str(tmp_path / "nowhere")]) == 3
    # data error: missing checkpoint
    assert main(["eval", "--ckpt", str(tmp_path / "no.pt"), "--data",
                 str(tmp_path), "--out", str(tmp_path / "z")]) == 3


def test_env_seed_override(tmp_path, tiny_config, monkeypatch):
    monkeypatch.setenv("PLAINSEG_SEED", "777")
    out = tmp_path / "env"
    assert main(["generate-data", "--config", str(tiny_config),
                 "--out", str(out), "--seed", "4"]) == 0
    snapshot = json.loads((out / "config_snapshot.json").read_text())
    assert snapshot["seed"] == 777
    monkeypatch.setenv("PLAINSEG_SEED", "not-an-int")
    assert main(["generate-data", "--config", str(tiny_config),
                 "--out", str(tmp_path / "env2")]) == 2
