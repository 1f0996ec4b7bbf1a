"""Command-line pipeline.

Subcommands: synth (generate a dataset), encode (write the three label
encodings per image), train (fit the classifier), predict (probability maps,
masks, instances, detections, overlays), eval (JSON metric report), and
pipeline (all of the above chained into one output directory).

Configuration is a single JSON document; every run writes the fully resolved
configuration to run.json in its output directory, and re-running any
subcommand from that file reproduces the artifacts byte for byte. Bad
configuration exits with code 2 and a field-level message on stderr; runtime
failures exit with code 1. Progress goes to stderr, data only to files.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import fileio
from .encode import (
    RepelParams,
    filtered_repel,
    local_cluster_encode,
    repel_encode,
    voronoi_encode,
)
from .metrics import DetReport, ccc, detection_metrics, seg_report
from .model import TrainConfig, forward, train
from .post import argmax_mask, detect_cells, extract_instances

DEFAULT_CONFIG = {
    "seed": 0,
    "threads": 1,
    "synth": {
        "dims": [128, 128],
        "num_images": 80,
        "cell_count": [6, 12],
        "radius_range": [3.5, 5.5],
        "eccentricity_range": [1.0, 1.6],
        "strong_color": [104, 62, 34],
        "weak_color": [198, 172, 140],
        "negative_color": [88, 102, 158],
        "background": [236, 232, 226],
        "weak_fraction": 0.35,
        "negative_fraction": 0.25,
        "contrast_jitter": 8.0,
        "cluster_tightness": 0.6,
        "noise_sigma": 2.0,
        "min_contrast": 60.0,
        "seed": None,
    },
    "encode": {
        "dot_radius": 2.0,
        # distance-feature scale for the local clustering; small values keep
        # the split color-driven in sparse regions with large Voronoi cells
        "cluster_weight": 0.25,
        "repel_alpha": 0.05,
        "repel_r": 70.0,
    },
    "train": {
        "learning_rate": 0.001,
        "momentum": 0.9,
        "batch_size": 8,
        "epochs": 30,
        "mode": "scheduler",
    },
    "post": {
        "min_distance": 5.0,
        "threshold": 0.5,
    },
    "eval": {
        "match_radius": 5.0,
    },
}


class ConfigError(Exception):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _merge_config(base: dict, override: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key in ("command",):
            continue
        if key not in base:
            raise ConfigError(path, "unknown configuration field")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(path, f"expected an object, got {type(value).__name__}")
            out[key] = _merge_config(base[key], value, prefix=path + ".")
        else:
            out[key] = value
    return out


def _apply_overrides(config: dict, assignments: list[str]) -> dict:
    for item in assignments:
        if "=" not in item:
            raise ConfigError(item, "override must look like section.key=value")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config
        keys = dotted.split(".")
        for key in keys[:-1]:
            if key not in node or not isinstance(node[key], dict):
                raise ConfigError(dotted, "unknown configuration field")
            node = node[key]
        if keys[-1] not in node:
            raise ConfigError(dotted, "unknown configuration field")
        node[keys[-1]] = value
    return config


def resolve_config(args) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        loaded = fileio.read_json(args.config)
        if not isinstance(loaded, dict):
            raise ConfigError("<root>", "config file must hold a JSON object")
        config = _merge_config(config, loaded)
    _apply_overrides(config, args.set or [])
    if args.seed is not None:
        config["seed"] = args.seed
    if args.threads is not None:
        config["threads"] = args.threads
    if config["synth"]["seed"] is None:
        config["synth"]["seed"] = config["seed"]
    if not isinstance(config["threads"], int) or config["threads"] < 1:
        raise ConfigError("threads", "must be a positive integer")
    return config


def _progress(message: str):
    print(message, file=sys.stderr)


def _parallel_map(fn, items, threads: int):
    if threads <= 1:
        for item in items:
            fn(item)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fn, items))


def _synth_spec(config: dict) -> data_mod.SynthSpec:
    return data_mod.SynthSpec.from_dict(config["synth"])


def _write_run_json(out_dir: Path, command: str, config: dict):
    payload = dict(config)
    payload["command"] = command
    fileio.write_json(out_dir / "run.json", payload)


def _sample_id(index: int) -> str:
    return f"{index:04d}"


def cmd_synth(config: dict, out_dir: Path) -> Path:
    spec = _synth_spec(config)
    samples = data_mod.generate_synthetic(spec)
    split = data_mod.split_dataset(samples, seed=config["seed"])
    split_of = {}
    for name, ids in split.items():
        for i in ids:
            split_of[i] = name

    data_dir = out_dir
    for sub in ("images", "points", "instances"):
        (data_dir / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    for i, sample in enumerate(samples):
        sid = _sample_id(i)
        fileio.write_image_png(data_dir / "images" / f"{sid}.png", sample.image)
        fileio.write_points_csv(data_dir / "points" / f"{sid}.csv", sample.gt_points)
        fileio.write_instances_png(data_dir / "instances" / f"{sid}.png", sample.gt_instances)
        entries.append(
            {
                "id": sid,
                "image": f"images/{sid}.png",
                "points": f"points/{sid}.csv",
                "instances": f"instances/{sid}.png",
                "regime": sample.regime,
                "split": split_of[i],
            }
        )
    manifest = {"samples": entries, "spec": spec.to_dict(), "seed": config["seed"]}
    fileio.write_json(data_dir / "manifest.json", manifest)
    _progress(f"synth: wrote {len(samples)} samples to {data_dir}")
    return data_dir / "manifest.json"


def _load_manifest(data_dir: Path) -> tuple[dict, list[data_mod.Sample]]:
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json under {data_dir}")
    manifest = fileio.read_json(manifest_path)
    samples = []
    for entry in manifest["samples"]:
        image = fileio.read_image_png(data_dir / entry["image"])
        points = fileio.read_points_csv(data_dir / entry["points"])
        instances = None
        if entry.get("instances"):
            instances = fileio.read_instances_png(data_dir / entry["instances"])
        samples.append(
            data_mod.Sample(
                image=image,
                gt_points=points,
                gt_instances=instances,
                provenance={"image": entry["image"], "points": entry["points"]},
                regime=entry.get("regime"),
            )
        )
    return manifest, samples


def _encode_sample(sample: data_mod.Sample, config: dict):
    enc = config["encode"]
    dims = sample.dims
    partition, voronoi = voronoi_encode(sample.gt_points, dims, dot_radius=enc["dot_radius"])
    cluster, fallbacks = local_cluster_encode(
        sample.image,
        sample.gt_points,
        partition,
        weight=enc["cluster_weight"],
        dot_radius=enc["dot_radius"],
    )
    params = RepelParams(alpha=enc["repel_alpha"], r=enc["repel_r"])
    repel = repel_encode(sample.gt_points, dims, params=params)
    filtered = filtered_repel(repel, cluster)
    return voronoi, cluster, repel, filtered, fallbacks


def cmd_encode(config: dict, data_dir: Path, out_dir: Path):
    manifest, samples = _load_manifest(data_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(item):
        entry, sample = item
        sid = entry["id"]
        voronoi, cluster, repel, filtered, _ = _encode_sample(sample, config)
        fileio.write_tristate_png(out_dir / f"{sid}_voronoi.png", voronoi)
        fileio.write_tristate_png(out_dir / f"{sid}_cluster.png", cluster)
        fileio.write_repel_png(out_dir / f"{sid}_repel.png", repel)
        fileio.write_repel_png(out_dir / f"{sid}_repel_filtered.png", filtered)

    _parallel_map(work, list(zip(manifest["samples"], samples)), config["threads"])
    _progress(f"encode: wrote encodings for {len(samples)} samples to {out_dir}")


def _split_samples(manifest: dict, samples: list, split: str) -> list[tuple[dict, data_mod.Sample]]:
    chosen = [
        (entry, sample)
        for entry, sample in zip(manifest["samples"], samples)
        if entry.get("split", "train") == split
    ]
    if not chosen:
        raise ValueError(f"no samples in split {split!r}")
    return chosen


def cmd_train(config: dict, data_dir: Path, out_dir: Path):
    manifest, samples = _load_manifest(data_dir)
    train_items = _split_samples(manifest, samples, "train")
    out_dir.mkdir(parents=True, exist_ok=True)

    _progress(f"train: encoding targets for {len(train_items)} images")
    targets = [_encode_sample(sample, config) for _, sample in train_items]
    normalized, stats = data_mod.normalize([sample for _, sample in train_items])
    dataset = [
        (image, voronoi, cluster, filtered)
        for image, (voronoi, cluster, repel, filtered, _) in zip(normalized, targets)
    ]

    tcfg = TrainConfig(
        learning_rate=config["train"]["learning_rate"],
        momentum=config["train"]["momentum"],
        batch_size=config["train"]["batch_size"],
        epochs=config["train"]["epochs"],
        seed=config["seed"],
    )
    _progress(f"train: {tcfg.epochs} epochs over {len(dataset)} images, mode={config['train']['mode']}")
    params, log = train(tcfg, dataset, mode=config["train"]["mode"])

    fileio.write_weights(out_dir / "weights.npy", params)
    fileio.write_loss_log_csv(out_dir / "loss_log.csv", log)
    fileio.write_json(out_dir / "stats.json", stats)
    _progress(f"train: wrote weights and loss log to {out_dir}")


def cmd_predict(config: dict, data_dir: Path, model_dir: Path, out_dir: Path, split: str = "test"):
    manifest, samples = _load_manifest(data_dir)
    items = _split_samples(manifest, samples, split)
    params = fileio.read_weights(model_dir / "weights.npy")
    stats = fileio.read_json(model_dir / "stats.json")
    out_dir.mkdir(parents=True, exist_ok=True)
    post_cfg = config["post"]

    def work(item):
        entry, sample = item
        sid = entry["id"]
        normalized, _ = data_mod.normalize([sample], stats=stats)
        prob = forward(params, normalized[0])
        mask = argmax_mask(prob)
        instances = extract_instances(mask)
        detections = detect_cells(
            prob, min_distance=post_cfg["min_distance"], threshold=post_cfg["threshold"]
        )
        fileio.write_probability_npy(out_dir / f"{sid}_prob.npy", prob.nuclei)
        fileio.write_image_png(
            out_dir / f"{sid}_mask.png",
            np.repeat((mask * 255).astype(np.uint8)[:, :, None], 3, axis=2),
        )
        fileio.write_instances_png(out_dir / f"{sid}_instances.png", instances)
        fileio.write_detections_csv(out_dir / f"{sid}_detections.csv", detections)
        fileio.write_image_png(
            out_dir / f"{sid}_overlay.png",
            fileio.render_detections(fileio.render_overlay(sample.image, instances), detections),
        )

    _parallel_map(work, items, config["threads"])
    _progress(f"predict: wrote predictions for {len(items)} {split} samples to {out_dir}")


def cmd_eval(config: dict, data_dir: Path, pred_dir: Path, out_dir: Path, split: str = "test"):
    manifest, samples = _load_manifest(data_dir)
    items = _split_samples(manifest, samples, split)
    out_dir.mkdir(parents=True, exist_ok=True)

    per_image = []
    seg_acc = []
    tp = fp = fn = 0
    gt_counts = []
    pred_counts = []
    for entry, sample in items:
        sid = entry["id"]
        pred_instances = fileio.read_instances_png(pred_dir / f"{sid}_instances.png")
        detections = fileio.read_detections_csv(pred_dir / f"{sid}_detections.csv")
        if sample.gt_instances is None:
            raise ValueError(f"sample {sid} has no ground-truth instances to evaluate against")
        report = seg_report(pred_instances, sample.gt_instances)
        det = detection_metrics(detections, sample.gt_points, radius=config["eval"]["match_radius"])
        seg_acc.append(report)
        tp, fp, fn = tp + det.tp, fp + det.fp, fn + det.fn
        gt_counts.append(len(sample.gt_points))
        pred_counts.append(len(detections))
        per_image.append({"id": sid, **report.to_dict(), **det.to_dict()})

    detection = DetReport(
        tp=tp,
        fp=fp,
        fn=fn,
        precision=tp / (tp + fp) if tp + fp else 0.0,
        recall=tp / (tp + fn) if tp + fn else 0.0,
        ccc=ccc(pred_counts, gt_counts) if len(gt_counts) >= 2 else float("nan"),
    )
    report = {
        "ACC": float(np.mean([r.acc for r in seg_acc])),
        "F1": float(np.mean([r.f1 for r in seg_acc])),
        "Dice": float(np.mean([r.object_dice for r in seg_acc])),
        "AJI": float(np.mean([r.aji for r in seg_acc])),
        **detection.to_dict(),
        "split": split,
        "num_images": len(items),
        "per_image": per_image,
    }
    fileio.write_json(out_dir / "report.json", report)
    _progress(f"eval: wrote report for {len(items)} {split} samples to {out_dir / 'report.json'}")
    return report


def cmd_pipeline(config: dict, out_dir: Path):
    cmd_synth(config, out_dir / "data")
    cmd_encode(config, out_dir / "data", out_dir / "encodings")
    cmd_train(config, out_dir / "data", out_dir / "model")
    cmd_predict(config, out_dir / "data", out_dir / "model", out_dir / "predictions")
    cmd_eval(config, out_dir / "data", out_dir / "predictions", out_dir / "eval")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (defaults are used for absent fields)")
    common.add_argument("--seed", type=int, help="global RNG seed override")
    common.add_argument("--threads", type=int, help="worker threads for per-image stages")
    common.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="config override, e.g. --set train.epochs=5 (repeatable)",
    )

    parser = argparse.ArgumentParser(
        prog="pointseg",
        description="Point-supervised cell segmentation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="dataset output directory")

    p = sub.add_parser("encode", parents=[common], help="write label encodings per image")
    p.add_argument("--data", required=True, help="dataset directory with manifest.json")
    p.add_argument("--out", required=True, help="encoding output directory")

    p = sub.add_parser("train", parents=[common], help="train the pixel classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="model output directory")

    p = sub.add_parser("predict", parents=[common], help="run inference and post-processing")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="directory with weights.npy and stats.json")
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=data_mod.SPLIT_NAMES)

    p = sub.add_parser("eval", parents=[common], help="evaluate predictions against ground truth")
    p.add_argument("--data", required=True)
    p.add_argument("--pred", required=True, help="directory written by predict")
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=data_mod.SPLIT_NAMES)

    p = sub.add_parser("pipeline", parents=[common], help="synth + encode + train + predict + eval")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args)
        # constructing SynthSpec surfaces invalid field values early
        _synth_spec(config)
        TrainConfig(
            learning_rate=config["train"]["learning_rate"],
            momentum=config["train"]["momentum"],
            batch_size=config["train"]["batch_size"],
            epochs=config["train"]["epochs"],
            seed=config["seed"],
        )
        if config["train"]["mode"] not in ("scheduler", "naive_sum"):
            raise ConfigError("train.mode", "must be 'scheduler' or 'naive_sum'")
    except ConfigError as exc:
        print(json.dumps({"error": str(exc), "field": exc.field}), file=sys.stderr)
        return 2
    except (ValueError, TypeError) as exc:
        print(json.dumps({"error": str(exc), "field": None}), file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(json.dumps({"error": str(exc), "field": "config"}), file=sys.stderr)
        return 2

    try:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_run_json(out_dir, args.command, config)
        if args.command == "synth":
            cmd_synth(config, out_dir)
        elif args.command == "encode":
            cmd_encode(config, Path(args.data), out_dir)
        elif args.command == "train":
            cmd_train(config, Path(args.data), out_dir)
        elif args.command == "predict":
            cmd_predict(config, Path(args.data), Path(args.model), out_dir, split=args.split)
        elif args.command == "eval":
            cmd_eval(config, Path(args.data), Path(args.pred), out_dir, split=args.split)
        elif args.command == "pipeline":
            cmd_pipeline(config, out_dir)
        else:
            raise ValueError(f"unknown command {args.command!r}")
    except Exception as exc:  # noqa: BLE001 - single CLI failure boundary
        print(json.dumps({"error": f"{type(exc).__name__}: {exc}"}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
