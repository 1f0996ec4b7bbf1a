"""Deterministic file formats for every pipeline artifact.

Images and label maps are PNG (8-bit RGB, 8-bit tri-state, or 16-bit
grayscale for instance ids and quantized repel values), points and
detections are plain CSV, and structured records are JSON with sorted keys.
All writers are byte-deterministic for identical inputs, which is what makes
whole-pipeline reruns comparable file-by-file.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .encode import LABEL_BG, LABEL_FG, LABEL_IGNORED, PointSet, RepelMap, RepelParams, TriStateLabelMap
from .model import ModelParams
from .post import DetectionSet, InstanceMask

REPEL_SCALE = 65535


def read_image_png(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode != "RGB":
            raise ValueError(f"{path}: expected 8-bit RGB PNG, got mode {im.mode}")
        return np.asarray(im, dtype=np.uint8)


def write_image_png(path, image: np.ndarray):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError("image must be uint8 H x W x 3")
    Image.fromarray(image, mode="RGB").save(path, format="PNG")


def read_points_csv(path) -> PointSet:
    """Rows of "x,y" or "x,y,class"; a non-numeric first row is a header."""
    points = []
    classes = []
    with open(path, newline="") as fh:
        for row_idx, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            try:
                x, y = float(row[0]), float(row[1])
            except ValueError:
                if row_idx == 0:
                    continue
                raise ValueError(f"{path}: row {row_idx} is not numeric: {row!r}")
            points.append((x, y))
            classes.append(int(float(row[2])) if len(row) > 2 else -1)
    pts = np.array(points, dtype=np.float64).reshape(-1, 2)
    cls = np.array(classes, dtype=np.int64)
    if (cls >= 0).any():
        return PointSet(pts, classes=cls)
    return PointSet(pts)


def write_points_csv(path, points: PointSet):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if points.classes is not None:
            writer.writerow(["x", "y", "class"])
            for (x, y), c in zip(points.points, points.classes):
                writer.writerow([repr(float(x)), repr(float(y)), int(c)])
        else:
            writer.writerow(["x", "y"])
            for x, y in points.points:
                writer.writerow([repr(float(x)), repr(float(y))])


def write_detections_csv(path, detections: DetectionSet):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "score"])
        for (x, y), s in zip(detections.points, detections.scores):
            writer.writerow([repr(float(x)), repr(float(y)), repr(float(s))])


def read_detections_csv(path) -> DetectionSet:
    points = []
    scores = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if not row:
                continue
            points.append((float(row[0]), float(row[1])))
            scores.append(float(row[2]))
    return DetectionSet(np.array(points).reshape(-1, 2), np.array(scores))


def write_tristate_png(path, labels: TriStateLabelMap):
    Image.fromarray(labels.labels, mode="L").save(path, format="PNG")


def read_tristate_png(path) -> TriStateLabelMap:
    with Image.open(path) as im:
        if im.mode != "L":
            raise ValueError(f"{path}: expected 8-bit grayscale PNG, got mode {im.mode}")
        return TriStateLabelMap(np.asarray(im, dtype=np.uint8))


def _write_u16_png(path, values: np.ndarray):
    Image.fromarray(values.astype("<u2")).save(path, format="PNG")


def _read_u16_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise ValueError(f"{path}: expected 2-D grayscale PNG")
    return arr.astype(np.uint16)


def write_repel_png(path, repel: RepelMap):
    """Quantized to 16 bits with parameters in a JSON sidecar."""
    path = Path(path)
    _write_u16_png(path, np.round(repel.values * REPEL_SCALE))
    write_json(
        path.with_suffix(".json"),
        {"alpha": repel.params.alpha, "r": repel.params.r, "scale": REPEL_SCALE},
    )


def read_repel_png(path) -> RepelMap:
    path = Path(path)
    meta = read_json(path.with_suffix(".json"))
    values = _read_u16_png(path).astype(np.float64) / meta["scale"]
    return RepelMap(values, RepelParams(alpha=meta["alpha"], r=meta["r"]))


def write_instances_png(path, instances: InstanceMask):
    if instances.n_instances > 65535:
        raise ValueError("more than 65535 instances cannot be stored in 16-bit PNG")
    _write_u16_png(path, instances.labels)


def read_instances_png(path) -> InstanceMask:
    return InstanceMask(_read_u16_png(path).astype(np.int32))


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_weights(path, params: ModelParams):
    np.save(path, params.to_vector(), allow_pickle=False)


def read_weights(path) -> ModelParams:
    vec = np.load(path, allow_pickle=False)
    return ModelParams.from_vector(vec)


def write_loss_log_csv(path, log):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "epoch", "kind", "value"])
        for entry in log:
            writer.writerow([entry.iteration, entry.epoch, entry.kind, repr(entry.value)])


def write_probability_npy(path, values: np.ndarray):
    np.save(path, values.astype(np.float32), allow_pickle=False)


def render_overlay(image: np.ndarray, instances: InstanceMask, color=(255, 40, 40)) -> np.ndarray:
    """Instance boundaries painted over the source image."""
    labels = instances.labels
    if image.shape[:2] != labels.shape:
        raise ValueError("image and instance dims differ")
    fg = labels > 0
    pad = np.pad(labels, 1, mode="edge")
    boundary = fg & (
        (pad[:-2, 1:-1] != labels)
        | (pad[2:, 1:-1] != labels)
        | (pad[1:-1, :-2] != labels)
        | (pad[1:-1, 2:] != labels)
    )
    out = image.copy()
    out[boundary] = color
    return out


def render_detections(image: np.ndarray, detections: DetectionSet, color=(40, 220, 40)) -> np.ndarray:
    """Small crosses at detected centers, painted over the source image."""
    out = image.copy()
    h, w = out.shape[:2]
    for x, y in detections.points:
        r, c = int(round(y)), int(round(x))
        for dr, dc in ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1), (-2, 0), (2, 0), (0, -2), (0, 2)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w:
                out[rr, cc] = color
    return out
