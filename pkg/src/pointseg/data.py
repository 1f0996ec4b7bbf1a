"""Synthetic data generation, dataset ingestion, and training-time
image-space preparation.

The generator paints ellipse-shaped cells over an off-white background in
three stain classes (strong positive brown, weak positive pale brown,
negative blue), with optional cluster-adjacent placement mimicking densely
packed tissue and per-pixel Gaussian noise. Each sample carries full ground
truth (instance labels plus one center point per instance), which real
point-annotated datasets lack; loaders for those return points only.

Every sample is produced from its own RNG stream derived from (seed, index)
so generation is order-independent and re-runnable per sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fileio
from .encode import PointSet, round_pixel
from .post import InstanceMask

# stain classes of the generated cells
CLASS_STRONG = 0
CLASS_WEAK = 1
CLASS_NEGATIVE = 2

REGIMES = ("sparse_strong", "sparse_weak", "clustered_strong", "clustered_weak")

SPLIT_NAMES = ("train", "val", "test")
SPLIT_FRACTIONS = (0.8, 0.1, 0.1)


@dataclass
class SynthSpec:
    dims: tuple = (128, 128)
    num_images: int = 80
    cell_count: tuple = (6, 12)
    radius_range: tuple = (3.5, 5.5)
    eccentricity_range: tuple = (1.0, 1.6)
    strong_color: tuple = (104, 62, 34)
    weak_color: tuple = (198, 172, 140)
    negative_color: tuple = (88, 102, 158)
    background: tuple = (236, 232, 226)
    weak_fraction: float = 0.35
    negative_fraction: float = 0.25
    contrast_jitter: float = 8.0
    cluster_tightness: float = 0.6
    noise_sigma: float = 2.0
    min_contrast: float = 60.0
    seed: int = 0

    def __post_init__(self):
        if self.radius_range[0] < 2:
            raise ValueError("cell radii must be >= 2 px")
        if self.eccentricity_range[0] < 1:
            raise ValueError("eccentricity must be >= 1")
        if not 1 <= self.cell_count[0] <= self.cell_count[1]:
            raise ValueError("bad cell count range")
        bg = np.asarray(self.background, dtype=np.float64)
        # the weak class is deliberately allowed near the background tone
        for name in ("strong_color", "negative_color"):
            dist = float(np.linalg.norm(np.asarray(getattr(self, name)) - bg))
            if dist < self.min_contrast:
                raise ValueError(f"{name} is within {dist:.1f} of background, needs >= {self.min_contrast}")

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "num_images": self.num_images,
            "cell_count": list(self.cell_count),
            "radius_range": list(self.radius_range),
            "eccentricity_range": list(self.eccentricity_range),
            "strong_color": list(self.strong_color),
            "weak_color": list(self.weak_color),
            "negative_color": list(self.negative_color),
            "background": list(self.background),
            "weak_fraction": self.weak_fraction,
            "negative_fraction": self.negative_fraction,
            "contrast_jitter": self.contrast_jitter,
            "cluster_tightness": self.cluster_tightness,
            "noise_sigma": self.noise_sigma,
            "min_contrast": self.min_contrast,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SynthSpec":
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        return cls(**kwargs)


@dataclass
class Sample:
    """One image with its annotations.

    Generated samples carry both instance labels and center points; loaded
    point-annotated data carries points only. When instances are present,
    instance id k+1 corresponds to point k.
    """

    image: np.ndarray
    gt_points: PointSet
    gt_instances: InstanceMask | None = None
    provenance: dict = field(default_factory=dict)
    regime: str | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.image = np.asarray(self.image)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError("image must be H x W x 3")
        if self.gt_instances is not None:
            if self.gt_instances.labels.shape != self.image.shape[:2]:
                raise ValueError("instance dims differ from image dims")
            if self.gt_instances.n_instances != len(self.gt_points):
                raise ValueError("instance count differs from point count")

    @property
    def dims(self) -> tuple[int, int]:
        return self.image.shape[:2]


def _ellipse_pixels(cx, cy, a, b, theta, dims):
    """Integer pixel coordinates strictly inside the ellipse, or None when
    the ellipse does not fit inside the image."""
    h, w = dims
    r0, r1 = math.floor(cy - a), math.ceil(cy + a)
    c0, c1 = math.floor(cx - a), math.ceil(cx + a)
    if r0 < 0 or c0 < 0 or r1 > h - 1 or c1 > w - 1:
        return None
    rr, cc = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
    dx, dy = cc - cx, rr - cy
    ct, st = math.cos(theta), math.sin(theta)
    u = (dx * ct + dy * st) / a
    v = (-dx * st + dy * ct) / b
    inside = u * u + v * v <= 1.0
    return rr[inside], cc[inside]


def _assign_class(rng, regime: str, spec: SynthSpec) -> int:
    if rng.random() < spec.negative_fraction:
        return CLASS_NEGATIVE
    if regime.endswith("weak") and rng.random() < spec.weak_fraction:
        return CLASS_WEAK
    return CLASS_STRONG


def _generate_one(spec: SynthSpec, index: int, regime: str) -> Sample:
    rng = np.random.default_rng([spec.seed, index])
    h, w = spec.dims
    count = int(rng.integers(spec.cell_count[0], spec.cell_count[1] + 1))
    tightness = spec.cluster_tightness if regime.startswith("clustered") else 0.0

    labels = np.zeros((h, w), dtype=np.int32)
    centers: list[tuple[float, float]] = []
    radii: list[float] = []
    classes: list[int] = []
    attempts = 0
    for k in range(count):
        placed = False
        for _ in range(150):
            attempts += 1
            a = float(rng.uniform(*spec.radius_range))
            ecc = float(rng.uniform(*spec.eccentricity_range))
            b = a / ecc
            theta = float(rng.uniform(0, math.pi))
            if centers and rng.random() < tightness:
                anchor = int(rng.integers(len(centers)))
                ax, ay = centers[anchor]
                d = (a + radii[anchor]) * float(rng.uniform(1.0, 1.25))
                phi = float(rng.uniform(0, 2 * math.pi))
                cx, cy = ax + d * math.cos(phi), ay + d * math.sin(phi)
            else:
                if w - 1 - a <= a or h - 1 - a <= a:
                    continue
                cx = float(rng.uniform(a, w - 1 - a))
                cy = float(rng.uniform(a, h - 1 - a))
            pix = _ellipse_pixels(cx, cy, a, b, theta, spec.dims)
            if pix is None or len(pix[0]) == 0:
                continue
            rr, cc = pix
            if labels[rr, cc].any():
                continue
            labels[rr, cc] = k + 1
            centers.append((cx, cy))
            radii.append(a)
            classes.append(_assign_class(rng, regime, spec))
            placed = True
            break
        if not placed:
            raise RuntimeError(
                f"placed only {len(centers)} of {count} cells after {attempts} attempts "
                f"(dims={spec.dims}, radius_range={spec.radius_range}, tightness={tightness})"
            )

    if regime.endswith("weak") and CLASS_WEAK not in classes:
        positives = [i for i, c in enumerate(classes) if c != CLASS_NEGATIVE]
        classes[positives[0] if positives else 0] = CLASS_WEAK

    # points are instance centroids, so point k sits inside instance k+1
    points = np.empty((count, 2), dtype=np.float64)
    for k in range(count):
        rr, cc = np.nonzero(labels == k + 1)
        points[k] = (cc.mean(), rr.mean())

    palette = {
        CLASS_STRONG: spec.strong_color,
        CLASS_WEAK: spec.weak_color,
        CLASS_NEGATIVE: spec.negative_color,
    }
    image = np.empty((h, w, 3), dtype=np.float64)
    image[:] = spec.background
    j = spec.contrast_jitter
    for k in range(count):
        color = np.asarray(palette[classes[k]], dtype=np.float64) + rng.uniform(-j, j, size=3)
        image[labels == k + 1] = color
    image += rng.normal(0.0, spec.noise_sigma, size=image.shape)
    image = np.clip(np.round(image), 0, 255).astype(np.uint8)

    point_set = PointSet(points, classes=np.asarray(classes, dtype=np.int64))
    point_set.validate_bounds(spec.dims)
    return Sample(
        image=image,
        gt_points=point_set,
        gt_instances=InstanceMask(labels),
        provenance={"generator": spec.to_dict(), "index": index},
        regime=regime,
    )


def generate_synthetic(spec: SynthSpec) -> list[Sample]:
    """Deterministic synthetic dataset cycling through the four regimes."""
    return [_generate_one(spec, i, REGIMES[i % len(REGIMES)]) for i in range(spec.num_images)]


def load_dataset(image_paths, point_paths) -> list[Sample]:
    """Pair 8-bit RGB PNGs with "x,y[,class]" CSV point files."""
    image_paths = list(image_paths)
    point_paths = list(point_paths)
    if len(image_paths) != len(point_paths):
        raise ValueError(f"{len(image_paths)} images but {len(point_paths)} point files")
    samples = []
    for img_path, pts_path in zip(image_paths, point_paths):
        image = fileio.read_image_png(img_path)
        points = fileio.read_points_csv(pts_path)
        try:
            points.validate_bounds(image.shape[:2])
        except ValueError as exc:
            raise ValueError(f"{pts_path}: {exc}") from None
        samples.append(
            Sample(
                image=image,
                gt_points=points,
                provenance={"image": str(img_path), "points": str(pts_path)},
            )
        )
    return samples


def _retain_instances(labels: np.ndarray, keep_ids: list[int]) -> np.ndarray:
    """Keep only the given original ids, renumbered 1..K in list order."""
    out = np.zeros_like(labels)
    for new_id, old_id in enumerate(keep_ids, start=1):
        out[labels == old_id] = new_id
    return out


def extract_patches(sample: Sample, size: int, stride: int) -> list[Sample]:
    """Full tiles only; a point belongs to the patch holding its rounded
    pixel, and an instance is kept exactly where its point is kept."""
    h, w = sample.dims
    if size > min(h, w):
        raise ValueError(f"patch size {size} exceeds image dims {h}x{w}")
    if stride < 1:
        raise ValueError("stride must be >= 1")

    pix = sample.gt_points.pixel_coords((h, w))
    patches = []
    for top in range(0, h - size + 1, stride):
        for left in range(0, w - size + 1, stride):
            inside = (
                (pix[:, 0] >= top)
                & (pix[:, 0] < top + size)
                & (pix[:, 1] >= left)
                & (pix[:, 1] < left + size)
            )
            keep = np.nonzero(inside)[0]
            pts = sample.gt_points.points[keep] - (left, top)
            classes = None if sample.gt_points.classes is None else sample.gt_points.classes[keep]
            instances = None
            if sample.gt_instances is not None:
                crop = sample.gt_instances.labels[top : top + size, left : left + size]
                instances = InstanceMask(_retain_instances(crop, [int(k) + 1 for k in keep]))
            patches.append(
                Sample(
                    image=sample.image[top : top + size, left : left + size],
                    gt_points=PointSet(pts, classes=classes),
                    gt_instances=instances,
                    provenance={**sample.provenance, "patch_origin": [top, left]},
                    regime=sample.regime,
                )
            )
    return patches


def _nn_index(n_out: int, n_in: int, scale: float) -> np.ndarray:
    # nearest source index for each output pixel center
    src = np.floor((np.arange(n_out) + 0.5) / scale - 0.5 + 0.5)
    return np.clip(src.astype(int), 0, n_in - 1)


def _apply_geometry(image, labels, points, op, rng, background):
    """One geometric op applied identically to image, labels, and points."""
    h, w = image.shape[:2]
    name = op[0] if isinstance(op, (tuple, list)) else op
    args = list(op[1:]) if isinstance(op, (tuple, list)) else []

    if name == "hflip":
        return image[:, ::-1], labels[:, ::-1], np.column_stack([w - 1 - points[:, 0], points[:, 1]])
    if name == "vflip":
        return image[::-1], labels[::-1], np.column_stack([points[:, 0], h - 1 - points[:, 1]])
    if name == "rotate90":
        k = int(args[0]) if args else int(rng.integers(4))
        pts = points
        for _ in range(k % 4):
            w_cur = image.shape[1]
            image = np.rot90(image)
            labels = np.rot90(labels)
            pts = np.column_stack([pts[:, 1], w_cur - 1 - pts[:, 0]])
        return image, labels, pts
    if name == "resize":
        scale = float(args[0]) if args else float(rng.uniform(0.8, 1.2))
        if scale == 1.0:
            return image, labels, points
        nh, nw = max(1, round(h * scale)), max(1, round(w * scale))
        ri = _nn_index(nh, h, scale)
        ci = _nn_index(nw, w, scale)
        pts = (points + 0.5) * scale - 0.5
        return image[ri][:, ci], labels[ri][:, ci], pts
    if name == "affine":
        if args:
            mat = np.asarray(args[0], dtype=np.float64).reshape(2, 3)
        else:
            ang = math.radians(float(rng.uniform(-15, 15)))
            shear = math.radians(float(rng.uniform(-5, 5)))
            ct, st = math.cos(ang), math.sin(ang)
            cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
            lin = np.array([[ct, -st + math.tan(shear)], [st, ct]])
            shift = np.array([cx, cy]) - lin @ [cx, cy]
            mat = np.column_stack([lin, shift])
        lin, shift = mat[:, :2], mat[:, 2]
        inv = np.linalg.inv(lin)
        rr, cc = np.mgrid[0:h, 0:w]
        src = np.einsum("ij,jhw->ihw", inv, np.stack([cc - shift[0], rr - shift[1]]))
        sc = np.round(src[0]).astype(int)
        sr = np.round(src[1]).astype(int)
        valid = (sr >= 0) & (sr < h) & (sc >= 0) & (sc < w)
        sr_c, sc_c = np.clip(sr, 0, h - 1), np.clip(sc, 0, w - 1)
        out_img = image[sr_c, sc_c]
        out_img[~valid] = background
        out_lab = labels[sr_c, sc_c]
        out_lab[~valid] = 0
        pts = points @ lin.T + shift
        return out_img, out_lab, pts
    if name == "crop":
        if args:
            top, left, ch, cw = (int(v) for v in args[0])
        else:
            ch = cw = min(h, w) * 3 // 4
            top = int(rng.integers(h - ch + 1))
            left = int(rng.integers(w - cw + 1))
        if not (0 <= top and 0 <= left and top + ch <= h and left + cw <= w):
            raise ValueError(f"crop rect {(top, left, ch, cw)} outside {h}x{w} image")
        return (
            image[top : top + ch, left : left + cw],
            labels[top : top + ch, left : left + cw],
            points - (left, top),
        )
    raise ValueError(f"unknown augmentation op {name!r}")


def augment_sample(sample: Sample, ops, seed: int = 0) -> Sample:
    """Apply geometric ops in order to image, instances, and points alike.

    Ops with explicit parameters are deterministic; parameter-free forms
    draw from ranges using the seed. Points leaving the canvas are dropped
    together with their instances, counted in diagnostics.
    """
    rng = np.random.default_rng(seed)
    image = sample.image
    labels = (
        sample.gt_instances.labels.copy()
        if sample.gt_instances is not None
        else np.zeros(sample.dims, dtype=np.int32)
    )
    points = sample.gt_points.points.copy()
    background = np.asarray(
        sample.provenance.get("generator", {}).get("background", (0, 0, 0)), dtype=image.dtype
    )

    for op in ops:
        image, labels, points = _apply_geometry(image, labels, points, op, rng, background)

    h, w = image.shape[:2]
    inb = (points[:, 0] >= 0) & (points[:, 0] < w) & (points[:, 1] >= 0) & (points[:, 1] < h)
    keep = [int(i) for i in np.nonzero(inb)[0]]
    # a shrink can collapse two points onto one pixel; keep the first
    seen: dict[tuple[int, int], int] = {}
    unique_keep = []
    for i in keep:
        key = (round_pixel(points[i, 0]), round_pixel(points[i, 1]))
        if key not in seen:
            seen[key] = i
            unique_keep.append(i)
    dropped = len(points) - len(unique_keep)

    classes = None if sample.gt_points.classes is None else sample.gt_points.classes[unique_keep]
    instances = None
    if sample.gt_instances is not None:
        instances = InstanceMask(_retain_instances(labels, [i + 1 for i in unique_keep]))
    return Sample(
        image=np.ascontiguousarray(image),
        gt_points=PointSet(points[unique_keep], classes=classes),
        gt_instances=instances,
        provenance=dict(sample.provenance),
        regime=sample.regime,
        diagnostics={**sample.diagnostics, "dropped_points": dropped},
    )


def normalize(dataset, stats: dict | None = None):
    """Per-channel standardization.

    Without stats, computes population mean/std over every pixel of the
    dataset (the training split) and returns them; with stats, applies them
    unchanged (the validation/test path).
    """
    images = [s.image if isinstance(s, Sample) else np.asarray(s) for s in dataset]
    if not images:
        raise ValueError("empty dataset")
    if stats is None:
        flat = np.concatenate([im.reshape(-1, 3).astype(np.float64) for im in images])
        mean = flat.mean(axis=0)
        std = flat.std(axis=0)
        for ch, s in zip("RGB", std):
            if s == 0.0:
                raise ValueError(f"degenerate channel {ch}: zero standard deviation")
        stats = {"mean": mean.tolist(), "std": std.tolist()}
    mean = np.asarray(stats["mean"], dtype=np.float64)
    std = np.asarray(stats["std"], dtype=np.float64)
    if (std == 0).any():
        raise ValueError("degenerate channel: zero standard deviation in stats")
    normalized = [(im.astype(np.float64) - mean) / std for im in images]
    return normalized, stats


def split_dataset(samples, seed: int = 0, fractions=SPLIT_FRACTIONS) -> dict:
    """Stratified-by-regime split into train/val/test index lists.

    Within each regime the order is shuffled by the seed and quotas follow
    the largest-remainder rule, so an 80-image four-regime dataset splits
    exactly 64/8/8.
    """
    if len(fractions) != len(SPLIT_NAMES):
        raise ValueError("need one fraction per split")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    rng = np.random.default_rng(seed)
    by_regime: dict[str, list[int]] = {}
    for idx, sample in enumerate(samples):
        by_regime.setdefault(sample.regime or "", []).append(idx)

    out: dict[str, list[int]] = {name: [] for name in SPLIT_NAMES}
    for ridx, regime in enumerate(sorted(by_regime)):
        idx = np.array(by_regime[regime])
        idx = idx[rng.permutation(len(idx))]
        n = len(idx)
        exact = [f * n for f in fractions]
        base = [int(q) for q in exact]
        leftover = n - sum(base)
        # remainder ties rotate across regimes so no split is starved
        order = sorted(
            range(len(fractions)),
            key=lambda i: (-(exact[i] - base[i]), (i + ridx) % len(fractions)),
        )
        for i in order[:leftover]:
            base[i] += 1
        start = 0
        for name, take in zip(SPLIT_NAMES, base):
            out[name].extend(int(v) for v in idx[start : start + take])
            start += take
    for name in SPLIT_NAMES:
        out[name].sort()
    return out
