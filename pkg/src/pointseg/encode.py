"""Pixel-level training targets derived from cell-center point annotations.

Three encodings are produced from a set of (x, y) cell centers:

* a Voronoi partition of the image, whose boundary lines supervise the
  background and whose dilated center dots supervise the foreground,
* a per-region 2-means clustering of color + distance features, yielding a
  dense nuclei/background pseudo-mask,
* a repel map: a float field peaking at every center and decaying with
  distance, decaying faster where neighboring centers are close.

All functions are pure; arrays are indexed [row, col] and points are
(x=col, y=row) floats.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Tri-state label codes. These match the on-disk PNG palette.
LABEL_BG = 0
LABEL_FG = 1
LABEL_IGNORED = 255


def round_pixel(x: float) -> int:
    """Round half up to a pixel index."""
    return int(np.floor(x + 0.5))


@dataclass
class PointSet:
    """Cell-center annotations: an (N, 2) float array of (x, y) pixel coords.

    A per-point class tag may be carried along; the encodings ignore it.
    """

    points: np.ndarray
    classes: list | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 2)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("points must be an (N, 2) array of (x, y)")
        self.points = pts
        if self.classes is not None and len(self.classes) != len(pts):
            raise ValueError("class tags must match point count")

    def __len__(self) -> int:
        return len(self.points)

    def pixel_coords(self, dims: tuple[int, int]) -> np.ndarray:
        """(N, 2) int array of (row, col) pixel indices, clipped to dims."""
        h, w = dims
        cols = np.clip(np.floor(self.points[:, 0] + 0.5).astype(int), 0, w - 1)
        rows = np.clip(np.floor(self.points[:, 1] + 0.5).astype(int), 0, h - 1)
        return np.stack([rows, cols], axis=1)

    def validate_bounds(self, dims: tuple[int, int]) -> None:
        """Raise if any point is outside [0, W) x [0, H) or if two points
        share a pixel after rounding."""
        h, w = dims
        xs, ys = self.points[:, 0], self.points[:, 1]
        bad = np.flatnonzero((xs < 0) | (xs >= w) | (ys < 0) | (ys >= h))
        if bad.size:
            raise ValueError(
                f"points out of bounds [0,{w})x[0,{h}): rows {bad.tolist()}"
            )
        pix = self.pixel_coords(dims)
        seen: dict[tuple[int, int], int] = {}
        for i, (r, c) in enumerate(map(tuple, pix)):
            if (r, c) in seen:
                raise ValueError(
                    f"duplicate annotation pixel ({c},{r}): rows {seen[(r, c)]} and {i}"
                )
            seen[(r, c)] = i


@dataclass
class VoronoiPartition:
    """Nearest-point labeling of every pixel plus the partition-line mask.

    region_id[r, c] is the index of the nearest annotation point (Euclidean,
    ties broken by the lowest point index). line_mask marks a 1 px separating
    set: pixels whose right or down neighbor belongs to a different region.
    """

    region_id: np.ndarray
    line_mask: np.ndarray


@dataclass
class TriStateLabelMap:
    """Per-pixel target over {background=0, foreground=1, ignored=255}."""

    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.ndim != 2:
            raise ValueError("labels must be 2-D")
        ok = np.isin(self.labels, (LABEL_BG, LABEL_FG, LABEL_IGNORED))
        if not ok.all():
            raise ValueError("labels contain values outside {0, 1, 255}")

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def m(self) -> int:
        return self.labels.shape[1]

    @property
    def fg(self) -> np.ndarray:
        return self.labels == LABEL_FG

    @property
    def bg(self) -> np.ndarray:
        return self.labels == LABEL_BG

    @property
    def ignored(self) -> np.ndarray:
        return self.labels == LABEL_IGNORED


@dataclass
class RepelParams:
    """Shape parameters of the center-peaked decay field."""

    alpha: float = 0.05
    r: float = 70.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not self.r > 0:
            raise ValueError("r must be > 0")


@dataclass
class RepelMap:
    """H x W float map in [0, 1], peaked at cell centers."""

    values: np.ndarray
    params: RepelParams = field(default_factory=RepelParams)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("values must be 2-D")


def _nearest_point_distances(points: np.ndarray, dims: tuple[int, int]):
    """Per-pixel (d1, d2, argmin) for nearest and second-nearest points.

    Ties on d1 keep the lowest point index. d2 is +inf for a single point.
    """
    h, w = dims
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    d1 = np.full((h, w), np.inf)
    d2 = np.full((h, w), np.inf)
    owner = np.zeros((h, w), dtype=np.int32)
    for i, (px, py) in enumerate(points):
        d = np.sqrt((xx - px) ** 2 + (yy - py) ** 2)
        closer = d < d1
        d2 = np.where(closer, d1, np.minimum(d2, d))
        owner = np.where(closer, np.int32(i), owner)
        d1 = np.where(closer, d, d1)
    return d1, d2, owner


def disk_mask(dims: tuple[int, int], x: float, y: float, radius: float) -> np.ndarray:
    """Boolean mask of pixels within `radius` of the point (x, y)."""
    h, w = dims
    r0 = max(int(np.floor(y - radius)), 0)
    r1 = min(int(np.ceil(y + radius)) + 1, h)
    c0 = max(int(np.floor(x - radius)), 0)
    c1 = min(int(np.ceil(x + radius)) + 1, w)
    mask = np.zeros((h, w), dtype=bool)
    if r0 >= r1 or c0 >= c1:
        return mask
    yy, xx = np.mgrid[r0:r1, c0:c1].astype(np.float64)
    mask[r0:r1, c0:c1] = (xx - x) ** 2 + (yy - y) ** 2 <= radius**2
    return mask


def voronoi_encode(
    points: PointSet, dims: tuple[int, int], dot_radius: float = 2.0
) -> tuple[VoronoiPartition, TriStateLabelMap]:
    """Partition the image by nearest annotation point and build the
    line/dot supervision target.

    Foreground is the union of dot disks of `dot_radius` around each point,
    background is the partition-line pixels, and every other pixel is
    ignored. Dots win where a disk overlaps a line.
    """
    if len(points) == 0:
        raise ValueError("no annotations")
    points.validate_bounds(dims)

    _, _, owner = _nearest_point_distances(points.points, dims)

    line = np.zeros(dims, dtype=bool)
    line[:, :-1] |= owner[:, :-1] != owner[:, 1:]
    line[:-1, :] |= owner[:-1, :] != owner[1:, :]

    labels = np.full(dims, LABEL_IGNORED, dtype=np.uint8)
    labels[line] = LABEL_BG
    for px, py in points.points:
        labels[disk_mask(dims, px, py, dot_radius)] = LABEL_FG

    return VoronoiPartition(region_id=owner, line_mask=line), TriStateLabelMap(labels)


def _kmeans2(features: np.ndarray, init: np.ndarray, max_iter: int = 100):
    """Lloyd iterations for k=2 from fixed initial centroids.

    Returns (assignment, converged). Assignment ties go to cluster 0. If a
    cluster empties, its centroid is reseeded at the feature farthest from
    the surviving centroid.
    """
    centroids = init.astype(np.float64).copy()
    assign = None
    for _ in range(max_iter):
        d0 = np.einsum("ij,ij->i", features - centroids[0], features - centroids[0])
        d1 = np.einsum("ij,ij->i", features - centroids[1], features - centroids[1])
        new_assign = (d1 < d0).astype(np.int8)
        if assign is not None and (new_assign == assign).all():
            return assign, True
        assign = new_assign
        for k in (0, 1):
            members = features[assign == k]
            if len(members):
                centroids[k] = members.mean(axis=0)
            else:
                other = centroids[1 - k]
                far = np.argmax(np.einsum("ij,ij->i", features - other, features - other))
                centroids[k] = features[far]
    return assign, False


def local_cluster_encode(
    image: np.ndarray,
    points: PointSet,
    partition: VoronoiPartition,
    weight: float = 1.0,
    seed: int | None = None,
    dot_radius: float = 2.0,
) -> tuple[TriStateLabelMap, list[int]]:
    """Per-Voronoi-region 2-means on [R, G, B, scaled distance-to-center].

    RGB channels are scaled to [0, 1]; the distance of each pixel to the
    region's own annotation point is normalized by the region's maximum
    distance and multiplied by `weight`. The cluster containing the
    annotation pixel becomes foreground, the other background; the target
    has no ignored pixels. Degenerate regions (all features identical, or
    too small to split) fall back to a foreground disk of `dot_radius`
    around the point and are reported in the returned list.

    `seed` is accepted for API symmetry with the global baseline; the
    anchored deterministic initialization makes it a no-op.
    """
    del seed
    if len(points) == 0:
        raise ValueError("no annotations")
    h, w = partition.region_id.shape
    if image.shape[:2] != (h, w):
        raise ValueError("image dims do not match partition")

    rgb = np.asarray(image, dtype=np.float64) / 255.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    labels = np.full((h, w), LABEL_BG, dtype=np.uint8)
    fallbacks: list[int] = []

    for i, (px, py) in enumerate(points.points):
        member = partition.region_id == i
        idx_r, idx_c = np.nonzero(member)
        if idx_r.size == 0:
            # region swallowed by a sub-pixel neighbor; the dot stamp below
            # still marks the annotation pixel
            fallbacks.append(i)
            continue

        dist = np.sqrt((xx[member] - px) ** 2 + (yy[member] - py) ** 2)
        dmax = dist.max()
        feats = np.concatenate(
            [
                rgb[member].reshape(-1, 3),
                (weight * dist / dmax if dmax > 0 else dist)[:, None],
            ],
            axis=1,
        )

        anchor = int(np.argmin(dist))
        spread = np.einsum("ij,ij->i", feats - feats[anchor], feats - feats[anchor])
        far = int(np.argmax(spread))
        if spread[far] == 0.0:
            # every feature identical: nothing to split
            labels[member & disk_mask((h, w), px, py, dot_radius)] = LABEL_FG
            fallbacks.append(i)
            continue

        assign, _ = _kmeans2(feats, np.stack([feats[anchor], feats[far]]))
        fg_cluster = assign[anchor]
        labels[idx_r, idx_c] = np.where(assign == fg_cluster, LABEL_FG, LABEL_BG)

    # annotation dots are trusted foreground regardless of the clustering
    pix = points.pixel_coords((h, w))
    labels[pix[:, 0], pix[:, 1]] = LABEL_FG
    return TriStateLabelMap(labels), fallbacks


def global_cluster_baseline(
    image: np.ndarray, points: PointSet, seed: int = 0
) -> TriStateLabelMap:
    """Whole-image 2-means on RGB only; the darker cluster is foreground.

    This is the comparison baseline for the local encoding: cells whose
    contrast falls below the single global split vanish from its mask.
    """
    if len(points) == 0:
        raise ValueError("no annotations")
    h, w = image.shape[:2]
    feats = np.asarray(image, dtype=np.float64).reshape(-1, 3) / 255.0
    if (feats == feats[0]).all():
        raise ValueError("degenerate global clustering")

    rng = np.random.default_rng(seed)
    init = None
    for _ in range(50):
        pick = rng.choice(len(feats), size=2, replace=False)
        if not (feats[pick[0]] == feats[pick[1]]).all():
            init = feats[pick]
            break
    if init is None:
        lum = feats.sum(axis=1)
        init = feats[[int(np.argmin(lum)), int(np.argmax(lum))]]

    assign, _ = _kmeans2(feats, init)
    if (assign == assign[0]).all():
        raise ValueError("degenerate global clustering")

    mean0 = feats[assign == 0].mean()
    mean1 = feats[assign == 1].mean()
    dark = 0 if mean0 <= mean1 else 1
    labels = np.where(assign.reshape(h, w) == dark, LABEL_FG, LABEL_BG).astype(np.uint8)
    return TriStateLabelMap(labels)


def repel_encode(
    points: PointSet, dims: tuple[int, int], params: RepelParams | None = None
) -> RepelMap:
    """Center-peaked decay field over the image.

    With d1/d2 the distances to the nearest and second-nearest points,

        value = max(0, 1 - d1/r)^2 * (d2 - d1) / (d2 + d1 + alpha*r)

    clamped to [0, 1], and exactly max(0, 1 - d1/r)^2 when there is a single
    point (d2 = +inf). The second factor compresses the field between close
    neighbors so that clustered cells stay separable.
    """
    if len(points) == 0:
        raise ValueError("no annotations")
    params = params or RepelParams()
    points.validate_bounds(dims)

    d1, d2, _ = _nearest_point_distances(points.points, dims)
    base = np.maximum(0.0, 1.0 - d1 / params.r) ** 2
    with np.errstate(invalid="ignore"):
        neighbor = (d2 - d1) / (d2 + d1 + params.alpha * params.r)
    neighbor = np.where(np.isinf(d2), 1.0, neighbor)
    values = np.clip(base * neighbor, 0.0, 1.0)
    return RepelMap(values=values, params=params)


def filtered_repel(repel: RepelMap, cluster: TriStateLabelMap) -> RepelMap:
    """Zero the repel map outside the cluster-mask foreground."""
    if repel.values.shape != cluster.labels.shape:
        raise ValueError("repel and cluster label dims differ")
    values = np.where(cluster.fg, repel.values, 0.0)
    return RepelMap(values=values, params=repel.params)
