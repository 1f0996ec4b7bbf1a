"""Turning per-pixel probabilities into instances and detected cell centers.

The binary mask keeps pixels where the nuclei probability strictly exceeds
the background probability. Instances are 4-connected components of that
mask, numbered 1..K in raster order of first encounter. Cell centers are
local maxima of a response map (typically the nuclei probability or a
center-distance encoding), kept greedily by descending value subject to a
minimum pairwise distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .loss import ProbabilityMap

# default minimum center separation, in pixels
MIN_DISTANCE = 5.0
DETECT_THRESHOLD = 0.5


@dataclass
class InstanceMask:
    """Integer instance labels: 0 is background, 1..n_instances are objects."""

    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 2:
            raise ValueError("instance labels must be 2-D")
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise ValueError("instance labels must be integers")
        if self.labels.min() < 0:
            raise ValueError("instance labels must be non-negative")

    @property
    def n_instances(self) -> int:
        return int(self.labels.max())

    def sizes(self) -> np.ndarray:
        """Pixel count per instance id 1..n (index 0 unused)."""
        return np.bincount(self.labels.ravel(), minlength=self.n_instances + 1)


@dataclass
class DetectionSet:
    """Detected centers as (x, y) pixel coordinates with response scores."""

    points: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if len(self.points) != len(self.scores):
            raise ValueError("points and scores must have equal length")

    def __len__(self) -> int:
        return len(self.points)


def argmax_mask(output: ProbabilityMap) -> np.ndarray:
    """Boolean nuclei mask: nuclei probability strictly above background."""
    return output.nuclei > output.background


def extract_instances(mask: np.ndarray) -> InstanceMask:
    """4-connected components, ids assigned in raster order of first pixel."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError("mask must be 2-D")
    mask = mask.astype(bool)
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    raw, n = ndimage.label(mask, structure=structure)
    # relabel so ids follow the raster position of each component's first pixel
    flat = raw.ravel()
    first = np.full(n + 1, flat.size, dtype=np.int64)
    nz = np.flatnonzero(flat)
    # reversed so earlier positions win the final write
    first[flat[nz[::-1]]] = nz[::-1]
    order = np.argsort(first[1:], kind="stable")
    remap = np.zeros(n + 1, dtype=np.int32)
    remap[1 + order] = np.arange(1, n + 1, dtype=np.int32)
    return InstanceMask(remap[raw])


def detect_cells(
    response,
    min_distance: float = MIN_DISTANCE,
    threshold: float = DETECT_THRESHOLD,
) -> DetectionSet:
    """Local-maximum detection with greedy minimum-separation suppression.

    A pixel is a candidate when it attains the maximum of its square
    (2*min_distance+1) neighborhood and its value is at least the threshold.
    Candidates are visited by descending value (raster order on ties) and
    kept while at least min_distance (Euclidean) from every kept center.
    """
    if isinstance(response, ProbabilityMap):
        values = response.nuclei
    else:
        values = np.asarray(response, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("response map must be 2-D")
    if min_distance < 1:
        raise ValueError("min_distance must be >= 1 pixel")

    size = 2 * int(np.ceil(min_distance)) + 1
    winmax = ndimage.maximum_filter(values, size=size, mode="constant", cval=-np.inf)
    rows, cols = np.nonzero((values == winmax) & (values >= threshold))
    if len(rows) == 0:
        return DetectionSet(np.empty((0, 2)), np.empty(0))

    vals = values[rows, cols]
    order = np.lexsort((cols, rows, -vals))
    rows, cols, vals = rows[order], cols[order], vals[order]

    kept_xy: list[tuple[float, float]] = []
    kept_scores: list[float] = []
    for r, c, v in zip(rows, cols, vals):
        ok = True
        for kx, ky in kept_xy:
            if (c - kx) ** 2 + (r - ky) ** 2 < min_distance**2:
                ok = False
                break
        if ok:
            kept_xy.append((float(c), float(r)))
            kept_scores.append(float(v))
    return DetectionSet(np.array(kept_xy).reshape(-1, 2), np.array(kept_scores))
