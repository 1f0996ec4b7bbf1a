"""Training losses over two-channel probability maps and the per-iteration
loss selector.

Three targets, three losses: binary cross entropy over a dense cluster
target, cross entropy restricted to the labeled pixels of a Voronoi target,
and mean squared error against a repel map. Exactly one of them is active
per training iteration, chosen round-robin by iteration index mod 3.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .encode import RepelMap, TriStateLabelMap

# probabilities are clamped to [EPS, 1-EPS] before taking logs
EPS = 1e-7


class LossKind(enum.Enum):
    VORONOI = "voronoi"
    REPEL = "repel"
    CLUSTER = "cluster"


@dataclass
class ProbabilityMap:
    """Two per-pixel output channels: nuclei and background.

    The channels sum to 1 per pixel (softmax output); the nuclei channel is
    the one compared against every target.
    """

    nuclei: np.ndarray
    background: np.ndarray

    def __post_init__(self):
        self.nuclei = np.asarray(self.nuclei)
        self.background = np.asarray(self.background)
        if self.nuclei.shape != self.background.shape or self.nuclei.ndim != 2:
            raise ValueError("nuclei/background must be matching 2-D maps")
        if not (np.isfinite(self.nuclei).all() and np.isfinite(self.background).all()):
            raise ValueError("probability maps must be finite")
        if np.abs(self.nuclei + self.background - 1.0).max() > 1e-6:
            raise ValueError("channels do not sum to 1")

    @property
    def shape(self) -> tuple[int, int]:
        return self.nuclei.shape

    @classmethod
    def from_nuclei(cls, nuclei: np.ndarray) -> "ProbabilityMap":
        nuclei = np.asarray(nuclei, dtype=np.float64)
        return cls(nuclei=nuclei, background=1.0 - nuclei)


@dataclass
class SchedulerState:
    """Global training-iteration counter; advances by 1 per step."""

    iteration: int = 0

    def advance(self) -> None:
        self.iteration += 1


def _check_dims(target_shape, output: ProbabilityMap):
    if target_shape != output.shape:
        raise ValueError(
            f"target dims {target_shape} do not match output dims {output.shape}"
        )


def _bce_terms(t: np.ndarray, o: np.ndarray) -> np.ndarray:
    o = np.clip(o.astype(np.float64), EPS, 1.0 - EPS)
    t = t.astype(np.float64)
    return -(t * np.log(o) + (1.0 - t) * np.log(1.0 - o))


def cluster_loss(target: TriStateLabelMap, output: ProbabilityMap) -> float:
    """Cross entropy of the nuclei channel against a dense binary target,
    averaged over all n*m pixels."""
    _check_dims(target.labels.shape, output)
    if target.ignored.any():
        raise ValueError("cluster target must not contain ignored pixels")
    terms = _bce_terms(target.fg, output.nuclei)
    return float(terms.mean())


def voronoi_loss(target: TriStateLabelMap, output: ProbabilityMap) -> float:
    """Cross entropy averaged over the labeled (non-ignored) pixels only."""
    _check_dims(target.labels.shape, output)
    valid = ~target.ignored
    count = int(valid.sum())
    if count == 0:
        raise ValueError("empty Voronoi supervision")
    terms = _bce_terms(target.fg, output.nuclei)
    return float(terms[valid].sum() / count)


def repel_loss(target: RepelMap, output: ProbabilityMap) -> float:
    """Mean squared error between the repel target and the nuclei channel."""
    _check_dims(target.values.shape, output)
    diff = target.values.astype(np.float64) - output.nuclei.astype(np.float64)
    return float(np.mean(diff**2))


def select_loss(state: SchedulerState) -> LossKind:
    """Round-robin loss choice: iteration mod 3 -> voronoi, repel, cluster."""
    return (LossKind.VORONOI, LossKind.REPEL, LossKind.CLUSTER)[state.iteration % 3]


def naive_sum_loss(lv: float, lr: float, lc: float) -> float:
    """Unweighted sum of the three losses (the single-loss baseline)."""
    return lv + lr + lc
