"""A small dense-prediction convolutional classifier with hand-written
backpropagation.

Three 3x3 same-padding conv layers (3->8->16->2 channels, ReLU between) feed
a per-pixel softmax over the two output channels. The network is deliberately
tiny (~1.7k parameters): large enough to be spatially contextual and to
exercise the full multi-loss training contract, small enough to train on a
CPU in seconds and to verify every gradient against finite differences.

Training runs in float32; the gradient-check path runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encode import RepelMap, TriStateLabelMap
from .loss import (
    EPS,
    LossKind,
    ProbabilityMap,
    SchedulerState,
    cluster_loss,
    naive_sum_loss,
    repel_loss,
    select_loss,
    voronoi_loss,
)

# fixed architecture: channel counts per layer, 3x3 kernels, pad 1
CHANNELS = (3, 8, 16, 2)
KERNEL = 3
PAD = 1
MIN_DIMS = 7  # receptive field of the three stacked 3x3 convs


class TrainingDiverged(RuntimeError):
    """Raised when a non-finite loss, gradient, or parameter appears during
    training."""

    def __init__(self, iteration: int, value: float, what: str = "loss"):
        super().__init__(f"non-finite {what} {value!r} at iteration {iteration}")
        self.iteration = iteration
        self.value = value


@dataclass
class ModelParams:
    """Weights and biases of the fixed architecture."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(*[a.astype(dtype) for a in self.arrays()])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "ModelParams":
        arrays = []
        offset = 0
        for shape in param_shapes():
            size = int(np.prod(shape))
            arrays.append(vec[offset : offset + size].reshape(shape).copy())
            offset += size
        if offset != vec.size:
            raise ValueError(f"expected {offset} parameters, got {vec.size}")
        return cls(*arrays)

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


def param_shapes() -> list[tuple]:
    shapes = []
    for cin, cout in zip(CHANNELS[:-1], CHANNELS[1:]):
        shapes.append((cout, cin, KERNEL, KERNEL))
        shapes.append((cout,))
    return shapes


def init_params(seed: int = 0, dtype=np.float32) -> ModelParams:
    """Glorot-uniform weights, zero biases, fully determined by the seed."""
    rng = np.random.default_rng(seed)
    arrays = []
    for shape in param_shapes():
        if len(shape) == 4:
            cout, cin, kh, kw = shape
            a = np.sqrt(6.0 / (cin * kh * kw + cout * kh * kw))
            arrays.append(rng.uniform(-a, a, size=shape).astype(dtype))
        else:
            arrays.append(np.zeros(shape, dtype=dtype))
    return ModelParams(*arrays)


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    momentum: float = 0.9
    batch_size: int = 8
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainLogEntry:
    iteration: int
    epoch: int
    kind: str
    value: float


def _im2col(x: np.ndarray) -> np.ndarray:
    """(C, H, W) -> (H*W, C*9) patch matrix for 3x3 same-padding conv."""
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (PAD, PAD), (PAD, PAD)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (KERNEL, KERNEL), axis=(1, 2))
    return np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(h * w, c * KERNEL * KERNEL)


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    c, h, wd = x.shape
    cols = _im2col(x)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out.T.reshape(w.shape[0], h, wd), cols


def _conv_backward(dz: np.ndarray, cols: np.ndarray, w: np.ndarray, x_shape):
    """Gradients of a conv layer given dL/dz; returns (dw, db, dx)."""
    k = dz.shape[0]
    c, h, wd = x_shape
    dz_flat = dz.reshape(k, h * wd)
    dw = (dz_flat @ cols).reshape(w.shape)
    db = dz_flat.sum(axis=1)
    dcols = (dz_flat.T @ w.reshape(k, -1)).reshape(h, wd, c, KERNEL, KERNEL)
    dxp = np.zeros((c, h + 2 * PAD, wd + 2 * PAD), dtype=dz.dtype)
    for ki in range(KERNEL):
        for kj in range(KERNEL):
            dxp[:, ki : ki + h, kj : kj + wd] += dcols[:, :, :, ki, kj].transpose(2, 0, 1)
    return dw, db, dxp[:, PAD : PAD + h, PAD : PAD + wd]


def _forward_cache(params: ModelParams, x: np.ndarray):
    z1, cols1 = _conv_forward(x, params.w1, params.b1)
    a1 = np.maximum(z1, 0)
    z2, cols2 = _conv_forward(a1, params.w2, params.b2)
    a2 = np.maximum(z2, 0)
    z3, cols3 = _conv_forward(a2, params.w3, params.b3)
    zmax = z3.max(axis=0, keepdims=True)
    e = np.exp(z3 - zmax)
    p = e / e.sum(axis=0, keepdims=True)
    return p, (x, z1, a1, z2, a2, cols1, cols2, cols3)


def _as_chw(image: np.ndarray, dtype) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("image must be H x W x 3")
    if min(image.shape[:2]) < MIN_DIMS:
        raise ValueError(f"image dims must be >= {MIN_DIMS}x{MIN_DIMS}")
    return np.ascontiguousarray(image.transpose(2, 0, 1), dtype=dtype)


def forward(params: ModelParams, image: np.ndarray) -> ProbabilityMap:
    """Run the classifier on a normalized H x W x 3 image."""
    if not params.is_finite():
        raise ValueError("non-finite model parameters")
    x = _as_chw(image, params.w1.dtype)
    p, _ = _forward_cache(params, x)
    return ProbabilityMap(nuclei=p[0], background=p[1])


def _target_fg(target) -> np.ndarray:
    if isinstance(target, RepelMap):
        return target.values
    if isinstance(target, TriStateLabelMap):
        return target.fg.astype(np.float64)
    raise TypeError(f"unsupported target type {type(target)!r}")


def _dispatch_loss(target, out: ProbabilityMap, kind: LossKind) -> float:
    if kind is LossKind.CLUSTER:
        return cluster_loss(target, out)
    if kind is LossKind.VORONOI:
        return voronoi_loss(target, out)
    if kind is LossKind.REPEL:
        return repel_loss(target, out)
    raise ValueError(f"unknown loss kind {kind!r}")


def loss_value(params: ModelParams, image: np.ndarray, target, kind: LossKind) -> float:
    """Forward pass plus the selected loss, as one scalar."""
    return _dispatch_loss(target, forward(params, image), kind)


def _output_grad(p0: np.ndarray, target, kind: LossKind) -> np.ndarray:
    """dL/d(nuclei probability), matching the clamped loss definitions."""
    n, m = p0.shape
    if kind is LossKind.REPEL:
        t = target.values.astype(p0.dtype)
        return 2.0 * (p0 - t) / (n * m)
    if kind is LossKind.CLUSTER:
        if target.ignored.any():
            raise ValueError("cluster target must not contain ignored pixels")
        valid = np.ones_like(p0, dtype=bool)
        count = n * m
    elif kind is LossKind.VORONOI:
        valid = ~target.ignored
        count = int(valid.sum())
        if count == 0:
            raise ValueError("empty Voronoi supervision")
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    t = target.fg.astype(p0.dtype)
    o = np.clip(p0, EPS, 1.0 - EPS)
    g = (-t / o + (1.0 - t) / (1.0 - o)) / count
    # the clamp has zero slope outside its interior
    g *= (p0 > EPS) & (p0 < 1.0 - EPS)
    g *= valid
    return g.astype(p0.dtype)


def _backward(params: ModelParams, p: np.ndarray, cache, target, kind: LossKind) -> ModelParams:
    x, z1, a1, z2, a2, cols1, cols2, cols3 = cache
    g = _output_grad(p[0], target, kind)
    dz3_0 = (g * p[0] * p[1]).astype(x.dtype)
    dz3 = np.stack([dz3_0, -dz3_0])

    dw3, db3, da2 = _conv_backward(dz3, cols3, params.w3, a2.shape)
    dz2 = da2 * (z2 > 0)
    dw2, db2, da1 = _conv_backward(dz2, cols2, params.w2, a1.shape)
    dz1 = da1 * (z1 > 0)
    dw1, db1, _ = _conv_backward(dz1, cols1, params.w1, x.shape)
    return ModelParams(dw1, db1, dw2, db2, dw3, db3)


def loss_gradient(params: ModelParams, image: np.ndarray, target, kind: LossKind) -> ModelParams:
    """Analytic gradient of the selected loss w.r.t. every parameter."""
    if not params.is_finite():
        raise ValueError("non-finite model parameters")
    x = _as_chw(image, params.w1.dtype)
    p, cache = _forward_cache(params, x)
    return _backward(params, p, cache, target, kind)


def finite_diff_check(
    params: ModelParams,
    image: np.ndarray,
    target,
    kind: LossKind,
    h: float = 1e-5,
    sample: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients
    over a random sample of parameters, evaluated in float64."""
    params64 = params.astype(np.float64)
    image64 = np.asarray(image, dtype=np.float64)
    analytic = loss_gradient(params64, image64, target, kind).to_vector()

    vec = params64.to_vector()
    rng = np.random.default_rng(seed)
    count = min(sample, vec.size)
    idx = rng.choice(vec.size, size=count, replace=False)

    worst = 0.0
    for i in idx:
        bumped = vec.copy()
        bumped[i] = vec[i] + h
        lo_hi = loss_value(ModelParams.from_vector(bumped), image64, target, kind)
        bumped[i] = vec[i] - h
        lo_lo = loss_value(ModelParams.from_vector(bumped), image64, target, kind)
        numeric = (lo_hi - lo_lo) / (2.0 * h)
        denom = max(abs(analytic[i]), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst


def _batch_step(params_vec, dataset, batch_idx, kind_or_sum, dtype):
    """Mean loss and mean gradient vector over one batch.

    Unlike the public API, this path does not validate the forward output:
    a non-finite probability map yields a non-finite loss so the caller can
    abort at the offending iteration instead of at an opaque check.
    """
    params = ModelParams.from_vector(params_vec)
    total_loss = 0.0
    total_grad = np.zeros_like(params_vec)
    for i in batch_idx:
        image, vor_t, clu_t, rep_t = dataset[i]
        x = _as_chw(image, dtype)
        # overflow here is diverging training, reported via the nan loss
        with np.errstate(over="ignore", invalid="ignore"):
            p, cache = _forward_cache(params, x)
        if not np.isfinite(p).all():
            return float("nan"), total_grad
        out = ProbabilityMap(nuclei=p[0], background=p[1])
        if kind_or_sum == "sum":
            total_loss += naive_sum_loss(
                voronoi_loss(vor_t, out), repel_loss(rep_t, out), cluster_loss(clu_t, out)
            )
            grad = sum(
                _backward(params, p, cache, target, kind).to_vector()
                for target, kind in (
                    (vor_t, LossKind.VORONOI),
                    (rep_t, LossKind.REPEL),
                    (clu_t, LossKind.CLUSTER),
                )
            )
        else:
            kind = kind_or_sum
            target = {
                LossKind.VORONOI: vor_t,
                LossKind.CLUSTER: clu_t,
                LossKind.REPEL: rep_t,
            }[kind]
            total_loss += _dispatch_loss(target, out, kind)
            grad = _backward(params, p, cache, target, kind).to_vector()
        total_grad += grad.astype(dtype)
    n = len(batch_idx)
    return total_loss / n, total_grad / n


def train(
    config: TrainConfig,
    dataset,
    mode: str = "scheduler",
    init: ModelParams | None = None,
) -> tuple[ModelParams, list[TrainLogEntry]]:
    """SGD with momentum over (image, voronoi, cluster, repel) examples.

    In "scheduler" mode each iteration applies the single loss selected by
    the round-robin rule; in "naive_sum" mode each iteration applies the sum
    of all three. The dataset order is reshuffled every epoch from the
    seeded generator, so runs with the same seed are bit-reproducible.
    """
    if mode not in ("scheduler", "naive_sum"):
        raise ValueError(f"unknown training mode {mode!r}")
    if not dataset:
        raise ValueError("empty training dataset")

    rng = np.random.default_rng(config.seed)
    params = init if init is not None else init_params(config.seed)
    dtype = params.w1.dtype
    vec = params.to_vector()
    velocity = np.zeros_like(vec)
    state = SchedulerState()
    log: list[TrainLogEntry] = []

    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            if mode == "scheduler":
                kind = select_loss(state)
                value, grad = _batch_step(vec, dataset, batch, kind, dtype)
                kind_name = kind.value
            else:
                value, grad = _batch_step(vec, dataset, batch, "sum", dtype)
                kind_name = "sum"
            if not np.isfinite(value) or not np.isfinite(grad).all():
                raise TrainingDiverged(state.iteration, value)
            velocity = config.momentum * velocity - config.learning_rate * grad
            vec = vec + velocity
            if not np.isfinite(vec).all():
                raise TrainingDiverged(
                    state.iteration, float(np.abs(velocity).max()), what="parameter update"
                )
            log.append(TrainLogEntry(state.iteration, epoch, kind_name, float(value)))
            state.advance()

    return ModelParams.from_vector(vec), log
