"""Embedding clustering loss, auxiliary branch losses, and their gradients.

The pull term penalizes pixels farther than a margin from their instance
mean; the push term penalizes instance means closer than a second margin.
Both hinge on squared Euclidean distances by default; set
``LossParams(squared=False)`` for the unsquared-norm variant used by some
prior instance-embedding work. All gradients are exact (the mean is
differentiated as a function of the pixel embeddings) and are validated
against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ImageGrid, InstanceMap, BinaryMask, HeatMap, _frozen


@dataclass(frozen=True)
class EmbeddingField:
    """Per-pixel embedding vectors over a grid, shape (H, W, D)."""

    grid: ImageGrid
    vectors: np.ndarray

    def __post_init__(self):
        vecs = np.asarray(self.vectors, dtype=np.float64)
        if vecs.ndim != 3 or vecs.shape[:2] != self.grid.shape or vecs.shape[2] < 1:
            raise ValueError("vectors must have shape (H, W, D) matching the grid")
        if not np.all(np.isfinite(vecs)):
            raise ValueError("embedding vectors must be finite")
        object.__setattr__(self, "vectors", _frozen(vecs.copy()))

    @property
    def dim(self) -> int:
        return self.vectors.shape[2]


@dataclass(frozen=True)
class ClusterAssignment:
    """Pixel-to-instance assignment with ids 1..L (0 = unassigned).

    ``num_instances`` may exceed the highest observed label; the resulting
    empty clusters are rejected when means are computed.
    """

    labels: np.ndarray
    num_instances: int = 0

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int32)
        if labels.ndim != 2:
            raise ValueError("labels must be a 2-d array")
        if labels.min(initial=0) < 0:
            raise ValueError("labels must be >= 0")
        observed = int(labels.max(initial=0))
        count = self.num_instances or observed
        if count < 1:
            raise ValueError("assignment needs at least one instance")
        if observed > count:
            raise ValueError("label exceeds num_instances")
        object.__setattr__(self, "labels", _frozen(labels.copy()))
        object.__setattr__(self, "num_instances", count)

    @classmethod
    def from_instance_map(cls, imap: InstanceMap) -> "ClusterAssignment":
        return cls(np.asarray(imap.labels), imap.num_instances)

    def counts(self) -> np.ndarray:
        """Pixel count per instance id, shape (L,)."""
        return np.bincount(
            self.labels.ravel(), minlength=self.num_instances + 1
        )[1:]


@dataclass(frozen=True)
class LossParams:
    """Pull/push margins and loss configuration.

    The push margin must exceed six times the pull margin so that
    fixed-radius clustering of a converged field is guaranteed to separate
    instances; pass ``enforce_separation=False`` only for experiments.
    """

    delta_v: float
    delta_d: float
    squared: bool = True
    var_weight: float = 1.0
    dist_weight: float = 1.0
    enforce_separation: bool = True

    def __post_init__(self):
        if self.delta_v <= 0 or self.delta_d <= 0:
            raise ValueError("margins must be positive")
        if self.enforce_separation and not self.delta_d > 6.0 * self.delta_v:
            raise ValueError(
                f"delta_d ({self.delta_d}) must exceed 6 * delta_v "
                f"({6.0 * self.delta_v})"
            )


@dataclass(frozen=True)
class LossValue:
    """Scalar loss plus its gradient w.r.t. the differentiated input."""

    value: float
    gradient: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.value) or self.value < 0:
            raise ValueError("loss value must be finite and >= 0")
        if not np.all(np.isfinite(self.gradient)):
            raise ValueError("gradient entries must be finite")


def _flat_assigned(field: EmbeddingField, assign: ClusterAssignment):
    """Labels and embeddings of the assigned pixels, plus per-cluster counts."""
    if assign.labels.shape != field.grid.shape:
        raise ValueError("grid mismatch")
    flat_labels = assign.labels.ravel()
    mask = flat_labels > 0
    lab = flat_labels[mask]
    vecs = field.vectors.reshape(-1, field.dim)[mask]
    counts = np.bincount(lab, minlength=assign.num_instances + 1)[1:]
    if np.any(counts == 0):
        raise ValueError("empty cluster")
    return mask, lab, vecs, counts.astype(np.float64)


def _cluster_sums(lab, values, num_instances):
    """Per-cluster column sums via bincount; values is (M,) or (M, D)."""
    if values.ndim == 1:
        return np.bincount(lab, weights=values, minlength=num_instances + 1)[1:]
    return np.stack(
        [
            np.bincount(lab, weights=values[:, d], minlength=num_instances + 1)[1:]
            for d in range(values.shape[1])
        ],
        axis=1,
    )


def cluster_means(field: EmbeddingField, assign: ClusterAssignment) -> np.ndarray:
    """Mean embedding of each instance, shape (L, D)."""
    _, lab, vecs, counts = _flat_assigned(field, assign)
    return _cluster_sums(lab, vecs, assign.num_instances) / counts[:, None]


def variance_loss(
    field: EmbeddingField, assign: ClusterAssignment, params: LossParams
) -> LossValue:
    """Pull loss: hinge on each pixel's distance to its instance mean.

    Averaged per cluster and then over clusters. The gradient treats the
    cluster mean as a function of the pixel embeddings (full chain rule).
    """
    mask, lab, vecs, counts = _flat_assigned(field, assign)
    L = assign.num_instances
    means = _cluster_sums(lab, vecs, L) / counts[:, None]

    diffs = means[lab - 1] - vecs  # (M, D)
    sq = np.einsum("md,md->m", diffs, diffs)
    if params.squared:
        h = np.maximum(0.0, sq - params.delta_v)
        g = h  # d(h^2)/d(sq) / 2
        scale = 4.0
    else:
        dist = np.sqrt(sq)
        h = np.maximum(0.0, dist - params.delta_v)
        with np.errstate(invalid="ignore", divide="ignore"):
            g = np.where(dist > 0.0, h / dist, 0.0)
        scale = 2.0

    per_cluster = _cluster_sums(lab, h * h, L) / counts
    value = float(per_cluster.sum() / L)

    # grad_j = (scale / (L * N_c)) * ((1/N_c) * sum_i g_i diffs_i - g_j diffs_j)
    weighted = g[:, None] * diffs
    cluster_term = _cluster_sums(lab, weighted, L) / counts[:, None]
    grad_rows = (scale / (L * counts[lab - 1]))[:, None] * (
        cluster_term[lab - 1] - weighted
    )

    grad = np.zeros((field.grid.num_pixels, field.dim))
    grad[mask] = grad_rows
    return LossValue(value, grad.reshape(field.vectors.shape))


def distance_loss(means: np.ndarray, params: LossParams) -> LossValue:
    """Push loss: hinge on each pair of instance means being too close.

    Zero (with zero gradient) for a single instance, where no pairs exist.
    """
    means = np.asarray(means, dtype=np.float64)
    if means.ndim != 2 or means.shape[0] < 1:
        raise ValueError("means must have shape (L, D), L >= 1")
    L = means.shape[0]
    if L == 1:
        return LossValue(0.0, np.zeros_like(means))

    delta = means[:, None, :] - means[None, :, :]  # (L, L, D)
    sq = np.einsum("abd,abd->ab", delta, delta)
    off = ~np.eye(L, dtype=bool)
    if params.squared:
        h = np.where(off, np.maximum(0.0, params.delta_d - sq), 0.0)
        g = h
    else:
        dist = np.sqrt(sq)
        h = np.where(off, np.maximum(0.0, params.delta_d - dist), 0.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            g = np.where(dist > 0.0, h / dist, 0.0)

    norm = 1.0 / (L * (L - 1))
    value = float(norm * (h * h).sum())
    grad = -4.0 * norm * np.einsum("ab,abd->ad", g, delta)
    return LossValue(value, grad)


def clustering_loss(
    field: EmbeddingField, assign: ClusterAssignment, params: LossParams
) -> LossValue:
    """Weighted sum of pull and push losses, gradient w.r.t. all pixels.

    The push term's mean-gradient is distributed uniformly over each
    cluster's pixels (each pixel contributes 1/N_c to its mean).
    """
    var = variance_loss(field, assign, params)
    mask, lab, vecs, counts = _flat_assigned(field, assign)
    means = _cluster_sums(lab, vecs, assign.num_instances) / counts[:, None]
    dist = distance_loss(means, params)

    grad = params.var_weight * var.gradient.reshape(-1, field.dim).copy()
    mean_grad_per_pixel = (dist.gradient / counts[:, None])[lab - 1]
    grad[mask] += params.dist_weight * mean_grad_per_pixel
    value = params.var_weight * var.value + params.dist_weight * dist.value
    return LossValue(value, grad.reshape(field.vectors.shape))


def weighted_binary_ce(
    probabilities: np.ndarray,
    target: BinaryMask,
    background_weight: float = 0.4,
) -> LossValue:
    """Pixel-mean cross-entropy with down-weighted background pixels.

    Probabilities must lie strictly inside (0, 1); the caller clips.
    """
    p = np.asarray(probabilities, dtype=np.float64)
    if p.shape != target.grid.shape:
        raise ValueError("grid mismatch")
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("saturated probability")
    t = target.bits.astype(np.float64)
    w = np.where(target.bits, 1.0, background_weight)
    n = p.size
    value = float(np.sum(-w * (t * np.log(p) + (1.0 - t) * np.log1p(-p))) / n)
    grad = -w * (t / p - (1.0 - t) / (1.0 - p)) / n
    return LossValue(value, grad)


def l2_loss(prediction: HeatMap, target: HeatMap) -> LossValue:
    """Mean squared error between two heat maps, gradient w.r.t. prediction."""
    if prediction.grid != target.grid:
        raise ValueError("grid mismatch")
    diff = prediction.values - target.values
    n = diff.size
    return LossValue(float(np.sum(diff * diff) / n), 2.0 * diff / n)


def finite_diff_check(loss, point: np.ndarray, step: float) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss`` maps a flat parameter vector to ``(value, gradient)``. The
    relative error uses ``max(1, |analytic|)`` as denominator. The point
    must keep every hinge term away from its kink by well over ``step``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    point = np.asarray(point, dtype=np.float64).ravel()
    value, analytic = loss(point)
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    if not np.isfinite(value) or not np.all(np.isfinite(analytic)):
        raise ValueError("non-finite loss")
    worst = 0.0
    for i in range(point.size):
        probe = point.copy()
        probe[i] = point[i] + step
        up, _ = loss(probe)
        probe[i] = point[i] - step
        down, _ = loss(probe)
        if not (np.isfinite(up) and np.isfinite(down)):
            raise ValueError("non-finite loss")
        numeric = (up - down) / (2.0 * step)
        err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
        worst = max(worst, err)
    return worst


@dataclass(frozen=True)
class OptimizeResult:
    """Final field plus the loss recorded before each step and after the last."""

    field: EmbeddingField
    losses: np.ndarray


# Embedding magnitudes beyond this have certainly diverged; stopping here
# keeps every intermediate (a squared hinge of a squared distance, ~x^4)
# representable in float64.
_DIVERGENCE_LIMIT = 1e70


def optimize_embeddings(
    field: EmbeddingField,
    assign: ClusterAssignment,
    params: LossParams,
    steps: int,
    learning_rate: float,
) -> OptimizeResult:
    """Full-gradient descent on the clustering loss.

    Raises ``RuntimeError("diverged")`` as soon as the iterate stops being
    finite. The returned loss sequence has ``steps + 1`` entries.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    vectors = field.vectors.copy()
    grid = field.grid
    losses = np.empty(steps + 1)
    current = field
    for s in range(steps):
        lv = clustering_loss(current, assign, params)
        losses[s] = lv.value
        vectors -= learning_rate * lv.gradient
        if not np.all(np.isfinite(vectors)) or np.abs(vectors).max() > _DIVERGENCE_LIMIT:
            raise RuntimeError("diverged")
        current = EmbeddingField(grid, vectors)
    final = clustering_loss(current, assign, params)
    losses[steps] = final.value
    return OptimizeResult(current, losses)
