"""Randomized finite-difference validation of every analytic gradient.

Instances are drawn to keep all hinge terms well away from their kinks
(where the losses are not differentiable), then each loss's analytic
gradient is compared against central differences coordinate by
coordinate.
"""

from __future__ import annotations

import numpy as np

from .geometry import BinaryMask, HeatMap, ImageGrid
from .losses import (
    ClusterAssignment,
    EmbeddingField,
    LossParams,
    clustering_loss,
    finite_diff_check,
    l2_loss,
    weighted_binary_ce,
)

TOLERANCE = 1e-6
# Resample until every hinge argument is at least this many steps from 0.
KINK_MARGIN_STEPS = 100.0


def _corrupted(loss):
    def wrapped(vec):
        value, grad = loss(vec)
        grad = np.asarray(grad, dtype=np.float64).copy()
        grad[0] += 0.05 * (1.0 + abs(grad[0]))
        return value, grad

    return wrapped


def _clustering_instance(rng, step: float):
    grid = ImageGrid(4, 4)
    params = LossParams(delta_v=0.5, delta_d=3.1)
    margin = KINK_MARGIN_STEPS * step
    for _ in range(200):
        labels = rng.integers(1, 3, size=grid.shape).astype(np.int32)
        if len(np.unique(labels)) < 2:
            continue
        vectors = rng.normal(scale=1.2, size=(grid.height, grid.width, 2))
        assign = ClusterAssignment(labels, 2)

        flat = vectors.reshape(-1, 2)
        lab = labels.ravel()
        means = np.stack([flat[lab == k].mean(axis=0) for k in (1, 2)])
        pix_sq = np.einsum("md,md->m", flat - means[lab - 1], flat - means[lab - 1])
        pair_sq = float(((means[0] - means[1]) ** 2).sum())
        if np.all(np.abs(pix_sq - params.delta_v) > margin) and (
            abs(params.delta_d - pair_sq) > margin
        ):
            def loss(vec, assign=assign, params=params, grid=grid):
                field = EmbeddingField(grid, vec.reshape(grid.height, grid.width, 2))
                lv = clustering_loss(field, assign, params)
                return lv.value, lv.gradient.ravel()

            return loss, vectors.ravel()
    raise RuntimeError("could not sample a kink-free clustering instance")


def _binary_ce_instance(rng, step: float):
    grid = ImageGrid(4, 4)
    target = BinaryMask(grid, rng.integers(0, 2, size=grid.shape).astype(bool))
    p = rng.uniform(0.05, 0.95, size=grid.shape)

    def loss(vec, target=target, grid=grid):
        lv = weighted_binary_ce(vec.reshape(grid.shape), target)
        return lv.value, lv.gradient.ravel()

    return loss, p.ravel()


def _l2_instance(rng, step: float):
    grid = ImageGrid(4, 4)
    target = HeatMap(grid, rng.uniform(0.1, 2.0, size=grid.shape))
    pred = rng.uniform(0.1, 2.0, size=grid.shape)

    def loss(vec, target=target, grid=grid):
        lv = l2_loss(HeatMap(grid, vec.reshape(grid.shape)), target)
        return lv.value, lv.gradient.ravel()

    return loss, pred.ravel()


_INSTANCES = {
    "clustering_loss": _clustering_instance,
    "weighted_binary_ce": _binary_ce_instance,
    "l2_loss": _l2_instance,
}


def run_gradient_checks(
    seed: int = 0,
    trials: int = 100,
    step: float = 1e-5,
    corrupt: bool = False,
) -> dict[str, float]:
    """Max relative gradient error per loss over seeded random instances."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if step <= 0:
        raise ValueError("step must be positive")
    results = {}
    for loss_index, (name, make) in enumerate(_INSTANCES.items()):
        rng = np.random.default_rng([seed, loss_index])
        worst = 0.0
        for _ in range(trials):
            loss, point = make(rng, step)
            if corrupt:
                loss = _corrupted(loss)
            worst = max(worst, finite_diff_check(loss, point, step))
        results[name] = worst
    return results
