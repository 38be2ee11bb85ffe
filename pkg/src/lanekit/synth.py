"""Deterministic synthetic scenes: lanes, perturbed predictions, embeddings.

Scenes are built from non-crossing quadratic lane curves spanning the
image height. Predictions perturb the ground truth (per-point x jitter,
occasional lane drop or spurious lane) so evaluation exercises all of the
TP/FP/FN paths. Embedding fields place each lane's pixels inside a ball of
half the pull margin around well-separated means, which satisfies the
threshold-clustering separation guarantee by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ImageGrid, InstanceMap, LanePolyline, targets_from_lanes
from .losses import EmbeddingField
from .metrics import CulaneFrame, Category, TuSimpleFrame

EDGE_MARGIN = 4.0  # lanes keep this many pixels clear of the left/right border


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of one synthetic scene (fully determined by the seed)."""

    grid: ImageGrid
    lane_count: int
    curvature: float = 0.1
    jitter: float = 0.0
    seed: int = 0
    embedding_dim: int = 2
    delta_v: float = 0.5
    delta_d: float = 3.1
    stroke_width: float = 5.0
    drop_rate: float = 0.1
    add_rate: float = 0.1
    samples_per_lane: int = 24

    def __post_init__(self):
        if self.lane_count < 1:
            raise ValueError("lane_count must be >= 1")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")
        if not self.delta_d > 6.0 * self.delta_v:
            raise ValueError("delta_d must exceed 6 * delta_v")
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")
        if min(self.drop_rate, self.add_rate) < 0 or self.drop_rate + self.add_rate > 1:
            raise ValueError("drop/add rates must be >= 0 and sum to <= 1")
        if self.samples_per_lane < 2:
            raise ValueError("samples_per_lane must be >= 2")


@dataclass(frozen=True)
class Scene:
    """Generated scene: ground truth, prediction, embeddings, instances.

    ``perturbation`` records what happened to the prediction ("none",
    "dropped:<index>", or "added") for test bookkeeping. The field and
    instance map are None when embeddings were not requested.
    """

    spec: SceneSpec
    gt: tuple
    pred: tuple
    field: EmbeddingField | None
    instances: InstanceMap | None
    perturbation: str


def _lane_xs(spec: SceneSpec, rng) -> tuple[np.ndarray, np.ndarray, float]:
    """Sample rows plus per-lane x positions, shape (lane_count, n_rows)."""
    grid = spec.grid
    ys = np.unique(np.round(np.linspace(0, grid.height - 1, spec.samples_per_lane)))
    u = ys / max(grid.height - 1, 1) - 0.5
    tilt = rng.uniform(-0.12, 0.12) * (grid.width - 1)
    quad = spec.curvature * (grid.width - 1)
    shape = tilt * u + quad * u * u
    s_min, s_max = float(shape.min()), float(shape.max())

    usable = (grid.width - 1) - 2.0 * EDGE_MARGIN - (s_max - s_min)
    min_gap = max(6.0, spec.stroke_width + 2.0)
    if spec.lane_count == 1:
        bases = np.array([usable / 2.0])
    else:
        spacing = usable / (spec.lane_count - 1)
        if spacing < min_gap:
            raise ValueError("infeasible spec: lanes cannot fit without crossing")
        bases = spacing * np.arange(spec.lane_count)
    if usable <= 0:
        raise ValueError("infeasible spec: lanes cannot fit without crossing")

    xs = EDGE_MARGIN - s_min + bases[:, None] + shape[None, :]
    return ys.astype(np.float64), xs, usable


def _polyline(xs: np.ndarray, ys: np.ndarray) -> LanePolyline:
    return LanePolyline(np.column_stack([xs, ys]))


def _embedding_means(spec: SceneSpec, count: int, rng) -> np.ndarray:
    means = np.zeros((count, spec.embedding_dim))
    means[:, 0] = (np.arange(count) + 1.0) * (spec.delta_d + 1.0)
    means += rng.normal(scale=0.5, size=spec.embedding_dim)[None, :]
    return means


def _ball_offsets(n: int, dim: int, radius: float, rng) -> np.ndarray:
    direction = rng.normal(size=(n, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.uniform(size=n) ** (1.0 / dim)
    return r[:, None] * direction


def generate_scene(spec: SceneSpec, include_embeddings: bool = True) -> Scene:
    """Build one scene deterministically from the spec's seed."""
    rng = np.random.default_rng(spec.seed)
    ys, xs, usable = _lane_xs(spec, rng)
    gt = tuple(_polyline(row, ys) for row in xs)

    noise = rng.normal(size=xs.shape)
    pred_xs = np.clip(xs + spec.jitter * noise, 0.0, spec.grid.width - 1.0)
    pred = [_polyline(row, ys) for row in pred_xs]
    perturbation = "none"
    roll = rng.uniform()
    if roll < spec.drop_rate and len(pred) > 0:
        victim = int(rng.integers(len(pred)))
        del pred[victim]
        perturbation = f"dropped:{victim}"
    elif roll < spec.drop_rate + spec.add_rate:
        base = rng.uniform(EDGE_MARGIN, EDGE_MARGIN + usable)
        offset = xs[0] - xs[0, 0]  # shared lane shape, re-based
        spur = np.clip(base + offset, 0.0, spec.grid.width - 1.0)
        pred.append(_polyline(spur, ys))
        perturbation = "added"

    field = instances = None
    if include_embeddings:
        _, instances = targets_from_lanes(gt, spec.stroke_width, spec.grid)
        labels = instances.labels.ravel()
        vectors = np.zeros((spec.grid.num_pixels, spec.embedding_dim))
        means = _embedding_means(spec, len(gt), rng)
        for k in range(1, len(gt) + 1):
            idx = np.flatnonzero(labels == k)
            vectors[idx] = means[k - 1] + _ball_offsets(
                idx.size, spec.embedding_dim, spec.delta_v / 2.0, rng
            )
        _check_separation(vectors, labels, means, spec)
        field = EmbeddingField(
            spec.grid, vectors.reshape(spec.grid.height, spec.grid.width, -1)
        )

    return Scene(
        spec=spec,
        gt=gt,
        pred=tuple(pred),
        field=field,
        instances=instances,
        perturbation=perturbation,
    )


def _check_separation(vectors, labels, means, spec: SceneSpec) -> None:
    """The generated field must satisfy the clustering guarantee's premise."""
    for k in range(1, means.shape[0] + 1):
        pts = vectors[labels == k]
        if pts.size:
            spread = np.linalg.norm(pts - means[k - 1], axis=1).max()
            assert spread < spec.delta_v, "pixel escaped its margin ball"
    if means.shape[0] > 1:
        gaps = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=2)
        np.fill_diagonal(gaps, np.inf)
        assert gaps.min() >= spec.delta_d + 1.0 - 1e-9, "means too close"
        assert gaps.min() > 6.0 * spec.delta_v, "separation premise violated"


def scene_to_tusimple(scene: Scene, frame_id: str) -> tuple:
    """(gt record fields, pred record fields) with integer x positions.

    Import-light: returns plain dict pairs consumable by the JSON-lines
    writer; lane points are rounded to integers per that convention.
    """
    h_samples = [int(y) for y in scene.gt[0].points[:, 1]] if scene.gt else []

    def lanes_of(polylines):
        lanes = []
        for lane in polylines:
            xs = [int(round(float(x))) for x in lane.points[:, 0]]
            lanes.append(xs)
        return lanes

    gt = {"lanes": lanes_of(scene.gt), "h_samples": h_samples, "raw_file": frame_id}
    pred = {"lanes": lanes_of(scene.pred), "h_samples": h_samples, "raw_file": frame_id}
    return gt, pred


def scene_to_tusimple_frame(scene: Scene, frame_id: str = "") -> TuSimpleFrame:
    gt, pred = scene_to_tusimple(scene, frame_id)
    return TuSimpleFrame(
        h_samples=gt["h_samples"],
        gt_lanes=gt["lanes"],
        pred_lanes=pred["lanes"],
        frame_id=frame_id,
    )


def scene_to_culane_frame(
    scene: Scene, frame_id: str = "", category: Category = Category.NORMAL
) -> CulaneFrame:
    return CulaneFrame(
        gt_lanes=scene.gt,
        pred_lanes=scene.pred,
        grid=scene.spec.grid,
        category=category,
        frame_id=frame_id,
    )
