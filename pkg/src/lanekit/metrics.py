"""Benchmark metrics: point-accuracy evaluation and IoU-based F1.

The point metric matches each ground-truth lane to the prediction with the
most correctly placed points (a point is correct when present on both
sides and within an x tolerance) and reports point accuracy plus lane-level
FP/FN rates. The IoU metric strokes lanes at a fixed pixel width, pairs
them by maximum-cardinality matching over IoUs strictly above a threshold,
and reports F1 = 2PR/(P+R). Frames in the crossroad category carry no
ground-truth lanes and contribute false positives only.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field as dataclass_field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import ImageGrid, LanePolyline, stroke_indices

ABSENT = -2  # sentinel for a lane with no point at an h_sample

DEFAULT_X_TOLERANCE = 20.0
DEFAULT_LANE_MATCH_FRACTION = 0.85
DEFAULT_LANE_WIDTH = 30.0  # pixels; 8 is the convention for BDD100K-style frames
DEFAULT_IOU_THRESHOLD = 0.5


class Category(enum.Enum):
    NORMAL = "Normal"
    CROWDED = "Crowded"
    NIGHT = "Night"
    NO_LINE = "No line"
    SHADOW = "Shadow"
    ARROW = "Arrow"
    DAZZLE_LIGHT = "Dazzle light"
    CURVE = "Curve"
    CROSSROAD = "Crossroad"

    @classmethod
    def parse(cls, name: str) -> "Category":
        key = "".join(ch for ch in name.lower() if ch.isalnum())
        for cat in cls:
            if "".join(ch for ch in cat.value.lower() if ch.isalnum()) == key:
                return cat
        raise ValueError(f"unknown category {name!r}")


CATEGORY_ORDER = tuple(Category)


@dataclass(frozen=True)
class TuSimpleFrame:
    """Ground-truth and predicted lane x-positions at fixed sample rows."""

    h_samples: tuple
    gt_lanes: tuple
    pred_lanes: tuple
    frame_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "h_samples", tuple(self.h_samples))
        for attr in ("gt_lanes", "pred_lanes"):
            lanes = tuple(tuple(lane) for lane in getattr(self, attr))
            for i, lane in enumerate(lanes):
                if len(lane) != len(self.h_samples):
                    raise ValueError(
                        f"{attr[:-6]} lane {i} has {len(lane)} points, "
                        f"expected {len(self.h_samples)}"
                    )
            object.__setattr__(self, attr, lanes)


@dataclass(frozen=True)
class CulaneFrame:
    """Ground-truth and predicted polylines of one frame, with a category."""

    gt_lanes: tuple
    pred_lanes: tuple
    grid: ImageGrid
    category: Category = Category.NORMAL
    frame_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "gt_lanes", tuple(self.gt_lanes))
        object.__setattr__(self, "pred_lanes", tuple(self.pred_lanes))
        if self.category is Category.CROSSROAD and self.gt_lanes:
            raise ValueError("crossroad frames must have zero ground-truth lanes")


@dataclass
class EvalReport:
    """Counts, ratios, and per-category breakdown of one evaluation run."""

    metric: str
    totals: dict
    per_category: dict = dataclass_field(default_factory=dict)
    config: dict = dataclass_field(default_factory=dict)


def precision_recall_f1(tp: float, fp: float, fn: float) -> tuple[float, float, float]:
    """P, R, and F1 = 2PR/(P+R); each defined as 0 on an empty denominator."""
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    if precision + recall == 0.0:
        return precision, recall, 0.0
    return precision, recall, 2.0 * precision * recall / (precision + recall)


def _point_correct_matrix(frame: TuSimpleFrame, x_tolerance: float) -> np.ndarray:
    """(G, P) matrix of correctly predicted point counts per lane pair."""
    gt = np.asarray(frame.gt_lanes, dtype=np.float64).reshape(len(frame.gt_lanes), -1)
    pred = np.asarray(frame.pred_lanes, dtype=np.float64).reshape(
        len(frame.pred_lanes), -1
    )
    ok = (
        (gt[:, None, :] != ABSENT)
        & (pred[None, :, :] != ABSENT)
        & (np.abs(gt[:, None, :] - pred[None, :, :]) <= abs(x_tolerance))
    )
    return ok.sum(axis=2)


def tusimple_accuracy(
    frames,
    x_tolerance: float = DEFAULT_X_TOLERANCE,
    lane_match_fraction: float = DEFAULT_LANE_MATCH_FRACTION,
) -> EvalReport:
    """Point accuracy over all frames plus lane-level FP/FN rates.

    Each ground-truth lane claims the prediction with the most correct
    points (lowest index on ties; no claim when zero points are correct).
    A ground-truth lane whose claimed fraction of present points falls
    below ``lane_match_fraction`` counts as FN; a prediction claimed by no
    lane counts as FP. FP and FN are reported as rates over predictions
    and ground-truth lanes respectively.
    """
    if not frames:
        raise ValueError("frames must be nonempty")
    if x_tolerance <= 0:
        raise ValueError("x_tolerance must be positive")

    correct_points = 0
    gt_points = 0
    tp = fp = fn = 0
    gt_lane_total = 0
    pred_lane_total = 0

    for frame in frames:
        n_pred = len(frame.pred_lanes)
        pred_lane_total += n_pred
        present = [
            sum(1 for x in lane if x != ABSENT) for lane in frame.gt_lanes
        ]
        counts = None
        if frame.gt_lanes and n_pred:
            counts = _point_correct_matrix(frame, x_tolerance)
        claimed = set()
        for g, n_present in enumerate(present):
            if n_present == 0:
                continue  # nothing annotated on this lane
            gt_lane_total += 1
            gt_points += n_present
            best = int(counts[g].max()) if counts is not None else 0
            correct_points += best
            if best > 0:
                claimed.add(int(np.argmax(counts[g])))
            if best / n_present < lane_match_fraction:
                fn += 1
            else:
                tp += 1
        fp += n_pred - len(claimed)

    accuracy = correct_points / gt_points if gt_points else 0.0
    fp_rate = fp / pred_lane_total if pred_lane_total else 0.0
    fn_rate = fn / gt_lane_total if gt_lane_total else 0.0
    precision, recall, f1 = precision_recall_f1(tp, fp, fn)
    return EvalReport(
        metric="tusimple-accuracy",
        totals={
            "accuracy": accuracy,
            "fp_rate": fp_rate,
            "fn_rate": fn_rate,
            "tp": tp,
            "fp": fp,
            "fn": fn,
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "gt_points": gt_points,
            "correct_points": correct_points,
            "gt_lanes": gt_lane_total,
            "pred_lanes": pred_lane_total,
        },
        config={
            "x_tolerance": abs(x_tolerance),
            "lane_match_fraction": lane_match_fraction,
            "conventions": "point correct iff present on both sides and "
            "|x_pred - x_gt| <= x_tolerance; lane FN below the match "
            "fraction (de-facto benchmark convention, not fixed by the "
            "accuracy formula)",
        },
    )


def _stroke_sets(lanes, width: float, grid: ImageGrid) -> list[np.ndarray]:
    return [stroke_indices(lane, width, grid) for lane in lanes]


def _iou_matrix(gt_sets, pred_sets) -> np.ndarray:
    ious = np.zeros((len(gt_sets), len(pred_sets)))
    for i, a in enumerate(gt_sets):
        for j, b in enumerate(pred_sets):
            inter = np.intersect1d(a, b, assume_unique=True).size
            union = a.size + b.size - inter
            ious[i, j] = inter / union if union else 0.0
    return ious


def match_lanes(ious: np.ndarray, iou_threshold: float) -> list[tuple[int, int]]:
    """Maximum-cardinality matching over pairs with IoU strictly above
    the threshold, tie-broken by maximum total IoU."""
    n, m = ious.shape
    if n == 0 or m == 0:
        return []
    admissible = ious > iou_threshold
    if not admissible.any():
        return []
    big = float(n + m + 1)  # any extra matched pair outweighs all IoU sums
    weights = np.where(admissible, big + ious, 0.0)
    rows, cols = linear_sum_assignment(weights, maximize=True)
    return [(int(i), int(j)) for i, j in zip(rows, cols) if admissible[i, j]]


def culane_frame_counts(
    frame: CulaneFrame,
    lane_width: float = DEFAULT_LANE_WIDTH,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> tuple[Category, int, int, int]:
    """(category, tp, fp, fn) of one frame under stroked-IoU matching."""
    if frame.category is Category.CROSSROAD:
        return (frame.category, 0, len(frame.pred_lanes), 0)
    gt_sets = _stroke_sets(frame.gt_lanes, lane_width, frame.grid)
    pred_sets = _stroke_sets(frame.pred_lanes, lane_width, frame.grid)
    matches = match_lanes(_iou_matrix(gt_sets, pred_sets), iou_threshold)
    tp = len(matches)
    return (frame.category, tp, len(pred_sets) - tp, len(gt_sets) - tp)


def culane_f1(
    frames,
    lane_width: float = DEFAULT_LANE_WIDTH,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> EvalReport:
    """Per-category and total F1 from stroked-IoU lane matching."""
    if lane_width < 1:
        raise ValueError("lane_width must be >= 1")
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in (0, 1]")
    per_frame = [
        culane_frame_counts(frame, lane_width, iou_threshold) for frame in frames
    ]
    return aggregate_by_category(
        per_frame,
        config={
            "lane_width": lane_width,
            "iou_threshold": iou_threshold,
            "conventions": "IoU strictly above the threshold counts; the "
            "total row excludes crossroad frames",
        },
    )


def aggregate_by_category(per_frame, config: dict | None = None) -> EvalReport:
    """Sum (tp, fp, fn) per category and over all non-crossroad frames.

    The total row's F1 comes from the summed counts, not from averaging
    category F1 values. The crossroad row is reported as an FP count only.
    """
    sums = {cat: [0, 0, 0] for cat in CATEGORY_ORDER}
    for category, tp, fp, fn in per_frame:
        category = Category.parse(category) if isinstance(category, str) else category
        sums[category][0] += tp
        sums[category][1] += fp
        sums[category][2] += fn

    per_category = {}
    for cat in CATEGORY_ORDER:
        tp, fp, fn = sums[cat]
        if cat is Category.CROSSROAD:
            per_category[cat.value] = {"fp": fp}
            continue
        precision, recall, f1 = precision_recall_f1(tp, fp, fn)
        per_category[cat.value] = {
            "tp": tp,
            "fp": fp,
            "fn": fn,
            "precision": precision,
            "recall": recall,
            "f1": f1,
        }

    total_tp = sum(sums[c][0] for c in CATEGORY_ORDER if c is not Category.CROSSROAD)
    total_fp = sum(sums[c][1] for c in CATEGORY_ORDER if c is not Category.CROSSROAD)
    total_fn = sum(sums[c][2] for c in CATEGORY_ORDER if c is not Category.CROSSROAD)
    precision, recall, f1 = precision_recall_f1(total_tp, total_fp, total_fn)
    return EvalReport(
        metric="culane-f1",
        totals={
            "tp": total_tp,
            "fp": total_fp,
            "fn": total_fn,
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "crossroad_fp": sums[Category.CROSSROAD][1],
        },
        per_category=per_category,
        config=dict(config or {}),
    )
