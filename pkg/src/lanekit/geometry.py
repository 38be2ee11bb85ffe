"""Lane geometry: rasterized masks, smoothed point targets, and mask overlap.

Pixel convention: the pixel at row r, column c has its center at real
coordinates (x=c, y=r). A stroked polyline covers exactly the pixels whose
center lies within half the stroke width (Euclidean) of any segment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KERNEL_SIZE = 11  # point-map smoothing kernel is 11 x 11

# Segment windows above this many elements fall back to a per-segment loop
# to bound memory on degenerate (near-image-diagonal) segments.
_BATCH_ELEMENT_LIMIT = 8_000_000


@dataclass(frozen=True)
class ImageGrid:
    """Integer pixel grid of a frame."""

    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be >= 1")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def num_pixels(self) -> int:
        return self.height * self.width


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LanePolyline:
    """Ordered real-valued (x, y) points of one lane instance.

    Dataset annotations list points in vertical sampling order (increasing
    y); rasterization does not depend on the order.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
            raise ValueError("polyline needs an (N, 2) array of points, N >= 1")
        if not np.all(np.isfinite(pts)):
            raise ValueError("polyline points must be finite")
        object.__setattr__(self, "points", _frozen(pts.copy()))

    def __len__(self) -> int:
        return self.points.shape[0]

    def sorted_by_y(self) -> "LanePolyline":
        order = np.argsort(self.points[:, 1], kind="stable")
        return LanePolyline(self.points[order])

    def reversed(self) -> "LanePolyline":
        return LanePolyline(self.points[::-1])


@dataclass(frozen=True)
class BinaryMask:
    """Per-pixel lane/background map."""

    grid: ImageGrid
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.shape != self.grid.shape:
            raise ValueError("mask dimensions must equal grid dimensions")
        object.__setattr__(self, "bits", _frozen(bits.copy()))

    @classmethod
    def empty(cls, grid: ImageGrid) -> "BinaryMask":
        return cls(grid, np.zeros(grid.shape, dtype=bool))

    def count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class DrivableMask:
    """Drivable-road region map (carried as data only; nothing is learned here)."""

    grid: ImageGrid
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.shape != self.grid.shape:
            raise ValueError("mask dimensions must equal grid dimensions")
        object.__setattr__(self, "bits", _frozen(bits.copy()))


@dataclass(frozen=True)
class HeatMap:
    """Non-negative per-pixel regression target."""

    grid: ImageGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != self.grid.shape:
            raise ValueError("heat map dimensions must equal grid dimensions")
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise ValueError("heat map values must be finite and >= 0")
        object.__setattr__(self, "values", _frozen(vals.copy()))

    def total_mass(self) -> float:
        return float(self.values.sum())


@dataclass(frozen=True)
class InstanceMap:
    """Per-pixel instance labels: 0 is background, lanes are 1..L."""

    grid: ImageGrid
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int32)
        if labels.shape != self.grid.shape:
            raise ValueError("label dimensions must equal grid dimensions")
        if labels.min(initial=0) < 0:
            raise ValueError("labels must be >= 0")
        object.__setattr__(self, "labels", _frozen(labels.copy()))

    @property
    def num_instances(self) -> int:
        return int(self.labels.max(initial=0))

    def label_values(self) -> np.ndarray:
        vals = np.unique(self.labels)
        return vals[vals > 0]


def _segment_windows(a, b, half_width, grid):
    """Yield (flat pixel indices) within half_width of each segment, batched.

    a, b: (S, 2) segment endpoints. Distances are exact point-to-segment;
    windows are clipped to the grid only after the distance test so border
    pixels keep their true distance.
    """
    height, width = grid.shape
    ax, ay = a[:, 0], a[:, 1]
    dx, dy = b[:, 0] - ax, b[:, 1] - ay
    len2 = dx * dx + dy * dy

    x_lo = np.floor(np.minimum(a[:, 0], b[:, 0]) - half_width)
    x_hi = np.ceil(np.maximum(a[:, 0], b[:, 0]) + half_width)
    y_lo = np.floor(np.minimum(a[:, 1], b[:, 1]) - half_width)
    y_hi = np.ceil(np.maximum(a[:, 1], b[:, 1]) + half_width)
    win_w = int((x_hi - x_lo).max()) + 1
    win_h = int((y_hi - y_lo).max()) + 1

    n_seg = a.shape[0]
    if n_seg * win_h * win_w > _BATCH_ELEMENT_LIMIT and n_seg > 1:
        parts = [
            _segment_windows(a[s : s + 1], b[s : s + 1], half_width, grid)
            for s in range(n_seg)
        ]
        return np.concatenate(parts)

    xs = x_lo[:, None, None] + np.arange(win_w)[None, None, :]
    ys = y_lo[:, None, None] + np.arange(win_h)[None, :, None]
    px = xs - ax[:, None, None]
    py = ys - ay[:, None, None]
    t = (px * dx[:, None, None] + py * dy[:, None, None]) / np.where(
        len2 == 0.0, 1.0, len2
    )[:, None, None]
    np.clip(t, 0.0, 1.0, out=t)
    qx = px - t * dx[:, None, None]
    qy = py - t * dy[:, None, None]
    hit = (qx * qx + qy * qy <= half_width * half_width) & (
        (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
    )
    xs_full = np.broadcast_to(xs, hit.shape)
    ys_full = np.broadcast_to(ys, hit.shape)
    return ys_full[hit].astype(np.int64) * width + xs_full[hit].astype(np.int64)


def stroke_indices(lane: LanePolyline, width: float, grid: ImageGrid) -> np.ndarray:
    """Sorted unique flat indices (row * W + col) of the stroked polyline."""
    if len(lane) < 2:
        raise ValueError("degenerate polyline")
    if width <= 0:
        raise ValueError("stroke width must be positive")
    pts = lane.points
    idx = _segment_windows(pts[:-1], pts[1:], 0.5 * float(width), grid)
    return np.unique(idx)


def rasterize_lane(lane: LanePolyline, width: float, grid: ImageGrid) -> BinaryMask:
    """Stroke a polyline onto the grid with the given pixel width.

    A pixel is set iff its center lies within width/2 (Euclidean) of some
    segment of the polyline.
    """
    bits = np.zeros(grid.num_pixels, dtype=bool)
    bits[stroke_indices(lane, width, grid)] = True
    return BinaryMask(grid, bits.reshape(grid.shape))


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection-over-union of two masks; 0.0 when the union is empty."""
    if a.grid != b.grid:
        raise ValueError("grid mismatch")
    inter = int(np.count_nonzero(a.bits & b.bits))
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 0.0
    return inter / union


def _box_kernel(size: int) -> np.ndarray:
    return np.full((size, size), 1.0 / (size * size))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    g = np.exp(-0.5 * (np.arange(-half, half + 1) / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def smooth_point_map(
    points,
    grid: ImageGrid,
    kernel: str = "box",
    sigma: float = 2.0,
) -> HeatMap:
    """Deposit a normalized 11 x 11 kernel at each integer lane point.

    Overlapping deposits sum. Kernels are clipped at the image border
    without renormalization, so total mass equals the point count only
    when every footprint lies fully inside the grid.
    """
    if kernel == "box":
        stamp = _box_kernel(KERNEL_SIZE)
    elif kernel == "gaussian":
        stamp = _gaussian_kernel(KERNEL_SIZE, sigma)
    else:
        raise ValueError(f"unknown kernel {kernel!r}")

    half = KERNEL_SIZE // 2
    height, width = grid.shape
    values = np.zeros((height, width))
    for x, y in points:
        x, y = int(x), int(y)
        if not (0 <= x < width and 0 <= y < height):
            raise ValueError("point out of bounds")
        r0, r1 = max(0, y - half), min(height, y + half + 1)
        c0, c1 = max(0, x - half), min(width, x + half + 1)
        values[r0:r1, c0:c1] += stamp[
            r0 - (y - half) : r1 - (y - half), c0 - (x - half) : c1 - (x - half)
        ]
    return HeatMap(grid, values)


def targets_from_lanes(
    lanes, width: float, grid: ImageGrid
) -> tuple[BinaryMask, InstanceMap]:
    """Union mask and instance labels (1..L in input order) for a lane set.

    Where strokes overlap, the later lane index wins.
    """
    bits = np.zeros(grid.num_pixels, dtype=bool)
    labels = np.zeros(grid.num_pixels, dtype=np.int32)
    for k, lane in enumerate(lanes, start=1):
        idx = stroke_indices(lane, width, grid)
        bits[idx] = True
        labels[idx] = k
    return (
        BinaryMask(grid, bits.reshape(grid.shape)),
        InstanceMap(grid, labels.reshape(grid.shape)),
    )
