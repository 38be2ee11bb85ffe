"""Annotation parsing, report writing, and the field interchange container.

Two community annotation conventions are supported so real benchmark files
work unmodified: JSON-lines frames with keys "lanes", "h_samples",
"raw_file" (absent points marked -2), and per-frame ".lines.txt" files of
whitespace-separated x y pairs, one lane per line, addressed through a
list file of relative frame paths. Coordinates stay real-valued
end-to-end; rounding happens only at rasterization.

Frames are streamed, so corpora with hundreds of thousands of frames parse
in constant memory.
"""

from __future__ import annotations

import io
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import BinaryMask, ImageGrid, InstanceMap, LanePolyline
from .losses import EmbeddingField
from .metrics import Category, CulaneFrame, EvalReport, TuSimpleFrame

log = logging.getLogger("lanekit")

REPORT_SCHEMA = 1
FIELD_MAGIC = b"LKF1"  # container: magic, uint32 H W D, float32 LE row-major

DEFAULT_CULANE_GRID = ImageGrid(1640, 590)


class ParseError(ValueError):
    """Malformed input; always carries the offending file and line."""

    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = str(path) if path is not None else "<input>"
        self.line = line
        where = self.path if line is None else f"{self.path}:{line}"
        super().__init__(f"{where}: {message}")


def _line_source(source, path):
    """(lines, display_path) from a path, file object, or line iterable."""
    if isinstance(source, (str, Path)):
        p = Path(source)
        return p.read_text(encoding="utf-8").splitlines(), path or p
    if isinstance(source, io.IOBase):
        return source.read().splitlines(), path or getattr(source, "name", None)
    return list(source), path


# ---------------------------------------------------------------------------
# JSON-lines frames ("lanes" / "h_samples" / "raw_file")


@dataclass(frozen=True)
class TuSimpleRecord:
    """One parsed annotation line: lane x-lists sampled at fixed rows."""

    raw_file: str
    h_samples: tuple
    lanes: tuple


def parse_tusimple(source, path=None) -> list[TuSimpleRecord]:
    """Parse JSON-lines annotations; blank lines are skipped."""
    lines, path = _line_source(source, path)
    records = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed JSON ({exc.msg})", path, lineno) from exc
        for key in ("lanes", "h_samples", "raw_file"):
            if key not in obj:
                raise ParseError(f"missing key {key!r}", path, lineno)
        h_samples = obj["h_samples"]
        if not isinstance(h_samples, list):
            raise ParseError("h_samples must be a list", path, lineno)
        lanes = obj["lanes"]
        if not isinstance(lanes, list):
            raise ParseError("lanes must be a list of lists", path, lineno)
        for i, lane in enumerate(lanes):
            if not isinstance(lane, list):
                raise ParseError(f"lane {i} is not a list", path, lineno)
            if len(lane) != len(h_samples):
                raise ParseError(
                    f"lane {i} has {len(lane)} x values, expected "
                    f"{len(h_samples)}",
                    path,
                    lineno,
                )
        records.append(
            TuSimpleRecord(
                raw_file=str(obj["raw_file"]),
                h_samples=tuple(h_samples),
                lanes=tuple(tuple(lane) for lane in lanes),
            )
        )
    return records


def tusimple_record_line(record: TuSimpleRecord) -> str:
    """Canonical single-line JSON for a record (stable key order)."""
    return json.dumps(
        {
            "lanes": [list(lane) for lane in record.lanes],
            "h_samples": list(record.h_samples),
            "raw_file": record.raw_file,
        }
    )


def write_tusimple(records, destination) -> None:
    text = "".join(tusimple_record_line(r) + "\n" for r in records)
    Path(destination).write_text(text, encoding="utf-8")


def tusimple_frames(gt_records, pred_records, strict: bool = False):
    """Join ground-truth and prediction records on raw_file, in GT order.

    A ground-truth frame without a prediction gets zero predicted lanes
    (or raises when strict). Predictions for unknown frames are ignored.
    """
    by_file = {}
    for rec in pred_records:
        by_file[rec.raw_file] = rec
    frames = []
    for gt in gt_records:
        pred = by_file.get(gt.raw_file)
        if pred is None:
            if strict:
                raise ParseError("missing prediction for frame", gt.raw_file)
            log.warning("no prediction for frame %s; treating as empty", gt.raw_file)
            pred_lanes = ()
        else:
            pred_lanes = pred.lanes
        frames.append(
            TuSimpleFrame(
                h_samples=gt.h_samples,
                gt_lanes=gt.lanes,
                pred_lanes=pred_lanes,
                frame_id=gt.raw_file,
            )
        )
    return frames


# ---------------------------------------------------------------------------
# Per-frame lane line files + list file


def parse_lane_lines(source, path=None) -> list[LanePolyline]:
    """Parse one ".lines.txt": one lane per line, alternating x y tokens.

    An empty file is a valid frame with zero lanes. Points are sorted by y.
    """
    lines, path = _line_source(source, path)
    lanes = []
    for lineno, line in enumerate(lines, start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) % 2:
            raise ParseError(
                f"odd coordinate count ({len(tokens)} tokens)", path, lineno
            )
        try:
            values = [float(tok) for tok in tokens]
        except ValueError as exc:
            raise ParseError(f"non-numeric token ({exc})", path, lineno) from exc
        pts = np.array(values, dtype=np.float64).reshape(-1, 2)
        lanes.append(LanePolyline(pts).sorted_by_y())
    return lanes


def lane_lines_text(lanes) -> str:
    return "".join(
        " ".join(repr(float(v)) for v in lane.points.ravel()) + "\n" for lane in lanes
    )


def write_lane_lines(lanes, destination) -> None:
    Path(destination).write_text(lane_lines_text(lanes), encoding="utf-8")


@dataclass(frozen=True)
class DatasetManifest:
    """List-file contents: unique frame ids with annotation paths."""

    root: str
    entries: tuple  # of (frame_id, annotation_ref, Category | None)

    def __post_init__(self):
        ids = [e[0] for e in self.entries]
        if len(ids) != len(set(ids)):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise ValueError(f"duplicate frame id {dup!r}")
        object.__setattr__(self, "entries", tuple(self.entries))


def annotation_ref(frame_path: str) -> str:
    """Map a frame path from a list file to its lane annotation path."""
    p = Path(frame_path)
    if p.suffix.lower() in (".jpg", ".jpeg", ".png"):
        return str(p.with_suffix(".lines.txt"))
    return frame_path + ".lines.txt"


def load_category_map(path) -> dict:
    """Sidecar mapping of frame path prefixes to category names."""
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(obj, dict):
        raise ParseError("category map must be a JSON object", path)
    return {str(prefix): Category.parse(name) for prefix, name in obj.items()}


def categorize(frame_path: str, category_map: dict | None) -> Category:
    """Longest-prefix category lookup; unmatched frames are Normal."""
    if category_map:
        best = None
        for prefix in category_map:
            if frame_path.startswith(prefix):
                if best is None or len(prefix) > len(best):
                    best = prefix
        if best is not None:
            return category_map[best]
    return Category.NORMAL


def read_list_file(path, category_map: dict | None = None) -> DatasetManifest:
    entries = []
    for raw_line in Path(path).read_text(encoding="utf-8").splitlines():
        frame = raw_line.strip()
        if not frame:
            continue
        entries.append((frame, annotation_ref(frame), categorize(frame, category_map)))
    return DatasetManifest(root=str(Path(path).parent), entries=entries)


def parse_culane(
    list_path,
    gt_root,
    pred_root=None,
    grid: ImageGrid = DEFAULT_CULANE_GRID,
    category_map: dict | None = None,
    strict: bool = False,
):
    """Stream frames for a list file; one frame is in memory at a time.

    Missing ground-truth files always raise. A missing prediction file is
    an empty prediction by default (logged) and an error when strict.
    """
    manifest = read_list_file(list_path, category_map)
    for frame_id, ref, category in manifest.entries:
        gt_path = Path(gt_root) / ref
        if not gt_path.is_file():
            raise ParseError("missing ground-truth lane file", gt_path)
        gt_lanes = parse_lane_lines(gt_path)
        pred_lanes = []
        if pred_root is not None:
            pred_path = Path(pred_root) / ref
            if pred_path.is_file():
                pred_lanes = parse_lane_lines(pred_path)
            elif strict:
                raise ParseError("missing prediction lane file", pred_path)
            else:
                log.warning("missing prediction %s; treating as empty", pred_path)
        yield CulaneFrame(
            gt_lanes=gt_lanes,
            pred_lanes=pred_lanes,
            grid=grid,
            category=category,
            frame_id=frame_id,
        )


# ---------------------------------------------------------------------------
# Reports


def report_to_json(report: EvalReport) -> str:
    payload = {
        "schema": REPORT_SCHEMA,
        "metric": report.metric,
        "totals": report.totals,
        "per_category": report.per_category,
        "config": report.config,
    }
    return json.dumps(payload, indent=2) + "\n"


def parse_report_json(text: str) -> EvalReport:
    obj = json.loads(text)
    if obj.get("schema") != REPORT_SCHEMA:
        raise ParseError(f"unsupported report schema {obj.get('schema')!r}")
    return EvalReport(
        metric=obj["metric"],
        totals=obj["totals"],
        per_category=obj.get("per_category", {}),
        config=obj.get("config", {}),
    )


def format_report_table(report: EvalReport) -> str:
    """Tab-delimited table: one accuracy row, or category rows plus Total."""
    t = report.totals
    lines = []
    if report.metric == "tusimple-accuracy":
        lines.append("TuSimple-style point accuracy")
        lines.append("Accuracy / FP / FN")
        lines.append(
            f"{t['accuracy']:.4f} / {t['fp_rate']:.4f} / {t['fn_rate']:.4f}"
        )
        lines.append("")
        lines.append("Counts\ttp\tfp\tfn\tgt_lanes\tpred_lanes")
        lines.append(
            f"\t{t['tp']}\t{t['fp']}\t{t['fn']}\t{t['gt_lanes']}\t{t['pred_lanes']}"
        )
    elif report.metric == "culane-f1":
        lines.append("Category\tF1(%)\tTP\tFP\tFN")
        for name, row in report.per_category.items():
            if name == Category.CROSSROAD.value:
                lines.append(f"{name}\t-\t-\t{row['fp']}\t-")
            else:
                lines.append(
                    f"{name}\t{100.0 * row['f1']:.1f}\t{row['tp']}\t{row['fp']}"
                    f"\t{row['fn']}"
                )
        lines.append(
            f"Total\t{100.0 * t['f1']:.1f}\t{t['tp']}\t{t['fp']}\t{t['fn']}"
        )
    else:
        raise ValueError(f"unknown metric {report.metric!r}")
    if report.config:
        lines.append("")
        lines.append(
            "config\t"
            + "\t".join(f"{k}={v}" for k, v in report.config.items() if k != "conventions")
        )
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, destination, figure: bool = True, stem: str = "report"):
    """Write <stem>.txt, <stem>.json, and optionally <stem>.png to a directory.

    Byte output is a pure function of the report contents.
    """
    dest = Path(destination)
    dest.mkdir(parents=True, exist_ok=True)
    txt_path = dest / f"{stem}.txt"
    json_path = dest / f"{stem}.json"
    txt_path.write_text(format_report_table(report), encoding="utf-8")
    json_path.write_text(report_to_json(report), encoding="utf-8")
    written = [txt_path, json_path]
    if figure:
        from .plots import render_report_figure

        png_path = dest / f"{stem}.png"
        render_report_figure(report, png_path)
        written.append(png_path)
    return written


# ---------------------------------------------------------------------------
# Field/mask interchange container


def write_field_file(path, array: np.ndarray) -> None:
    """Write magic + uint32 dims (H, W, D) + float32 LE row-major payload."""
    arr = np.asarray(array)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError("field array must have shape (H, W) or (H, W, D)")
    h, w, d = arr.shape
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<III", h, w, d))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_field_file(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != FIELD_MAGIC:
        raise ParseError("bad magic; not a field container", path)
    if len(data) < 16:
        raise ParseError("truncated header", path)
    h, w, d = struct.unpack("<III", data[4:16])
    expected = 16 + 4 * h * w * d
    if len(data) != expected:
        raise ParseError(
            f"payload size {len(data) - 16} does not match dims {h}x{w}x{d}", path
        )
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(h, w, d).astype(np.float32)


def write_embedding_file(path, field: EmbeddingField) -> None:
    write_field_file(path, field.vectors)


def read_embedding_file(path) -> EmbeddingField:
    arr = read_field_file(path)
    return EmbeddingField(ImageGrid(arr.shape[1], arr.shape[0]), arr.astype(np.float64))


def write_mask_file(path, mask: BinaryMask) -> None:
    write_field_file(path, mask.bits.astype(np.float32))


def read_mask_file(path) -> BinaryMask:
    arr = read_field_file(path)
    if arr.shape[2] != 1:
        raise ParseError("mask container must have D=1", path)
    return BinaryMask(ImageGrid(arr.shape[1], arr.shape[0]), arr[:, :, 0] > 0.5)


def write_instance_file(path, imap: InstanceMap) -> None:
    write_field_file(path, imap.labels.astype(np.float32))


def read_instance_file(path) -> InstanceMap:
    arr = read_field_file(path)
    if arr.shape[2] != 1:
        raise ParseError("instance container must have D=1", path)
    labels = np.rint(arr[:, :, 0]).astype(np.int32)
    return InstanceMap(ImageGrid(arr.shape[1], arr.shape[0]), labels)
