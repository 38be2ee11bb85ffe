"""Command-line interface: evaluation, clustering, gradient checks, synthesis.

Exit codes are a stable contract: 0 success, 1 internal error or failed
check, 2 usage or input error.
"""

from __future__ import annotations

import functools
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from . import formats, metrics, synth
from .clustering import ClusterConfig, threshold_cluster
from .formats import ParseError
from .geometry import BinaryMask, ImageGrid
from .gradcheck import TOLERANCE, run_gradient_checks

EXIT_INTERNAL = 1
EXIT_USAGE = 2


def _guarded(fn):
    """Map ParseError/ValueError (bad input) to exit 2, the rest to exit 1."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ParseError, ValueError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_USAGE)
        except (click.ClickException, SystemExit):
            raise
        except Exception as exc:
            click.echo(f"internal error: {exc}", err=True)
            sys.exit(EXIT_INTERNAL)

    return wrapper


class GridType(click.ParamType):
    name = "WxH"

    def convert(self, value, param, ctx):
        if isinstance(value, ImageGrid):
            return value
        try:
            w, h = value.lower().split("x")
            return ImageGrid(int(w), int(h))
        except Exception:
            self.fail(f"{value!r} is not WIDTHxHEIGHT", param, ctx)


GRID = GridType()


@click.group()
def main():
    """Lane-instance toolkit: metrics, clustering, losses, synthesis."""


@main.command("eval-tusimple")
@click.argument("gt_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("pred_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--x-tol", default=20.0, show_default=True, help="Point match tolerance in pixels.")
@click.option("--match-fraction", default=0.85, show_default=True, help="Matched-point fraction below which a GT lane is FN.")
@click.option("--strict", is_flag=True, show_default=True, help="Fail on frames without a prediction instead of treating them as empty.")
@click.option("--out", default="eval-out", show_default=True, help="Report output directory.")
@click.option("--figure/--no-figure", default=True, show_default=True, help="Also render the report figure.")
@_guarded
def eval_tusimple(gt_path, pred_path, x_tol, match_fraction, strict, out, figure):
    """Point-accuracy evaluation of JSON-lines annotations."""
    gt = formats.parse_tusimple(gt_path)
    pred = formats.parse_tusimple(pred_path)
    frames = formats.tusimple_frames(gt, pred, strict=strict)
    report = metrics.tusimple_accuracy(frames, x_tolerance=x_tol, lane_match_fraction=match_fraction)
    formats.write_report(report, out, figure=figure)
    click.echo(formats.format_report_table(report), nl=False)


@main.command("eval-culane")
@click.argument("list_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("gt_root", type=click.Path(exists=True, file_okay=False))
@click.argument("pred_root", type=click.Path(exists=True, file_okay=False))
@click.option("--width", default=30.0, show_default=True, help="Stroked lane width in pixels (8 for BDD100K-style frames).")
@click.option("--iou", default=0.5, show_default=True, help="IoU threshold; matches need IoU strictly above it.")
@click.option("--grid", type=GRID, default="1640x590", show_default=True, help="Evaluation resolution.")
@click.option("--categories", type=click.Path(exists=True, dir_okay=False), default=None, help="JSON sidecar mapping path prefixes to categories.")
@click.option("--threads", default=1, show_default=True, envvar="LANEKIT_THREADS", help="Worker threads over frames (result is thread-count independent).")
@click.option("--strict", is_flag=True, show_default=True, help="Fail on missing prediction files instead of treating them as empty.")
@click.option("--out", default="eval-out", show_default=True, help="Report output directory.")
@click.option("--figure/--no-figure", default=True, show_default=True, help="Also render the report figure.")
@_guarded
def eval_culane(list_path, gt_root, pred_root, width, iou, grid, categories, threads, strict, out, figure):
    """IoU-F1 evaluation of per-frame .lines.txt annotations."""
    category_map = formats.load_category_map(categories) if categories else None
    frames = formats.parse_culane(
        list_path, gt_root, pred_root, grid=grid, category_map=category_map, strict=strict
    )
    counts_of = functools.partial(
        metrics.culane_frame_counts, lane_width=width, iou_threshold=iou
    )
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_frame = list(pool.map(counts_of, frames, chunksize=8))
    else:
        per_frame = [counts_of(frame) for frame in frames]
    report = metrics.aggregate_by_category(
        per_frame,
        config={
            "lane_width": width,
            "iou_threshold": iou,
            "conventions": "IoU strictly above the threshold counts; the "
            "total row excludes crossroad frames",
        },
    )
    formats.write_report(report, out, figure=figure)
    click.echo(formats.format_report_table(report), nl=False)


@main.command("cluster")
@click.argument("embedding_file", type=click.Path(exists=True, dir_okay=False))
@click.argument("mask_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--delta-v", default=0.5, show_default=True, help="Pull margin; the assignment radius is twice this.")
@click.option("--radius", default=None, type=float, help="Explicit assignment radius (overrides --delta-v).")
@click.option("--seed", default=0, show_default=True, help="RNG seed for starting-pixel selection.")
@click.option("--deterministic", is_flag=True, show_default=True, help="Seed from the lowest unassigned pixel instead of the RNG.")
@click.option("--min-pixels", default=1, show_default=True, help="Drop instances smaller than this many pixels.")
@click.option("--out", default="instances.lkf", show_default=True, help="Instance map output file.")
@_guarded
def cluster(embedding_file, mask_file, delta_v, radius, seed, deterministic, min_pixels, out):
    """Threshold-cluster an embedding field restricted to a lane mask."""
    field = formats.read_embedding_file(embedding_file)
    mask = formats.read_mask_file(mask_file)
    config = ClusterConfig(
        radius=radius if radius is not None else 2.0 * delta_v,
        seed=seed,
        deterministic=deterministic,
        min_pixels=min_pixels,
    )
    imap = threshold_cluster(field, mask, config)
    formats.write_instance_file(out, imap)
    click.echo(f"instances: {imap.num_instances}")


def _positive_step(ctx, param, value):
    if value <= 0:
        raise click.BadParameter("step must be positive")
    return value


@main.command("grad-check")
@click.option("--seed", default=0, show_default=True, help="Base RNG seed.")
@click.option("--trials", default=100, show_default=True, help="Random instances per loss.")
@click.option("--step", default=1e-5, show_default=True, callback=_positive_step, help="Central-difference step.")
@click.option("--corrupt", is_flag=True, hidden=True, help="Test hook: corrupt analytic gradients; the check must fail.")
def grad_check(seed, trials, step, corrupt):
    """Verify analytic loss gradients against finite differences."""
    try:
        results = run_gradient_checks(seed=seed, trials=trials, step=step, corrupt=corrupt)
    except click.ClickException:
        raise
    except Exception as exc:
        click.echo(f"gradient check aborted (seed={seed}): {exc}", err=True)
        sys.exit(EXIT_INTERNAL)
    failed = False
    for name, err in results.items():
        status = "ok" if err <= TOLERANCE else "FAIL"
        click.echo(f"{name}: max relative error {err:.3e} [{status}]")
        failed |= err > TOLERANCE
    if failed:
        click.echo(f"gradient check failed (seed={seed})", err=True)
        sys.exit(EXIT_INTERNAL)


@main.command("synth")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Output directory for the corpus.")
@click.option("--frames", default=10, show_default=True, help="Number of scenes.")
@click.option("--lanes", default=4, show_default=True, help="Lanes per scene.")
@click.option("--grid", type=GRID, default="320x180", show_default=True, help="Scene resolution.")
@click.option("--curvature", default=0.1, show_default=True, help="Quadratic bend as a fraction of image width.")
@click.option("--jitter", default=1.0, show_default=True, help="Std of per-point x jitter on predictions (pixels).")
@click.option("--seed", default=0, show_default=True, help="Base RNG seed; frame i uses seed + i.")
@click.option("--dim", default=2, show_default=True, help="Embedding dimensionality.")
@click.option("--delta-v", default=0.5, show_default=True, help="Pull margin of the embedding construction.")
@click.option("--delta-d", default=3.1, show_default=True, help="Push margin; must exceed 6 * delta-v.")
@click.option("--stroke", default=5.0, show_default=True, help="Instance-map stroke width in pixels.")
@click.option("--drop-rate", default=0.1, show_default=True, help="Probability a prediction drops one lane.")
@click.option("--add-rate", default=0.1, show_default=True, help="Probability a prediction gains a spurious lane.")
@click.option("--format", "fmt", type=click.Choice(["tusimple", "culane", "both"]), default="both", show_default=True, help="Annotation formats to emit.")
@click.option("--embeddings", default=1, show_default=True, help="Write embedding/mask/instance files for the first N frames.")
@_guarded
def synth_cmd(out, frames, lanes, grid, curvature, jitter, seed, dim, delta_v, delta_d, stroke, drop_rate, add_rate, fmt, embeddings):
    """Generate a synthetic annotation corpus plus clustering fixtures."""
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    gt_records, pred_records, bookkeeping = [], [], []

    culane_root = root / "culane"
    if fmt in ("culane", "both"):
        (culane_root / "gt" / "frames").mkdir(parents=True, exist_ok=True)
        (culane_root / "pred" / "frames").mkdir(parents=True, exist_ok=True)
    fields_dir = root / "fields"
    if embeddings > 0:
        fields_dir.mkdir(parents=True, exist_ok=True)

    list_lines = []
    for i in range(frames):
        spec = synth.SceneSpec(
            grid=grid,
            lane_count=lanes,
            curvature=curvature,
            jitter=jitter,
            seed=seed + i,
            embedding_dim=dim,
            delta_v=delta_v,
            delta_d=delta_d,
            stroke_width=stroke,
            drop_rate=drop_rate,
            add_rate=add_rate,
        )
        want_fields = i < embeddings
        scene = synth.generate_scene(spec, include_embeddings=want_fields)
        frame_id = f"frames/frame_{i:05d}.jpg"
        bookkeeping.append({"frame": frame_id, "perturbation": scene.perturbation})

        if fmt in ("tusimple", "both"):
            gt_obj, pred_obj = synth.scene_to_tusimple(scene, frame_id)
            gt_records.append(gt_obj)
            pred_records.append(pred_obj)
        if fmt in ("culane", "both"):
            stem = f"frame_{i:05d}.lines.txt"
            formats.write_lane_lines(scene.gt, culane_root / "gt" / "frames" / stem)
            formats.write_lane_lines(scene.pred, culane_root / "pred" / "frames" / stem)
            list_lines.append(frame_id)
        if want_fields:
            mask_bits = scene.instances.labels > 0
            formats.write_embedding_file(fields_dir / f"frame_{i:05d}.emb.lkf", scene.field)
            formats.write_mask_file(
                fields_dir / f"frame_{i:05d}.mask.lkf", BinaryMask(grid, mask_bits)
            )
            formats.write_instance_file(
                fields_dir / f"frame_{i:05d}.inst.lkf", scene.instances
            )

    if fmt in ("tusimple", "both"):
        _write_jsonl(root / "tusimple_gt.jsonl", gt_records)
        _write_jsonl(root / "tusimple_pred.jsonl", pred_records)
    if fmt in ("culane", "both"):
        (culane_root / "list.txt").write_text(
            "".join(line + "\n" for line in list_lines), encoding="utf-8"
        )
    (root / "manifest.json").write_text(
        json.dumps({"frames": bookkeeping, "seed": seed, "lane_count": lanes}, indent=2)
        + "\n",
        encoding="utf-8",
    )
    click.echo(f"wrote {frames} frames to {root}")


def _write_jsonl(path, objs) -> None:
    text = "".join(json.dumps(o) + "\n" for o in objs)
    Path(path).write_text(text, encoding="utf-8")


if __name__ == "__main__":
    main()
