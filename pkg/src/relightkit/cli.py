"""Command-line surface: relight, augment, mot-eval, iq-eval, mesh-dump."""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import imagefiles
from .errors import InvalidParameterError, KittiParseError
from .geometry import (
    CameraModel,
    build_sheet_mesh,
    clamp_inverse_depth,
    laplacian_smooth,
    sample_depth_grid,
)
from .kitti import parse_kitti_tracking
from .lighting import LightingCondition, parse_sky_color, parse_sun
from .metrics import clear_mot, image_quality
from .pipeline import AugmentConfig, resolve_workers, run_augment
from .relight import FrameRelighter, RelightParams


def _fail(message: str, code: int = 2):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        _fail(f"{what} not found: {p}")
    return p


@click.group()
def main():
    """Single-image scene relighting and evaluation tools."""


def _geometry_options(fn):
    opts = [
        click.option("--d-min", type=float, default=100.0, show_default=True,
                     help="Inverse-depth floor (far-wall threshold)."),
        click.option("--grid-size", type=int, default=129, show_default=True,
                     help="Sheet mesh vertices per side."),
        click.option("--depth-scale", type=float, default=1000.0, show_default=True),
        click.option("--smooth-iters", type=int, default=10, show_default=True),
        click.option("--smooth-lambda", type=float, default=0.5, show_default=True),
        click.option("--depth-quant", type=float,
                     default=imagefiles.DEFAULT_DEPTH_QUANTIZATION, show_default=True,
                     help="PNG depth quantization (stored = inverse depth * quant)."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


@main.command()
@click.option("--image", "image_path", required=True, help="Input RGB PNG.")
@click.option("--depth", "depth_path", required=True,
              help="Inverse-depth map (.png 16-bit or .pfm).")
@click.option("--fov", type=float, required=True, help="Camera FoV in degrees.")
@click.option("--src-sun", required=True, help="Source sun as AZ,EL degrees.")
@click.option("--tgt-sun", required=True, help="Target sun as AZ,EL degrees.")
@click.option("--sky", default=None, help="Target sky zenith color as #RRGGBB.")
@click.option("--out", "out_path", default="relit.png", show_default=True)
@click.option("--dump-buffers", "dump_dir", default=None,
              help="Directory for debug buffer dumps.")
@click.option("--no-sky-recolor", is_flag=True, default=False)
@click.option("--penumbra-scale", type=float, default=0.02, show_default=True)
@click.option("--ambient", type=float, default=0.2, show_default=True)
@click.option("--strength", type=float, default=0.3, show_default=True)
@click.option("--default-k", type=float, default=0.4, show_default=True)
@_geometry_options
def relight(image_path, depth_path, fov, src_sun, tgt_sun, sky, out_path,
            dump_dir, no_sky_recolor, penumbra_scale, ambient, strength,
            default_k, d_min, grid_size, depth_scale, smooth_iters,
            smooth_lambda, depth_quant):
    """Relight a single frame to a target lighting condition."""
    image_file = _require_file(image_path, "image file")
    depth_file = _require_file(depth_path, "depth file")

    try:
        src_az, src_el = parse_sun(src_sun)
        tgt_az, tgt_el = parse_sun(tgt_sun)
        sky_color = parse_sky_color(sky) if sky else (0.3, 0.52, 0.82)
        src_cond = LightingCondition(src_az, src_el, ambient=ambient)
        tgt_cond = LightingCondition(tgt_az, tgt_el, sky_zenith_color=sky_color,
                                     ambient=ambient)
    except InvalidParameterError as exc:
        _fail(str(exc))

    t0 = time.perf_counter()
    image = imagefiles.load_image(image_file)
    try:
        depth = imagefiles.read_inverse_depth(depth_file, quantization=depth_quant)
    except InvalidParameterError as exc:
        _fail(str(exc))
    if image.shape[:2] != (depth.height, depth.width):
        _fail(f"image {image.shape[1]}x{image.shape[0]} and depth "
              f"{depth.width}x{depth.height} dimensions differ")
    t_load = time.perf_counter() - t0

    params = RelightParams(
        d_min=d_min, grid_size=grid_size, depth_scale=depth_scale,
        smooth_iterations=smooth_iters, smooth_lambda=smooth_lambda,
        penumbra_scale=penumbra_scale, ambient=ambient,
        reshade_strength=strength, default_k=default_k,
        recolor_sky=not no_sky_recolor,
    )
    cam = CameraModel(fov_deg=fov, width=depth.width, height=depth.height)

    t0 = time.perf_counter()
    relighter = FrameRelighter(image, depth, cam, src_cond, params=params)
    t_geom = time.perf_counter() - t0

    t0 = time.perf_counter()
    result = relighter.relight(tgt_cond)
    t_relight = time.perf_counter() - t0

    imagefiles.save_image(out_path, result.image)
    if dump_dir:
        imagefiles.dump_buffers(dump_dir, result, 0)
    click.echo(f"wrote {out_path} "
               f"(load {t_load:.2f}s, geometry+source {t_geom:.2f}s, "
               f"relight {t_relight:.2f}s)")


@main.command()
@click.argument("config_path")
@click.option("--workers", type=int, default=None,
              help="Worker count (or set RELIGHTKIT_WORKERS).")
def augment(config_path, workers):
    """Batch-relight dataset sequences per a YAML config file."""
    config_file = _require_file(config_path, "config file")
    try:
        config = AugmentConfig.from_yaml(config_file)
    except (InvalidParameterError, KeyError, TypeError) as exc:
        _fail(f"invalid config: {exc}")

    result = run_augment(config, workers=resolve_workers(workers))
    click.echo(f"augmented {result.frames_done} frames "
               f"({result.frames_failed} failed)")
    if result.frames_failed:
        for seq, stem, msg in result.failures:
            click.echo(f"  failed {seq}/{stem}: {msg}", err=True)
        sys.exit(1)


@main.command("mot-eval")
@click.argument("gt_dir")
@click.argument("pred_dir")
@click.option("--iou-min", type=float, default=0.5, show_default=True)
@click.option("--json-out", default=None, help="Write the report as JSON here.")
def mot_eval(gt_dir, pred_dir, iou_min, json_out):
    """Score tracking predictions against ground truth (KITTI label files)."""
    gt_root, pred_root = Path(gt_dir), Path(pred_dir)
    if not gt_root.is_dir():
        _fail(f"ground-truth directory not found: {gt_root}")
    if not pred_root.is_dir():
        _fail(f"prediction directory not found: {pred_root}")

    gt_files = {p.name: p for p in sorted(gt_root.glob("*.txt"))}
    reports = {}
    skipped = []
    all_gt, all_pred, all_dc = [], [], []
    offset = 0

    for name, gt_path in gt_files.items():
        pred_path = pred_root / name
        if not pred_path.is_file():
            skipped.append(name)
            click.echo(f"warning: no predictions for {name}, skipping", err=True)
            continue
        try:
            gt = parse_kitti_tracking(gt_path)
            pred = parse_kitti_tracking(pred_path)
        except KittiParseError as exc:
            _fail(str(exc), code=1)
        reports[name] = clear_mot(gt.detections, pred.detections,
                                  iou_min=iou_min, dontcare=gt.dontcare)
        # Aggregate with frame indices shifted so sequences stay disjoint.
        shift = lambda dets: [type(d)(frame=d.frame + offset, track_id=d.track_id,
                                      bbox=d.bbox, class_label=d.class_label)
                              for d in dets]
        all_gt += shift(gt.detections)
        all_pred += shift(pred.detections)
        all_dc += shift(gt.dontcare)
        offset += max((d.frame for d in gt.detections + pred.detections), default=0) + 1

    if not reports:
        _fail("no sequence could be evaluated", code=1)

    aggregate = clear_mot(all_gt, all_pred, iou_min=iou_min, dontcare=all_dc)

    header = f"{'sequence':<16}{'MOTA':>8}{'MOTP':>8}{'MODA':>8}{'MODP':>8}" \
             f"{'P':>8}{'R':>8}{'F1':>8}{'FP':>6}{'FN':>6}{'IDSW':>6}"
    click.echo(header)
    for name, r in list(reports.items()) + [("ALL", aggregate)]:
        click.echo(f"{name:<16}{r.mota:>8.2f}{r.motp:>8.2f}{r.moda:>8.2f}"
                   f"{r.modp:>8.2f}{r.precision:>8.2f}{r.recall:>8.2f}"
                   f"{r.f1:>8.2f}{r.fp:>6}{r.fn:>6}{r.idsw:>6}")

    if json_out:
        doc = {"sequences": {n: r.to_dict() for n, r in reports.items()},
               "aggregate": aggregate.to_dict(),
               "skipped": skipped,
               "iou_min": iou_min}
        Path(json_out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


@main.command("iq-eval")
@click.argument("reference")
@click.argument("test")
@click.option("--json-out", default=None)
def iq_eval(reference, test, json_out):
    """Pixel image-quality metrics (RMSE / PSNR / SSIM) between two images."""
    ref_file = _require_file(reference, "reference image")
    test_file = _require_file(test, "test image")
    ref = imagefiles.load_image(ref_file)
    tst = imagefiles.load_image(test_file)
    try:
        report = image_quality(ref, tst)
    except InvalidParameterError as exc:
        _fail(str(exc))
    psnr = "inf" if report.psnr == float("inf") else f"{report.psnr:.2f}"
    click.echo(f"RMSE {report.rmse:.2f}  PSNR {psnr} dB  SSIM {report.ssim:.4f}")
    if json_out:
        Path(json_out).write_text(json.dumps(report.to_dict(), indent=2) + "\n")


@main.command("mesh-dump")
@click.option("--depth", "depth_path", required=True)
@click.option("--fov", type=float, required=True)
@click.option("--out", "out_path", default="mesh.obj", show_default=True)
@_geometry_options
def mesh_dump(depth_path, fov, out_path, d_min, grid_size, depth_scale,
              smooth_iters, smooth_lambda, depth_quant):
    """Write the sheet mesh for a depth map as an ASCII OBJ."""
    depth_file = _require_file(depth_path, "depth file")
    depth = imagefiles.read_inverse_depth(depth_file, quantization=depth_quant)
    cam = CameraModel(fov_deg=fov, width=depth.width, height=depth.height)
    clamped = clamp_inverse_depth(depth, d_min)
    grid = sample_depth_grid(clamped, grid_size, depth_scale)
    mesh = laplacian_smooth(build_sheet_mesh(grid, cam), smooth_iters, smooth_lambda)
    imagefiles.write_obj(out_path, mesh)
    click.echo(f"wrote {out_path} ({mesh.vertex_count} vertices, "
               f"{mesh.triangle_count} triangles)")


if __name__ == "__main__":
    main()
