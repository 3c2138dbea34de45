"""Batch dataset augmentation: config, ingestion, and the deterministic driver.

Augmentation output is a pure function of the config file and the input
dataset: per-frame lighting variations are sampled from seeds derived from
(config seed, sequence id, frame index), frames are processed by a worker
pool, files are written atomically, and the per-sequence manifest is
assembled in frame order regardless of completion order.
"""

from __future__ import annotations

import hashlib
import json
import logging
import multiprocessing
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import yaml

from . import imagefiles
from .errors import InvalidParameterError
from .geometry import CameraModel
from .lighting import (
    DEFAULT_AZIMUTH_RANGE,
    DEFAULT_ELEVATION_RANGE,
    LightingCondition,
    sample_conditions,
)
from .relight import FrameRelighter, RelightParams

log = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1
WORKERS_ENV_VAR = "RELIGHTKIT_WORKERS"

# Documented defaults for KITTI-like noon captures; operator-tunable.
DEFAULT_SOURCE_LIGHT = {"sun_azimuth_deg": 0.0, "sun_elevation_deg": 60.0}


@dataclass
class FramePair:
    stem: str
    image_path: Path
    depth_path: Path


@dataclass
class AugmentConfig:
    """Validated contents of an augmentation config file."""

    dataset_root: Path
    output_root: Path
    sequences: list
    fov_deg: float = 90.0
    sequence_fov: dict = field(default_factory=dict)
    source_light: LightingCondition = None
    azimuth_range: tuple = DEFAULT_AZIMUTH_RANGE
    elevation_range: tuple = DEFAULT_ELEVATION_RANGE
    seed: int = 0
    variants_per_frame: int = 4
    relight_params: RelightParams = field(default_factory=RelightParams)
    depth_quantization: float = imagefiles.DEFAULT_DEPTH_QUANTIZATION
    dump_buffers: bool = False
    image_template: str = "image_02/{seq}"
    depth_template: str = "depth/{seq}"

    def __post_init__(self):
        if self.source_light is None:
            self.source_light = LightingCondition(**DEFAULT_SOURCE_LIGHT)
        if self.variants_per_frame < 1:
            raise InvalidParameterError("variants_per_frame must be >= 1")
        if not self.sequences:
            raise InvalidParameterError("config lists no sequences")
        self.dataset_root = Path(self.dataset_root)
        self.output_root = Path(self.output_root)
        if not self.dataset_root.is_dir():
            raise InvalidParameterError(f"dataset root does not exist: {self.dataset_root}")
        for seq in self.sequences:
            for tpl in (self.image_template, self.depth_template):
                p = self.dataset_root / tpl.format(seq=seq)
                if not p.is_dir():
                    raise InvalidParameterError(f"missing sequence directory: {p}")

    def fov_for(self, seq: str) -> float:
        return float(self.sequence_fov.get(seq, self.fov_deg))

    def parameter_hash(self) -> str:
        blob = dict(
            fov_deg=self.fov_deg,
            sequence_fov=self.sequence_fov,
            source_light=self.source_light.to_dict(),
            azimuth_range=list(self.azimuth_range),
            elevation_range=list(self.elevation_range),
            seed=self.seed,
            variants_per_frame=self.variants_per_frame,
            relight=asdict(self.relight_params),
            depth_quantization=self.depth_quantization,
        )
        return hashlib.sha256(
            json.dumps(blob, sort_keys=True).encode("utf-8")).hexdigest()

    @classmethod
    def from_yaml(cls, path) -> "AugmentConfig":
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "AugmentConfig":
        geometry = raw.get("geometry", {})
        relight = raw.get("relight", {})
        params = RelightParams(**{**geometry, **relight})
        src = raw.get("source_light")
        ranges = raw.get("target_ranges", {})
        return cls(
            dataset_root=raw["dataset_root"],
            output_root=raw["output_root"],
            sequences=[str(s) for s in raw.get("sequences", [])],
            fov_deg=raw.get("fov_deg", 90.0),
            sequence_fov={str(k): v for k, v in raw.get("sequence_fov", {}).items()},
            source_light=LightingCondition.from_dict(src) if src else None,
            azimuth_range=tuple(ranges.get("azimuth", DEFAULT_AZIMUTH_RANGE)),
            elevation_range=tuple(ranges.get("elevation", DEFAULT_ELEVATION_RANGE)),
            seed=int(raw.get("seed", 0)),
            variants_per_frame=int(raw.get("variants_per_frame", 4)),
            relight_params=params,
            depth_quantization=float(raw.get("depth_quantization",
                                             imagefiles.DEFAULT_DEPTH_QUANTIZATION)),
            dump_buffers=bool(raw.get("dump_buffers", False)),
            image_template=raw.get("image_template", "image_02/{seq}"),
            depth_template=raw.get("depth_template", "depth/{seq}"),
        )


def ingest_sequence(root, sequence_id: str,
                    image_template: str = "image_02/{seq}",
                    depth_template: str = "depth/{seq}") -> list:
    """Ordered (image, depth) frame pairs for one sequence.

    Frames are sorted by numeric stem; an image without a depth partner is an
    error naming the frame.
    """
    root = Path(root)
    image_dir = root / image_template.format(seq=sequence_id)
    depth_dir = root / depth_template.format(seq=sequence_id)
    if not image_dir.is_dir():
        raise InvalidParameterError(f"missing image directory: {image_dir}")

    depth_by_stem = {}
    if depth_dir.is_dir():
        for p in depth_dir.iterdir():
            if p.suffix.lower() in (".png", ".pfm"):
                depth_by_stem.setdefault(p.stem, p)

    pairs = []
    orphans = []
    images = [p for p in image_dir.iterdir() if p.suffix.lower() == ".png"]
    for img in sorted(images, key=lambda p: (int(p.stem) if p.stem.isdigit() else 0, p.stem)):
        depth = depth_by_stem.get(img.stem)
        if depth is None:
            orphans.append(img.stem)
        else:
            pairs.append(FramePair(stem=img.stem, image_path=img, depth_path=depth))
    if orphans:
        raise InvalidParameterError(
            f"frames without depth partners in {sequence_id}: {', '.join(orphans)}")
    return pairs


def frame_seed(base_seed: int, sequence_id: str, frame_index: int) -> int:
    """Stable per-frame sampling seed derived from the config seed."""
    ss = np.random.SeedSequence([base_seed, zlib.crc32(sequence_id.encode()), frame_index])
    return int(ss.generate_state(1)[0])


def frame_conditions(config: AugmentConfig, sequence_id: str,
                     frame_index: int) -> list:
    return sample_conditions(
        seed=frame_seed(config.seed, sequence_id, frame_index),
        n=config.variants_per_frame,
        azimuth_range=config.azimuth_range,
        elevation_range=config.elevation_range,
    )


def _relight_one_frame(config: AugmentConfig, sequence_id: str,
                       frame_index: int, pair: FramePair) -> dict:
    """Worker: relight one frame's variants and write outputs atomically."""
    image = imagefiles.load_image(pair.image_path)
    depth = imagefiles.read_inverse_depth(pair.depth_path,
                                          quantization=config.depth_quantization)
    cam = CameraModel(fov_deg=config.fov_for(sequence_id),
                      width=depth.width, height=depth.height)
    relighter = FrameRelighter(image, depth, cam, config.source_light,
                               params=config.relight_params)
    conditions = frame_conditions(config, sequence_id, frame_index)

    out_dir = config.output_root / sequence_id
    out_dir.mkdir(parents=True, exist_ok=True)
    variants = []
    for i, cond in enumerate(conditions):
        result = relighter.relight(cond)
        out_name = f"{pair.stem}_relit_{i:03d}.png"
        imagefiles.save_image_atomic(out_dir / out_name, result.image)
        if config.dump_buffers:
            imagefiles.dump_buffers(out_dir / f"{pair.stem}_buffers", result, i)
        entry = cond.to_dict()
        entry["index"] = i
        entry["output"] = out_name
        variants.append(entry)
    return {"frame": pair.stem,
            "seed": frame_seed(config.seed, sequence_id, frame_index),
            "variants": variants}


def _frame_task(args):
    config_dict, sequence_id, frame_index, stem, image_path, depth_path = args
    config = AugmentConfig.from_dict(config_dict)
    pair = FramePair(stem=stem, image_path=Path(image_path), depth_path=Path(depth_path))
    return sequence_id, frame_index, _relight_one_frame(config, sequence_id,
                                                        frame_index, pair)


def _config_as_dict(config: AugmentConfig) -> dict:
    params = asdict(config.relight_params)
    return {
        "dataset_root": str(config.dataset_root),
        "output_root": str(config.output_root),
        "sequences": config.sequences,
        "fov_deg": config.fov_deg,
        "sequence_fov": config.sequence_fov,
        "source_light": config.source_light.to_dict(),
        "target_ranges": {"azimuth": list(config.azimuth_range),
                          "elevation": list(config.elevation_range)},
        "seed": config.seed,
        "variants_per_frame": config.variants_per_frame,
        "geometry": {k: params[k] for k in
                     ("d_min", "grid_size", "depth_scale", "smooth_iterations",
                      "smooth_lambda", "face_drop_ratio", "exclude_sky_occluders",
                      "shadow_bias")},
        "relight": {k: params[k] for k in
                    ("penumbra_scale", "penumbra_max_sigma", "ambient",
                     "reshade_strength", "default_k", "recolor_sky",
                     "refiner_executable")},
        "depth_quantization": config.depth_quantization,
        "dump_buffers": config.dump_buffers,
        "image_template": config.image_template,
        "depth_template": config.depth_template,
    }


def resolve_workers(workers: int | None) -> int:
    if workers is not None:
        return max(1, workers)
    env = os.environ.get(WORKERS_ENV_VAR)
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


@dataclass
class AugmentResult:
    frames_done: int
    frames_failed: int
    failures: list  # (sequence, frame stem, message)


def run_augment(config: AugmentConfig, workers: int | None = None) -> AugmentResult:
    """Relight every frame of every configured sequence.

    Frame failures are logged and skipped; the manifest records successful
    frames in frame order.
    """
    workers = resolve_workers(workers)
    config_dict = _config_as_dict(config)
    param_hash = config.parameter_hash()

    tasks = []
    for seq in config.sequences:
        pairs = ingest_sequence(config.dataset_root, seq,
                                image_template=config.image_template,
                                depth_template=config.depth_template)
        for idx, pair in enumerate(pairs):
            tasks.append((config_dict, seq, idx, pair.stem,
                          str(pair.image_path), str(pair.depth_path)))

    results: dict = {}
    failures = []

    if workers == 1:
        iterator = map(_frame_task_safe, tasks)
    else:
        # Spawned workers avoid inheriting compiled-kernel thread state that
        # is not fork safe.
        pool = ProcessPoolExecutor(max_workers=workers,
                                   mp_context=multiprocessing.get_context("spawn"))
        iterator = pool.map(_frame_task_safe, tasks)

    for outcome in iterator:
        seq, idx, entry, error = outcome
        if error is not None:
            stem = entry
            failures.append((seq, stem, error))
            log.error("frame %s/%s failed: %s", seq, stem, error)
        else:
            results.setdefault(seq, {})[idx] = entry

    if workers > 1:
        pool.shutdown()

    for seq in config.sequences:
        seq_frames = results.get(seq, {})
        manifest = {
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "sequence": seq,
            "seed": config.seed,
            "parameter_hash": param_hash,
            "frames": [seq_frames[i] for i in sorted(seq_frames)],
        }
        out_dir = config.output_root / seq
        out_dir.mkdir(parents=True, exist_ok=True)
        tmp = out_dir / "manifest.json.tmp"
        tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, out_dir / "manifest.json")

    done = sum(len(v) for v in results.values())
    return AugmentResult(frames_done=done, frames_failed=len(failures),
                         failures=failures)


def _frame_task_safe(args):
    seq, idx, stem = args[1], args[2], args[3]
    try:
        seq, idx, entry = _frame_task(args)
        return seq, idx, entry, None
    except Exception as exc:  # frame failures must not abort the batch
        return seq, idx, stem, f"{type(exc).__name__}: {exc}"
