"""Shadow refinement and relit-image compositing.

The original pipeline runs pretrained refinement/relighting networks at these
stages; here they are replaced by documented classical operators (distance-
dependent penumbra blur, a multiplicative per-channel shadow model, and a
reflectance-ratio reshade) behind a pluggable refiner interface so an external
stage can be swapped in without code changes.
"""

from __future__ import annotations

import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import distance_transform_edt, gaussian_filter

from .errors import InvalidParameterError, StageError
from .geometry import (
    CameraModel,
    InverseDepthMap,
    build_sheet_mesh,
    clamp_inverse_depth,
    classify_sky,
    compute_normals,
    laplacian_smooth,
    sample_depth_grid,
)
from .lighting import LightingCondition, sun_direction
from .raycast import (
    BufferSet,
    ShadowMap,
    build_accelerator,
    render_normal_map,
    render_reflectance,
    render_shadow_map,
)

DEFAULT_K = 0.4
K_CLAMP = (0.15, 0.95)
MIN_COHORT_PIXELS = 100
GAIN_CLAMP = (0.5, 2.0)
_SIGMA_BINS = 8


@dataclass
class ShadowAttenuation:
    """Per-channel ratio of shadowed to lit surface brightness."""

    k: np.ndarray                 # (3,) in (0, 1]
    fallback: bool = False        # true when cohorts were too small to estimate

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=np.float64).reshape(3)
        if np.any(self.k <= 0) or np.any(self.k > 1):
            raise InvalidParameterError(f"k channels must be in (0, 1], got {self.k}")


@dataclass
class RelightParams:
    """Tunable knobs for the full single-frame relighting pipeline."""

    d_min: float = 100.0
    grid_size: int = 129
    depth_scale: float = 1000.0
    smooth_iterations: int = 10
    smooth_lambda: float = 0.5
    face_drop_ratio: float | None = None
    exclude_sky_occluders: bool = True
    shadow_bias: float = 1e-3
    penumbra_scale: float = 0.02
    penumbra_max_sigma: float = 20.0
    ambient: float = 0.2
    reshade_strength: float = 0.3
    default_k: float = DEFAULT_K
    recolor_sky: bool = True
    refiner_executable: str | None = None


def refine_shadow_map(coarse: ShadowMap, penumbra_scale: float,
                      max_sigma: float = 20.0) -> np.ndarray:
    """Soften a binary shadow map into attenuation values in [0, 1].

    Penumbra width grows with occluder distance: each pixel is blurred with a
    Gaussian of sigma = penumbra_scale * occluder_distance (clamped to
    [0, max_sigma]); unoccluded pixels take the sigma of their nearest
    occluded pixel so the penumbra extends symmetrically across the edge.
    Contact shadows (distance -> 0) stay sharp.
    """
    if penumbra_scale < 0:
        raise InvalidParameterError("penumbra_scale must be >= 0")

    mask = coarse.occluded.astype(np.float64)
    if penumbra_scale == 0 or not coarse.occluded.any():
        return mask

    sigma = np.clip(penumbra_scale * coarse.occluder_distance, 0.0, max_sigma)
    sigma[~coarse.occluded] = 0.0
    # Unoccluded pixels inherit the sigma of the nearest shadowed pixel.
    idx = distance_transform_edt(~coarse.occluded, return_distances=False,
                                 return_indices=True)
    sigma = sigma[tuple(idx)]

    levels = np.unique(sigma[coarse.occluded])
    if len(levels) > _SIGMA_BINS:
        qs = np.linspace(0, 1, _SIGMA_BINS + 1)
        edges = np.quantile(levels, qs)
        centers = (edges[:-1] + edges[1:]) / 2.0
        which = np.clip(np.searchsorted(edges, sigma, side="right") - 1, 0, _SIGMA_BINS - 1)
        levels = centers
    else:
        which = np.searchsorted(levels, sigma)

    out = np.empty_like(mask)
    for i, s in enumerate(levels):
        sel = which == i
        if not sel.any():
            continue
        blurred = gaussian_filter(mask, sigma=s) if s > 0 else mask
        out[sel] = blurred[sel]
    return np.clip(out, 0.0, 1.0)


def estimate_attenuation(image: np.ndarray, refined_src: np.ndarray,
                         sky_mask: np.ndarray | None = None,
                         default_k: float = DEFAULT_K) -> ShadowAttenuation:
    """Per-channel shadowed/lit brightness ratio from the source shadow map.

    Uses median pixel values of the clearly-shadowed (s > 0.9) and clearly-lit
    (s < 0.1) non-sky cohorts; falls back to ``default_k`` when either cohort
    has fewer than 100 pixels.
    """
    valid = np.ones(refined_src.shape, dtype=bool)
    if sky_mask is not None:
        valid &= ~sky_mask
    shadowed = valid & (refined_src > 0.9)
    lit = valid & (refined_src < 0.1)

    if shadowed.sum() < MIN_COHORT_PIXELS or lit.sum() < MIN_COHORT_PIXELS:
        return ShadowAttenuation(k=np.full(3, default_k), fallback=True)

    med_shadow = np.median(image[shadowed], axis=0)
    med_lit = np.median(image[lit], axis=0)
    if np.any(med_lit <= 1e-6):
        return ShadowAttenuation(k=np.full(3, default_k), fallback=True)
    k = np.clip(med_shadow / med_lit, K_CLAMP[0], K_CLAMP[1])
    return ShadowAttenuation(k=k)


def remove_shadows(image: np.ndarray, refined_src: np.ndarray,
                   k: ShadowAttenuation) -> np.ndarray:
    """Undo multiplicative shadowing: out = in / (1 - s * (1 - k))."""
    s = refined_src[..., np.newaxis]
    factor = 1.0 - s * (1.0 - k.k)
    return np.clip(image / factor, 0.0, 1.0)


def insert_shadows(image: np.ndarray, refined_tgt: np.ndarray,
                   k: ShadowAttenuation) -> np.ndarray:
    """Apply multiplicative shadowing: out = in * (1 - s * (1 - k))."""
    s = refined_tgt[..., np.newaxis]
    factor = 1.0 - s * (1.0 - k.k)
    return np.clip(image * factor, 0.0, 1.0)


def reshade(image: np.ndarray, reflectance_src: np.ndarray,
            reflectance_tgt: np.ndarray, ambient: float,
            strength: float) -> np.ndarray:
    """Scale brightness by the target/source reflectance ratio.

    The ratio is blended toward 1 by ``1 - strength`` and clamped to a
    conservative gain range so direction changes shift shading without
    blowing out the frame.
    """
    if not 0.0 <= strength <= 1.0:
        raise InvalidParameterError("strength must be in [0, 1]")
    if ambient <= 0:
        raise InvalidParameterError("ambient must be positive")
    ratio = (reflectance_tgt + ambient) / (reflectance_src + ambient)
    gain = np.clip(1.0 + strength * (ratio - 1.0), GAIN_CLAMP[0], GAIN_CLAMP[1])
    return np.clip(image * gain[..., np.newaxis], 0.0, 1.0)


def recolor_sky(image: np.ndarray, sky_mask: np.ndarray,
                cond: LightingCondition, alpha: float = 0.85) -> np.ndarray:
    """Replace sky pixels with a zenith-to-horizon vertical gradient.

    The gradient runs from the zenith color at the top row to a 40%-lightened
    horizon tint at the bottom, alpha-blended over the original so cloud
    texture survives.
    """
    if sky_mask.shape != image.shape[:2]:
        raise InvalidParameterError("sky mask resolution must match the image")
    if not sky_mask.any():
        return image.copy()

    h = image.shape[0]
    zenith = np.asarray(cond.sky_zenith_color)
    horizon = zenith + 0.4 * (1.0 - zenith)
    tau = (np.arange(h) / max(h - 1, 1))[:, np.newaxis, np.newaxis]
    gradient = np.broadcast_to(zenith * (1 - tau) + horizon * tau,
                               image.shape)
    out = image.copy()
    out[sky_mask] = alpha * gradient[sky_mask] + (1 - alpha) * image[sky_mask]
    return out


class ExternalRefiner:
    """File-contract wrapper for a plug-in shadow refinement stage.

    The executable is invoked as
    ``<exe> --in <coarse.png> --buffers <dir> --out <refined.png>`` and must
    exit 0 after writing the refined map as a grayscale PNG (0 = lit,
    255 = full shadow).
    """

    def __init__(self, executable: str):
        self.executable = executable

    def __call__(self, coarse: ShadowMap, buffers: BufferSet) -> np.ndarray:
        from . import imagefiles

        with tempfile.TemporaryDirectory(prefix="relightkit-refine-") as td:
            tdir = Path(td)
            coarse_path = tdir / "coarse.png"
            out_path = tdir / "refined.png"
            bdir = tdir / "buffers"
            bdir.mkdir()
            imagefiles.save_gray(coarse_path, coarse.occluded.astype(np.float64))
            imagefiles.save_image(bdir / "shadow_rgb.png", coarse.occluder_rgb)
            imagefiles.save_normal_map(bdir / "normal.png", buffers.normal_map)
            imagefiles.save_gray(bdir / "reflectance.png", buffers.reflectance_map)
            proc = subprocess.run(
                [self.executable, "--in", str(coarse_path),
                 "--buffers", str(bdir), "--out", str(out_path)],
                capture_output=True, text=True)
            if proc.returncode != 0:
                raise StageError("refine", f"external refiner failed: {proc.stderr.strip()}")
            if not out_path.exists():
                raise StageError("refine", "external refiner wrote no output")
            return imagefiles.load_gray(out_path)


@dataclass
class RelitFrame:
    """Output of a single-frame relight: the image plus debugging buffers."""

    image: np.ndarray              # (H, W, 3) float in [0, 1]
    buffers: BufferSet
    sky_mask: np.ndarray           # (H, W) bool, full resolution
    attenuation: ShadowAttenuation

    def to_uint8(self) -> np.ndarray:
        return np.clip(np.round(self.image * 255.0), 0, 255).astype(np.uint8)


class FrameRelighter:
    """Per-frame relighting with the geometry and source pass computed once.

    Splitting construction from :meth:`relight` lets several target lighting
    variations share the mesh, accelerator and source shadow work.
    """

    def __init__(self, image: np.ndarray, depth: InverseDepthMap,
                 cam: CameraModel, src_cond: LightingCondition,
                 params: RelightParams | None = None):
        params = params or RelightParams()
        self.params = params
        self.cam = cam
        self.src_cond = src_cond
        if image.shape[:2] != (depth.height, depth.width):
            raise InvalidParameterError("image and depth dimensions differ")
        if (cam.width, cam.height) != (depth.width, depth.height):
            raise InvalidParameterError("camera and depth dimensions differ")
        self.image = np.asarray(image, dtype=np.float64)

        self._refiner = None
        if params.refiner_executable:
            self._refiner = ExternalRefiner(params.refiner_executable)

        def stage(name, fn, *args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(name, str(exc)) from exc

        clamped = stage("clamp", clamp_inverse_depth, depth, params.d_min)
        self.sky_mask = stage("sky", classify_sky, clamped)
        grid = stage("sample", sample_depth_grid, clamped,
                     params.grid_size, params.depth_scale)
        mesh = stage("mesh", build_sheet_mesh, grid, cam)
        mesh = stage("smooth", laplacian_smooth, mesh,
                     params.smooth_iterations, params.smooth_lambda)
        self.mesh = stage("normals", compute_normals, mesh)
        self.accel = stage("accel", build_accelerator, self.mesh,
                           exclude_sky_faces=params.exclude_sky_occluders,
                           face_drop_ratio=params.face_drop_ratio)

        self.normal_map = stage("normal_map", render_normal_map, self.mesh, cam)
        src_dir = sun_direction(src_cond)
        self.reflectance_src = stage("reflectance", render_reflectance,
                                     self.normal_map, src_dir)
        self.shadow_src = stage("shadow_src", render_shadow_map, self.image,
                                self.mesh, self.accel, cam, src_dir,
                                bias=params.shadow_bias)
        self.refined_src = stage("refine_src", self._refine, self.shadow_src)
        self.attenuation = stage("attenuation", estimate_attenuation, self.image,
                                 self.refined_src, sky_mask=self.sky_mask,
                                 default_k=params.default_k)
        self.unshadowed = stage("remove", remove_shadows, self.image,
                                self.refined_src, self.attenuation)

    def _refine(self, coarse: ShadowMap) -> np.ndarray:
        if self._refiner is not None:
            buffers = BufferSet(normal_map=self.normal_map,
                                reflectance_map=getattr(self, "reflectance_src",
                                                        np.zeros(coarse.occluded.shape)))
            return self._refiner(coarse, buffers)
        return refine_shadow_map(coarse, self.params.penumbra_scale,
                                 max_sigma=self.params.penumbra_max_sigma)

    def relight(self, tgt_cond: LightingCondition) -> RelitFrame:
        """Produce one relit variant for a target lighting condition."""
        p = self.params

        def stage(name, fn, *args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(name, str(exc)) from exc

        tgt_dir = sun_direction(tgt_cond)
        reflectance_tgt = stage("reflectance", render_reflectance,
                                self.normal_map, tgt_dir)
        shadow_tgt = stage("shadow_tgt", render_shadow_map, self.image,
                           self.mesh, self.accel, self.cam, tgt_dir,
                           bias=p.shadow_bias)
        refined_tgt = stage("refine_tgt", self._refine, shadow_tgt)

        out = stage("reshade", reshade, self.unshadowed, self.reflectance_src,
                    reflectance_tgt, p.ambient, p.reshade_strength)
        out = stage("insert", insert_shadows, out, refined_tgt, self.attenuation)
        if p.recolor_sky:
            out = stage("recolor_sky", recolor_sky, out, self.sky_mask, tgt_cond)

        buffers = BufferSet(
            normal_map=self.normal_map,
            reflectance_map=self.reflectance_src,
            refined_src=self.refined_src,
            refined_tgt=refined_tgt,
            shadow_src=self.shadow_src,
            shadow_tgt=shadow_tgt,
        )
        return RelitFrame(image=out, buffers=buffers, sky_mask=self.sky_mask,
                          attenuation=self.attenuation)


def relight_frame(image: np.ndarray, depth: InverseDepthMap, cam: CameraModel,
                  src_cond: LightingCondition, tgt_cond: LightingCondition,
                  params: RelightParams | None = None) -> RelitFrame:
    """End-to-end single-frame relight (geometry, shadow passes, compositing)."""
    return FrameRelighter(image, depth, cam, src_cond, params=params).relight(tgt_cond)
