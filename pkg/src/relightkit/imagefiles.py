"""File formats: RGB/gray PNG, 16-bit depth PNG, PFM, OBJ export, buffer dumps."""

from __future__ import annotations

import os
import re
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidParameterError
from .geometry import InverseDepthMap, SheetMesh

DEFAULT_DEPTH_QUANTIZATION = 64.0


def load_image(path) -> np.ndarray:
    """RGB image as float64 in [0, 1], shape (H, W, 3)."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_image(path, image: np.ndarray) -> None:
    """Write a float [0, 1] (or uint8) RGB array as PNG."""
    if image.dtype != np.uint8:
        image = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(image, mode="RGB").save(path, format="PNG")


def save_image_atomic(path, image: np.ndarray) -> None:
    """PNG write via temp file + rename so readers never see partial output."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    save_image(tmp, image)
    os.replace(tmp, path)


def load_gray(path) -> np.ndarray:
    """Grayscale image as float64 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64)
    return arr / 255.0


def save_gray(path, values: np.ndarray) -> None:
    """Write float [0, 1] values as 8-bit grayscale PNG."""
    arr = np.clip(np.round(values * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def read_inverse_depth_png(path, quantization: float = DEFAULT_DEPTH_QUANTIZATION) -> InverseDepthMap:
    """16-bit grayscale PNG holding inverse depth scaled by ``quantization``."""
    if quantization <= 0:
        raise InvalidParameterError("quantization must be positive")
    with Image.open(path) as im:
        if im.mode not in ("I", "I;16", "I;16B", "L"):
            raise InvalidParameterError(f"{path}: expected a grayscale depth PNG, got mode {im.mode}")
        arr = np.asarray(im.convert("I"), dtype=np.float64)
    return InverseDepthMap(arr / quantization)


def write_inverse_depth_png(path, d: InverseDepthMap | np.ndarray,
                            quantization: float = DEFAULT_DEPTH_QUANTIZATION) -> None:
    if quantization <= 0:
        raise InvalidParameterError("quantization must be positive")
    values = d.values if isinstance(d, InverseDepthMap) else np.asarray(d)
    arr = np.clip(np.round(values * quantization), 0, 65535).astype(np.uint16)
    Image.fromarray(arr).save(path)


def read_pfm(path) -> InverseDepthMap:
    """Single-channel PFM (``Pf`` header); negative scale = little endian."""
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header != b"Pf":
            raise InvalidParameterError(f"{path}: not a grayscale PFM (header {header!r})")
        dims = fh.readline().decode("ascii")
        m = re.match(r"^\s*(\d+)\s+(\d+)\s*$", dims)
        if not m:
            raise InvalidParameterError(f"{path}: malformed PFM dimensions {dims!r}")
        width, height = int(m.group(1)), int(m.group(2))
        scale = float(fh.readline().decode("ascii").strip())
        endian = "<" if scale < 0 else ">"
        data = np.frombuffer(fh.read(width * height * 4), dtype=endian + "f4")
        if data.size != width * height:
            raise InvalidParameterError(f"{path}: truncated PFM payload")
    # PFM stores rows bottom-to-top
    arr = data.reshape(height, width)[::-1].astype(np.float64)
    return InverseDepthMap(arr)


def write_pfm(path, d: InverseDepthMap | np.ndarray) -> None:
    values = d.values if isinstance(d, InverseDepthMap) else np.asarray(d)
    height, width = values.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{width} {height}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(values[::-1].astype("<f4").tobytes())


def read_inverse_depth(path, quantization: float = DEFAULT_DEPTH_QUANTIZATION) -> InverseDepthMap:
    """Dispatch on suffix: .pfm or 16-bit .png."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        return read_pfm(path)
    if suffix == ".png":
        return read_inverse_depth_png(path, quantization=quantization)
    raise InvalidParameterError(f"unsupported depth format: {path}")


def write_obj(path, mesh: SheetMesh) -> None:
    """ASCII OBJ export of the sheet mesh (debugging aid)."""
    verts = mesh.flat_vertices()
    with open(path, "w") as fh:
        fh.write("# relightkit sheet mesh\n")
        for v in verts:
            fh.write(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def save_normal_map(path, normal_map: np.ndarray) -> None:
    """Normals encoded as RGB with n * 0.5 + 0.5."""
    save_image(path, normal_map * 0.5 + 0.5)


def save_shadow_map(path, shadow_map) -> None:
    """RGBA PNG: occluder color in RGB, occlusion mask in alpha."""
    rgb = np.clip(np.round(shadow_map.occluder_rgb * 255.0), 0, 255).astype(np.uint8)
    alpha = (shadow_map.occluded * 255).astype(np.uint8)
    rgba = np.dstack([rgb, alpha])
    Image.fromarray(rgba, mode="RGBA").save(path)


def dump_buffers(directory, relit_frame, variant_index: int) -> None:
    """Write the per-frame buffer dump layout used for debugging.

    Layout: normal.png, reflectance.png, shadow_src.png, shadow_tgt_<i>.png,
    refined_src.png, refined_tgt_<i>.png, relit_<i>.png.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    b = relit_frame.buffers
    i = variant_index
    save_normal_map(directory / "normal.png", b.normal_map)
    save_gray(directory / "reflectance.png", b.reflectance_map)
    if b.shadow_src is not None:
        save_shadow_map(directory / "shadow_src.png", b.shadow_src)
    if b.shadow_tgt is not None:
        save_shadow_map(directory / f"shadow_tgt_{i}.png", b.shadow_tgt)
    if b.refined_src is not None:
        save_gray(directory / "refined_src.png", b.refined_src)
    if b.refined_tgt is not None:
        save_gray(directory / f"refined_tgt_{i}.png", b.refined_tgt)
    save_image(directory / f"relit_{i}.png", relit_frame.image)
