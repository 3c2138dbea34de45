"""Depth-to-mesh geometry.

Converts a per-pixel inverse-depth map into a grid-structured 3D "sheet" mesh:
clamp the inverse depth to a floor (far pixels collapse onto a far wall that
doubles as the sky mask), grid-sample it, lift the samples into camera space
with the pinhole tangent mapping, smooth the sheet, and compute vertex normals.

Camera convention: x right, y up, z forward, camera at the origin. Pixel (0, 0)
is the top-left of the image; NDC coordinates are symmetric in [-1, 1] with the
optical axis at (0, 0). Grid row 0 corresponds to the bottom of the image so
that ndc_y is increasing with the row index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import InvalidParameterError


@dataclass
class InverseDepthMap:
    """Relative inverse depth per pixel (larger = nearer), row-major.

    ``clamp_flags`` is populated by :func:`clamp_inverse_depth` and marks
    pixels that were raised to the floor value (sky / far wall).
    """

    values: np.ndarray
    clamp_flags: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise InvalidParameterError("inverse depth must be a 2D array")
        h, w = self.values.shape
        if h < 2 or w < 2:
            raise InvalidParameterError("inverse depth must be at least 2x2")
        if not np.all(np.isfinite(self.values)):
            raise InvalidParameterError("inverse depth contains non-finite values")
        if np.any(self.values < 0):
            raise InvalidParameterError("inverse depth contains negative values")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera with a symmetric field of view and centered principal point."""

    fov_deg: float
    width: int
    height: int
    aspect_correction: bool = False

    def __post_init__(self):
        if not 0.0 < self.fov_deg < 180.0:
            raise InvalidParameterError(f"fov_deg must be in (0, 180), got {self.fov_deg}")
        if self.width < 1 or self.height < 1:
            raise InvalidParameterError("image dimensions must be positive")

    @property
    def tan_half_fov(self) -> float:
        return math.tan(math.radians(self.fov_deg) / 2.0)

    @property
    def tan_x(self) -> float:
        return self.tan_half_fov

    @property
    def tan_y(self) -> float:
        # Same tangent on both axes by default; the correction flag scales the
        # vertical tangent by H/W so non-square images keep square pixels.
        if self.aspect_correction:
            return self.tan_half_fov * self.height / self.width
        return self.tan_half_fov


@dataclass
class DepthGrid:
    """G x G metric depth samples with their NDC sample coordinates."""

    grid_size: int
    z: np.ndarray        # (G, G), indexed [row, col] with row 0 at ndc_y = -1
    ndc_x: np.ndarray    # (G,), strictly increasing over [-1, 1]
    ndc_y: np.ndarray    # (G,), strictly increasing over [-1, 1]
    sky: np.ndarray      # (G, G) bool, true where the source pixel was clamped

    def __post_init__(self):
        if not np.all(np.isfinite(self.z)) or np.any(self.z <= 0):
            raise InvalidParameterError("depth samples must be positive and finite")
        for axis in (self.ndc_x, self.ndc_y):
            if np.any(np.diff(axis) <= 0):
                raise InvalidParameterError("ndc coordinates must be strictly increasing")


@dataclass
class SheetMesh:
    """Grid-topology triangle sheet in camera space with optional normals."""

    grid_size: int
    vertices: np.ndarray               # (G, G, 3)
    faces: np.ndarray                  # (2*(G-1)^2, 3) int indices into the flat grid
    sky_flags: np.ndarray              # (G, G) bool
    vertex_normals: np.ndarray | None = None   # (G, G, 3) unit vectors
    ndc_x: np.ndarray | None = None
    ndc_y: np.ndarray | None = None

    @property
    def vertex_count(self) -> int:
        return self.grid_size * self.grid_size

    @property
    def triangle_count(self) -> int:
        return self.faces.shape[0]

    def flat_vertices(self) -> np.ndarray:
        return self.vertices.reshape(-1, 3)

    def flat_normals(self) -> np.ndarray:
        if self.vertex_normals is None:
            raise InvalidParameterError("normals not computed yet")
        return self.vertex_normals.reshape(-1, 3)

    def triangles(self) -> np.ndarray:
        """Triangle vertex positions, shape (T, 3, 3)."""
        return self.flat_vertices()[self.faces]

    def sky_faces(self) -> np.ndarray:
        """Boolean per face: all three vertices lie on the clamped far wall."""
        flat = self.sky_flags.reshape(-1)
        return flat[self.faces].all(axis=1)


def clamp_inverse_depth(d: InverseDepthMap, d_min: float) -> InverseDepthMap:
    """Raise every inverse-depth value to at least ``d_min``.

    Pixels that were raised form the far wall / sky; they are recorded in the
    result's ``clamp_flags``.
    """
    if d_min <= 0:
        raise InvalidParameterError(f"d_min must be positive, got {d_min}")
    flags = d.values < d_min
    return InverseDepthMap(np.maximum(d.values, d_min), clamp_flags=flags)


def classify_sky(d: InverseDepthMap) -> np.ndarray:
    """Full-resolution sky mask: pixels raised by the inverse-depth clamp."""
    if d.clamp_flags is None:
        raise InvalidParameterError("inverse depth has not been clamped yet")
    return d.clamp_flags.copy()


def _grid_sample_positions(width, height, ndc_x, ndc_y):
    # Pixel-center positions matching the NDC convention, clipped so extreme
    # grid rows/cols sample the outermost pixel centers.
    px = np.clip((ndc_x + 1.0) / 2.0 * width - 0.5, 0.0, width - 1.0)
    py = np.clip((1.0 - ndc_y) / 2.0 * height - 0.5, 0.0, height - 1.0)
    return px, py


def sample_depth_grid(d: InverseDepthMap, grid_size: int, depth_scale: float) -> DepthGrid:
    """Bilinearly sample a clamped inverse-depth map on a G x G grid.

    Sampled inverse depth is converted to metric depth via
    ``z = depth_scale / d``.
    """
    if grid_size < 2:
        raise InvalidParameterError(f"grid_size must be >= 2, got {grid_size}")
    if depth_scale <= 0:
        raise InvalidParameterError(f"depth_scale must be positive, got {depth_scale}")

    g = grid_size
    ndc_x = np.linspace(-1.0, 1.0, g)
    ndc_y = np.linspace(-1.0, 1.0, g)
    px, py = _grid_sample_positions(d.width, d.height, ndc_x, ndc_y)
    cols, rows = np.meshgrid(px, py)
    coords = np.stack([rows.ravel(), cols.ravel()])

    sampled = map_coordinates(d.values, coords, order=1, mode="nearest").reshape(g, g)
    if np.any(sampled <= 0):
        raise RuntimeError("sampled inverse depth is zero; input was not clamped")
    z = depth_scale / sampled

    if d.clamp_flags is not None:
        sky_f = map_coordinates(d.clamp_flags.astype(np.float64), coords,
                                order=1, mode="nearest").reshape(g, g)
        sky = sky_f >= 0.5
    else:
        sky = np.zeros((g, g), dtype=bool)

    return DepthGrid(grid_size=g, z=z, ndc_x=ndc_x, ndc_y=ndc_y, sky=sky)


def _grid_faces(g: int) -> np.ndarray:
    idx = np.arange(g * g).reshape(g, g)
    v00 = idx[:-1, :-1].ravel()
    v01 = idx[:-1, 1:].ravel()
    v10 = idx[1:, :-1].ravel()
    v11 = idx[1:, 1:].ravel()
    # Two triangles per cell, wound so face normals point toward the camera
    # for a fronto-parallel sheet.
    tris = np.empty((2 * (g - 1) ** 2, 3), dtype=np.int64)
    tris[0::2] = np.stack([v00, v10, v11], axis=1)
    tris[1::2] = np.stack([v00, v11, v01], axis=1)
    return tris


def build_sheet_mesh(grid: DepthGrid, cam: CameraModel) -> SheetMesh:
    """Lift the depth grid into camera space with the pinhole tangent mapping."""
    g = grid.grid_size
    xs = grid.ndc_x[np.newaxis, :] * cam.tan_x
    ys = grid.ndc_y[:, np.newaxis] * cam.tan_y
    verts = np.empty((g, g, 3))
    verts[:, :, 0] = grid.z * xs
    verts[:, :, 1] = grid.z * ys
    verts[:, :, 2] = grid.z
    return SheetMesh(
        grid_size=g,
        vertices=verts,
        faces=_grid_faces(g),
        sky_flags=grid.sky.copy(),
        ndc_x=grid.ndc_x.copy(),
        ndc_y=grid.ndc_y.copy(),
    )


def laplacian_smooth(mesh: SheetMesh, iterations: int, lam: float) -> SheetMesh:
    """Umbrella-operator smoothing over the 4-connected grid.

    Interior vertices move toward the mean of their grid neighbors by factor
    ``lam`` per iteration; boundary vertices stay fixed.
    """
    if not 0.0 < lam <= 1.0:
        raise InvalidParameterError(f"lambda must be in (0, 1], got {lam}")
    if iterations < 0:
        raise InvalidParameterError("iterations must be >= 0")

    v = mesh.vertices.copy()
    for _ in range(iterations):
        mean = (v[:-2, 1:-1] + v[2:, 1:-1] + v[1:-1, :-2] + v[1:-1, 2:]) / 4.0
        v[1:-1, 1:-1] += lam * (mean - v[1:-1, 1:-1])
    return SheetMesh(
        grid_size=mesh.grid_size,
        vertices=v,
        faces=mesh.faces,
        sky_flags=mesh.sky_flags,
        vertex_normals=None,
        ndc_x=mesh.ndc_x,
        ndc_y=mesh.ndc_y,
    )


def compute_normals(mesh: SheetMesh) -> SheetMesh:
    """Area-weighted vertex normals, oriented toward the camera."""
    flat = mesh.flat_vertices()
    tris = flat[mesh.faces]
    # Cross product magnitude is proportional to face area, so accumulating
    # raw cross products gives the area weighting for free.
    fn = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])

    acc = np.zeros_like(flat)
    for corner in range(3):
        np.add.at(acc, mesh.faces[:, corner], fn)

    norm = np.linalg.norm(acc, axis=1)
    degenerate = norm < 1e-300
    acc[degenerate] = (0.0, 0.0, -1.0)
    norm[degenerate] = 1.0
    normals = acc / norm[:, np.newaxis]

    # Flip any normal pointing away from the camera (origin): a camera-facing
    # normal has negative dot with the vertex position (z > 0 everywhere).
    away = np.einsum("ij,ij->i", normals, flat) > 0
    normals[away] *= -1.0

    return SheetMesh(
        grid_size=mesh.grid_size,
        vertices=mesh.vertices,
        faces=mesh.faces,
        sky_flags=mesh.sky_flags,
        vertex_normals=normals.reshape(mesh.grid_size, mesh.grid_size, 3),
        ndc_x=mesh.ndc_x,
        ndc_y=mesh.ndc_y,
    )
