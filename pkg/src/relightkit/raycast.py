"""Ray casting against the sheet mesh: BVH acceleration, shadow maps, buffers.

The accelerator is a flattened median-split BVH traversed by numba kernels so
that per-pixel shadow rays stay fast at image resolution. Intersection uses an
inclusive Moller-Trumbore test so rays crossing shared triangle edges cannot
fall through cracks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .errors import BehindCameraError, InvalidParameterError
from .geometry import CameraModel, SheetMesh

_LEAF_SIZE = 4
_BARY_EPS = 1e-9
_DET_EPS = 1e-14


@dataclass
class RayAccelerator:
    """Flattened bounding-volume hierarchy over a fixed triangle set.

    ``node_count[i] == 0`` marks an internal node with children
    ``node_left[i]`` and ``node_right[i]``; leaves store a slice of
    ``tri_order`` starting at ``node_left[i]``.
    """

    nodes_min: np.ndarray   # (N, 3)
    nodes_max: np.ndarray   # (N, 3)
    node_left: np.ndarray   # (N,) int32
    node_right: np.ndarray  # (N,) int32, -1 for leaves
    node_count: np.ndarray  # (N,) int32
    tri_order: np.ndarray   # (T,) int32 permutation into the triangle arrays
    v0: np.ndarray          # (T, 3)
    e1: np.ndarray          # (T, 3)
    e2: np.ndarray          # (T, 3)
    tri_ids: np.ndarray     # (T,) int32 original face ids

    @property
    def triangle_count(self) -> int:
        return self.v0.shape[0]


@dataclass
class Hit:
    t: float
    point: np.ndarray
    triangle_id: int


@dataclass
class ShadowMap:
    """Per-pixel occlusion with the reprojected occluder color.

    ``occluder_rgb`` and ``occluder_distance`` are only meaningful where
    ``occluded`` is true. ``occluder_face`` carries the hit face id (for
    attribution / debugging), -1 where unoccluded.
    """

    occluded: np.ndarray           # (H, W) bool
    occluder_rgb: np.ndarray       # (H, W, 3) float in [0, 1]
    occluder_distance: np.ndarray  # (H, W) float, ray parameter of first hit
    occluder_face: np.ndarray      # (H, W) int32

    @property
    def height(self) -> int:
        return self.occluded.shape[0]

    @property
    def width(self) -> int:
        return self.occluded.shape[1]


@dataclass
class BufferSet:
    """Geometric priors fed to the compositing stage."""

    normal_map: np.ndarray          # (H, W, 3) unit vectors
    reflectance_map: np.ndarray     # (H, W) in [0, 1]
    refined_src: np.ndarray | None = None   # (H, W) attenuation in [0, 1]
    refined_tgt: np.ndarray | None = None
    shadow_src: ShadowMap | None = None
    shadow_tgt: ShadowMap | None = None


def _build_nodes(tris, centroids, indices, nodes, order):
    """Recursive median-split build; returns the index of the created node."""
    lo = tris[indices].min(axis=(0, 1))
    hi = tris[indices].max(axis=(0, 1))
    node_idx = len(nodes)
    # [lo, hi, left, right, count]; leaves keep right = -1 and left = slice start
    nodes.append([lo, hi, 0, -1, 0])

    if len(indices) <= _LEAF_SIZE:
        nodes[node_idx][2] = len(order)
        nodes[node_idx][4] = len(indices)
        order.extend(indices.tolist())
        return node_idx

    axis = int(np.argmax(hi - lo))
    mid = len(indices) // 2
    part = indices[np.argsort(centroids[indices, axis], kind="stable")]
    left = _build_nodes(tris, centroids, part[:mid], nodes, order)
    right = _build_nodes(tris, centroids, part[mid:], nodes, order)
    nodes[node_idx][2] = left
    nodes[node_idx][3] = right
    return node_idx


def accelerator_from_triangles(tris: np.ndarray, ids: np.ndarray | None = None) -> RayAccelerator:
    """Build a BVH over raw triangles, shape (T, 3, 3)."""
    tris = np.ascontiguousarray(tris, dtype=np.float64)
    if tris.ndim != 3 or tris.shape[1:] != (3, 3) or tris.shape[0] == 0:
        raise InvalidParameterError("expected a non-empty (T, 3, 3) triangle array")
    t = tris.shape[0]
    if ids is None:
        ids = np.arange(t, dtype=np.int32)

    centroids = tris.mean(axis=1)
    nodes: list = []
    order: list = []
    _build_nodes(tris, centroids, np.arange(t), nodes, order)

    n = len(nodes)
    nodes_min = np.empty((n, 3))
    nodes_max = np.empty((n, 3))
    node_left = np.empty(n, dtype=np.int32)
    node_right = np.empty(n, dtype=np.int32)
    node_count = np.empty(n, dtype=np.int32)
    for i, (lo, hi, left, right, count) in enumerate(nodes):
        nodes_min[i] = lo
        nodes_max[i] = hi
        node_left[i] = left
        node_right[i] = right
        node_count[i] = count

    return RayAccelerator(
        nodes_min=nodes_min,
        nodes_max=nodes_max,
        node_left=node_left,
        node_right=node_right,
        node_count=node_count,
        tri_order=np.asarray(order, dtype=np.int32),
        v0=np.ascontiguousarray(tris[:, 0]),
        e1=np.ascontiguousarray(tris[:, 1] - tris[:, 0]),
        e2=np.ascontiguousarray(tris[:, 2] - tris[:, 0]),
        tri_ids=np.asarray(ids, dtype=np.int32),
    )


def build_accelerator(
    mesh: SheetMesh,
    exclude_sky_faces: bool = True,
    face_drop_ratio: float | None = None,
) -> RayAccelerator:
    """BVH over a sheet mesh's occluder faces.

    Sky/far-wall faces (all three vertices clamped) are excluded by default so
    the far wall cannot cast a giant false shadow. ``face_drop_ratio``
    optionally drops steep silhouette "rubber wall" faces whose max/min vertex
    depth ratio exceeds the threshold.
    """
    keep = np.ones(mesh.triangle_count, dtype=bool)
    if exclude_sky_faces:
        keep &= ~mesh.sky_faces()
    if face_drop_ratio is not None:
        if face_drop_ratio <= 1.0:
            raise InvalidParameterError("face_drop_ratio must be > 1")
        tz = mesh.flat_vertices()[mesh.faces][:, :, 2]
        keep &= tz.max(axis=1) / tz.min(axis=1) <= face_drop_ratio
    ids = np.nonzero(keep)[0].astype(np.int32)
    if ids.size == 0:
        raise InvalidParameterError("no occluder faces remain after filtering")
    return accelerator_from_triangles(mesh.triangles()[keep], ids=ids)


@njit(cache=True, error_model="numpy")
def _slab_axis(o, d, lo, hi, tmin, tmax):
    # Returns updated (tmin, tmax); axis-parallel rays outside the slab
    # collapse the interval instead of producing inf * 0 NaNs.
    if d != 0.0:
        inv = 1.0 / d
        t0 = (lo - o) * inv
        t1 = (hi - o) * inv
        if t0 > t1:
            t0, t1 = t1, t0
        tmin = max(tmin, t0)
        tmax = min(tmax, t1)
    elif o < lo or o > hi:
        tmin, tmax = 1.0, -1.0
    return tmin, tmax


@njit(cache=True, error_model="numpy")
def _cast_one(ox, oy, oz, dx, dy, dz, t_eps,
              nodes_min, nodes_max, node_left, node_right, node_count,
              tri_order, v0, e1, e2):
    best_t = np.inf
    best_tri = -1

    stack = np.empty(64, dtype=np.int32)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]

        tmin = -np.inf
        tmax = np.inf
        tmin, tmax = _slab_axis(ox, dx, nodes_min[node, 0], nodes_max[node, 0], tmin, tmax)
        tmin, tmax = _slab_axis(oy, dy, nodes_min[node, 1], nodes_max[node, 1], tmin, tmax)
        tmin, tmax = _slab_axis(oz, dz, nodes_min[node, 2], nodes_max[node, 2], tmin, tmax)
        if tmax < tmin or tmax < t_eps or tmin > best_t:
            continue

        count = node_count[node]
        if count == 0:
            stack[top] = node_left[node]
            stack[top + 1] = node_right[node]
            top += 2
            continue

        start = node_left[node]
        for k in range(start, start + count):
            tri = tri_order[k]
            e1x = e1[tri, 0]
            e1y = e1[tri, 1]
            e1z = e1[tri, 2]
            e2x = e2[tri, 0]
            e2y = e2[tri, 1]
            e2z = e2[tri, 2]
            px = dy * e2z - dz * e2y
            py = dz * e2x - dx * e2z
            pz = dx * e2y - dy * e2x
            det = e1x * px + e1y * py + e1z * pz
            if abs(det) < _DET_EPS:
                continue
            inv_det = 1.0 / det
            tvx = ox - v0[tri, 0]
            tvy = oy - v0[tri, 1]
            tvz = oz - v0[tri, 2]
            u = (tvx * px + tvy * py + tvz * pz) * inv_det
            if u < -_BARY_EPS or u > 1.0 + _BARY_EPS:
                continue
            qx = tvy * e1z - tvz * e1y
            qy = tvz * e1x - tvx * e1z
            qz = tvx * e1y - tvy * e1x
            v = (dx * qx + dy * qy + dz * qz) * inv_det
            if v < -_BARY_EPS or u + v > 1.0 + _BARY_EPS:
                continue
            t = (e2x * qx + e2y * qy + e2z * qz) * inv_det
            if t > t_eps and t < best_t:
                best_t = t
                best_tri = tri

    return best_t, best_tri


@njit(parallel=True, cache=True, error_model="numpy")
def _cast_batch(origins, dirs, t_eps,
                nodes_min, nodes_max, node_left, node_right, node_count,
                tri_order, v0, e1, e2, out_t, out_tri):
    n = origins.shape[0]
    for i in prange(n):
        t, tri = _cast_one(
            origins[i, 0], origins[i, 1], origins[i, 2],
            dirs[i, 0], dirs[i, 1], dirs[i, 2], t_eps,
            nodes_min, nodes_max, node_left, node_right, node_count,
            tri_order, v0, e1, e2)
        out_t[i] = t
        out_tri[i] = tri


def cast_rays(origins: np.ndarray, directions: np.ndarray,
              accel: RayAccelerator, t_eps: float = 1e-9):
    """Nearest intersection for a batch of rays.

    Returns ``(t, face_id)`` arrays; misses have ``t = inf`` and id ``-1``.
    Directions may be a single broadcastable vector.
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    directions = np.ascontiguousarray(directions, dtype=np.float64)
    if directions.ndim == 1:
        directions = np.broadcast_to(directions, origins.shape)
    directions = np.ascontiguousarray(directions.reshape(-1, 3))
    if np.any(np.all(directions == 0.0, axis=1)):
        raise InvalidParameterError("ray direction must be non-zero")

    out_t = np.empty(origins.shape[0])
    out_tri = np.empty(origins.shape[0], dtype=np.int32)
    _cast_batch(origins, directions, t_eps,
                accel.nodes_min, accel.nodes_max, accel.node_left,
                accel.node_right, accel.node_count,
                accel.tri_order, accel.v0, accel.e1, accel.e2, out_t, out_tri)
    face = np.where(out_tri >= 0, accel.tri_ids[np.maximum(out_tri, 0)], -1)
    return out_t, face.astype(np.int32)


def intersect(origin, direction, accel: RayAccelerator, t_eps: float = 1e-9) -> Hit | None:
    """Nearest hit of a single ray, or None."""
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    t, face = cast_rays(origin[np.newaxis], direction[np.newaxis], accel, t_eps=t_eps)
    if face[0] < 0:
        return None
    return Hit(t=float(t[0]), point=origin + t[0] * direction, triangle_id=int(face[0]))


def unproject_pixel(pixel, depth: float, cam: CameraModel) -> np.ndarray:
    """Lift a (u, v) pixel at the given depth into camera space."""
    if depth <= 0:
        raise InvalidParameterError(f"depth must be positive, got {depth}")
    u, v = pixel
    ndc_x = 2.0 * (u + 0.5) / cam.width - 1.0
    ndc_y = 1.0 - 2.0 * (v + 0.5) / cam.height
    return np.array([depth * ndc_x * cam.tan_x, depth * ndc_y * cam.tan_y, depth])


def reproject_point(point, cam: CameraModel) -> tuple[float, float]:
    """Project a camera-space point to continuous pixel coordinates."""
    x, y, z = point
    if z <= 0:
        raise BehindCameraError(f"point has z = {z}, cannot project")
    ndc_x = x / (z * cam.tan_x)
    ndc_y = y / (z * cam.tan_y)
    u = (ndc_x + 1.0) / 2.0 * cam.width - 0.5
    v = (1.0 - ndc_y) / 2.0 * cam.height - 0.5
    return u, v


def _pixel_grid_coords(cam: CameraModel, g: int):
    """Grid-space coordinates of every pixel center for sheet interpolation."""
    u = np.arange(cam.width)
    v = np.arange(cam.height)
    ndc_x = 2.0 * (u + 0.5) / cam.width - 1.0
    ndc_y = 1.0 - 2.0 * (v + 0.5) / cam.height
    gx = np.clip((ndc_x + 1.0) / 2.0 * (g - 1), 0.0, g - 1.0)
    gy = np.clip((ndc_y + 1.0) / 2.0 * (g - 1), 0.0, g - 1.0)
    return gx, gy


def interpolate_sheet(values: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Bilinearly interpolate per-vertex grid values to image resolution.

    ``values`` has shape (G, G) or (G, G, C) indexed [row, col] with row 0 at
    the bottom of the image.
    """
    g = values.shape[0]
    gx, gy = _pixel_grid_coords(cam, g)
    x0 = np.clip(np.floor(gx).astype(np.int64), 0, g - 2)
    y0 = np.clip(np.floor(gy).astype(np.int64), 0, g - 2)
    fx = (gx - x0)[np.newaxis, :]
    fy = (gy - y0)[:, np.newaxis]
    if values.ndim == 3:
        fx = fx[..., np.newaxis]
        fy = fy[..., np.newaxis]
    y0c, x0r = y0[:, np.newaxis], x0[np.newaxis, :]
    v00 = values[y0c, x0r]
    v01 = values[y0c, x0r + 1]
    v10 = values[y0c + 1, x0r]
    v11 = values[y0c + 1, x0r + 1]
    return (v00 * (1 - fx) * (1 - fy) + v01 * fx * (1 - fy)
            + v10 * (1 - fx) * fy + v11 * fx * fy)


def surface_points(mesh: SheetMesh, cam: CameraModel) -> np.ndarray:
    """Per-pixel 3D surface point from the interpolated sheet, (H, W, 3)."""
    return interpolate_sheet(mesh.vertices, cam)


def cast_shadow_points(points: np.ndarray, sun_dir: np.ndarray,
                       accel: RayAccelerator, bias: float = 1e-3,
                       t_eps: float = 1e-9):
    """Cast sun rays from surface points with scale-proportional bias.

    Returns (occluded, t, face, hit_points) with shapes matching the leading
    dimensions of ``points``.
    """
    shape = points.shape[:-1]
    pts = points.reshape(-1, 3)
    origins = pts + sun_dir[np.newaxis, :] * (bias * np.abs(pts[:, 2:3]))
    t, face = cast_rays(origins, sun_dir, accel, t_eps=t_eps)
    occluded = face >= 0
    hits = origins + np.where(occluded, t, 0.0)[:, np.newaxis] * sun_dir[np.newaxis, :]
    return (occluded.reshape(shape), np.where(occluded, t, 0.0).reshape(shape),
            face.reshape(shape), hits.reshape(shape + (3,)))


def render_shadow_map(image: np.ndarray, mesh: SheetMesh, accel: RayAccelerator,
                      cam: CameraModel, sun_dir: np.ndarray,
                      bias: float = 1e-3) -> ShadowMap:
    """Ray-cast the sheet toward the sun and record RGB occluder colors.

    ``image`` is the source RGB frame as floats in [0, 1]; occluder colors are
    looked up by reprojecting each intersection point back into it. Hits whose
    reprojection falls outside the frame record neutral gray.
    """
    sun_dir = np.asarray(sun_dir, dtype=np.float64)
    pts = surface_points(mesh, cam)
    occluded, t, face, hits = cast_shadow_points(pts, sun_dir, accel, bias=bias)

    h, w = occluded.shape
    rgb = np.full((h, w, 3), 0.5)
    if occluded.any():
        hp = hits[occluded]
        ndc_x = hp[:, 0] / (hp[:, 2] * cam.tan_x)
        ndc_y = hp[:, 1] / (hp[:, 2] * cam.tan_y)
        u = np.round((ndc_x + 1.0) / 2.0 * cam.width - 0.5).astype(np.int64)
        v = np.round((1.0 - ndc_y) / 2.0 * cam.height - 0.5).astype(np.int64)
        inside = (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height) & (hp[:, 2] > 0)
        colors = np.full((hp.shape[0], 3), 0.5)
        colors[inside] = image[v[inside], u[inside]]
        rgb[occluded] = colors

    return ShadowMap(occluded=occluded, occluder_rgb=rgb,
                     occluder_distance=t, occluder_face=face.astype(np.int32))


def render_normal_map(mesh: SheetMesh, cam: CameraModel) -> np.ndarray:
    """Per-pixel unit normals interpolated from the sheet's vertex normals."""
    if mesh.vertex_normals is None:
        raise InvalidParameterError("mesh normals not computed")
    n = interpolate_sheet(mesh.vertex_normals, cam)
    norm = np.linalg.norm(n, axis=2, keepdims=True)
    bad = norm[..., 0] < 1e-12
    n[bad] = (0.0, 0.0, -1.0)
    norm[bad] = 1.0
    return n / norm


def render_reflectance(normal_map: np.ndarray, sun_dir: np.ndarray) -> np.ndarray:
    """Clamped cosine between surface normals and the sun direction."""
    return np.clip(normal_map @ np.asarray(sun_dir, dtype=np.float64), 0.0, 1.0)
