"""Single-image scene relighting toolkit.

Converts an RGB frame plus a precomputed inverse-depth map into a 3D sheet
mesh, ray-casts shadow maps for source and target sun positions, and
composites relit images; includes batch dataset augmentation plus the
CLEAR-MOT and pixel image-quality metric suites used to evaluate it.
"""

from .errors import (
    BehindCameraError,
    InvalidParameterError,
    KittiParseError,
    StageError,
)
from .estimator import SceneRelighter
from .geometry import (
    CameraModel,
    DepthGrid,
    InverseDepthMap,
    SheetMesh,
    build_sheet_mesh,
    clamp_inverse_depth,
    classify_sky,
    compute_normals,
    laplacian_smooth,
    sample_depth_grid,
)
from .lighting import LightingCondition, sample_conditions, sun_direction
from .metrics import (
    Detection,
    IqReport,
    MotReport,
    clear_mot,
    image_quality,
    iou,
    match_frame,
)
from .kitti import parse_kitti_tracking
from .raycast import (
    BufferSet,
    RayAccelerator,
    ShadowMap,
    build_accelerator,
    intersect,
    render_normal_map,
    render_reflectance,
    render_shadow_map,
    reproject_point,
    unproject_pixel,
)
from .relight import (
    FrameRelighter,
    RelightParams,
    RelitFrame,
    ShadowAttenuation,
    estimate_attenuation,
    insert_shadows,
    recolor_sky,
    refine_shadow_map,
    relight_frame,
    remove_shadows,
    reshade,
)
from .pipeline import AugmentConfig, ingest_sequence, run_augment

__version__ = "0.1.0"
