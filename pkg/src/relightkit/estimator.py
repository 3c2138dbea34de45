"""Scikit-learn-compatible transformer facade over the relighting pipeline.

Lets the relighter slot into sklearn pipelines / grid search for augmentation
experiments: parameters are plain constructor arguments, ``fit`` is stateless,
and ``transform`` maps (image, inverse_depth) samples to relit images.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .geometry import CameraModel, InverseDepthMap
from .lighting import LightingCondition
from .relight import FrameRelighter, RelightParams


class SceneRelighter(BaseEstimator, TransformerMixin):
    """Relight (image, inverse_depth) pairs to a fixed target lighting.

    Each sample is a tuple ``(image, inverse_depth)`` where ``image`` is an
    (H, W, 3) float array in [0, 1] (or uint8) and ``inverse_depth`` an (H, W)
    float array. ``transform`` returns a list of relit float images.
    """

    def __init__(self, fov_deg=90.0,
                 src_azimuth_deg=0.0, src_elevation_deg=60.0,
                 tgt_azimuth_deg=180.0, tgt_elevation_deg=35.0,
                 sky_zenith_color=(0.3, 0.52, 0.82),
                 d_min=100.0, grid_size=129, depth_scale=1000.0,
                 smooth_iterations=10, smooth_lambda=0.5,
                 penumbra_scale=0.02, ambient=0.2, reshade_strength=0.3,
                 default_k=0.4, recolor_sky=True):
        self.fov_deg = fov_deg
        self.src_azimuth_deg = src_azimuth_deg
        self.src_elevation_deg = src_elevation_deg
        self.tgt_azimuth_deg = tgt_azimuth_deg
        self.tgt_elevation_deg = tgt_elevation_deg
        self.sky_zenith_color = sky_zenith_color
        self.d_min = d_min
        self.grid_size = grid_size
        self.depth_scale = depth_scale
        self.smooth_iterations = smooth_iterations
        self.smooth_lambda = smooth_lambda
        self.penumbra_scale = penumbra_scale
        self.ambient = ambient
        self.reshade_strength = reshade_strength
        self.default_k = default_k
        self.recolor_sky = recolor_sky

    def fit(self, X=None, y=None):
        return self

    def _params(self) -> RelightParams:
        return RelightParams(
            d_min=self.d_min, grid_size=self.grid_size,
            depth_scale=self.depth_scale,
            smooth_iterations=self.smooth_iterations,
            smooth_lambda=self.smooth_lambda,
            penumbra_scale=self.penumbra_scale, ambient=self.ambient,
            reshade_strength=self.reshade_strength, default_k=self.default_k,
            recolor_sky=self.recolor_sky,
        )

    def transform(self, X):
        src = LightingCondition(self.src_azimuth_deg, self.src_elevation_deg,
                                ambient=self.ambient)
        tgt = LightingCondition(self.tgt_azimuth_deg, self.tgt_elevation_deg,
                                sky_zenith_color=tuple(self.sky_zenith_color),
                                ambient=self.ambient)
        params = self._params()

        out = []
        for image, inv_depth in X:
            image = np.asarray(image)
            if image.dtype == np.uint8:
                image = image.astype(np.float64) / 255.0
            depth = InverseDepthMap(np.asarray(inv_depth, dtype=np.float64))
            cam = CameraModel(fov_deg=self.fov_deg,
                              width=depth.width, height=depth.height)
            relighter = FrameRelighter(image, depth, cam, src, params=params)
            out.append(relighter.relight(tgt).image)
        return out
