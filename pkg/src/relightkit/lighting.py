"""Lighting conditions and deterministic sampling of lighting variations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError

# Small palette of plausible daylight zenith colors (RGB in [0, 1]) sampled
# from when the caller does not pin a sky color.
DAYLIGHT_SKY_PALETTE = (
    (0.18, 0.40, 0.75),   # deep noon blue
    (0.30, 0.52, 0.82),   # mid blue
    (0.45, 0.62, 0.85),   # hazy blue
    (0.62, 0.68, 0.80),   # overcast
    (0.75, 0.60, 0.45),   # late golden
)

DEFAULT_AZIMUTH_RANGE = (0.0, 360.0)
DEFAULT_ELEVATION_RANGE = (15.0, 75.0)


@dataclass(frozen=True)
class LightingCondition:
    """Sun position, sky zenith color and ambient level for one lighting state."""

    sun_azimuth_deg: float
    sun_elevation_deg: float
    sky_zenith_color: tuple = (0.3, 0.52, 0.82)
    ambient: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "sun_azimuth_deg", float(self.sun_azimuth_deg) % 360.0)
        if not 0.0 < self.sun_elevation_deg <= 90.0:
            raise InvalidParameterError(
                f"sun elevation must be in (0, 90], got {self.sun_elevation_deg}")
        color = tuple(float(c) for c in self.sky_zenith_color)
        if len(color) != 3 or any(c < 0 or c > 1 for c in color):
            raise InvalidParameterError(f"sky color must be an RGB triple in [0,1], got {color}")
        object.__setattr__(self, "sky_zenith_color", color)
        if not 0.0 <= self.ambient <= 1.0:
            raise InvalidParameterError(f"ambient must be in [0, 1], got {self.ambient}")

    def to_dict(self) -> dict:
        return {
            "sun_azimuth_deg": self.sun_azimuth_deg,
            "sun_elevation_deg": self.sun_elevation_deg,
            "sky_zenith_color": list(self.sky_zenith_color),
            "ambient": self.ambient,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LightingCondition":
        return cls(
            sun_azimuth_deg=data["sun_azimuth_deg"],
            sun_elevation_deg=data["sun_elevation_deg"],
            sky_zenith_color=tuple(data.get("sky_zenith_color", (0.3, 0.52, 0.82))),
            ambient=data.get("ambient", 0.2),
        )


def sun_direction(cond: LightingCondition) -> np.ndarray:
    """Unit vector from the scene toward the sun, in the camera frame.

    Azimuth 0 points along +z (camera forward), 90 along +x; elevation is
    measured up from the horizon toward +y.
    """
    az = np.radians(cond.sun_azimuth_deg)
    el = np.radians(cond.sun_elevation_deg)
    d = np.array([
        np.sin(az) * np.cos(el),
        np.sin(el),
        np.cos(az) * np.cos(el),
    ])
    return d / np.linalg.norm(d)


def parse_sun(text: str) -> tuple[float, float]:
    """Parse an ``AZ,EL`` string into (azimuth, elevation) degrees."""
    parts = text.split(",")
    if len(parts) != 2:
        raise InvalidParameterError(f"expected AZ,EL, got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError as exc:
        raise InvalidParameterError(f"expected numeric AZ,EL, got {text!r}") from exc


def parse_sky_color(text: str) -> tuple[float, float, float]:
    """Parse ``#RRGGBB`` into an RGB triple in [0, 1]."""
    t = text.lstrip("#")
    if len(t) != 6:
        raise InvalidParameterError(f"expected #RRGGBB, got {text!r}")
    try:
        return tuple(int(t[i:i + 2], 16) / 255.0 for i in (0, 2, 4))
    except ValueError as exc:
        raise InvalidParameterError(f"expected hex color, got {text!r}") from exc


def sample_conditions(
    seed: int,
    n: int,
    azimuth_range: tuple = DEFAULT_AZIMUTH_RANGE,
    elevation_range: tuple = DEFAULT_ELEVATION_RANGE,
    sky_palette: tuple = DAYLIGHT_SKY_PALETTE,
    ambient: float = 0.2,
) -> list[LightingCondition]:
    """Draw ``n`` lighting conditions from a seeded PCG64 generator.

    The generator algorithm is pinned (numpy PCG64) so the same seed yields
    the same sequence on every platform.
    """
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n}")
    az_lo, az_hi = azimuth_range
    el_lo, el_hi = elevation_range
    if az_hi <= az_lo or el_hi <= el_lo:
        raise InvalidParameterError("sampling ranges must be non-empty")
    if el_lo <= 0 or el_hi > 90:
        raise InvalidParameterError("elevation range must lie within (0, 90]")
    if not sky_palette:
        raise InvalidParameterError("sky palette must be non-empty")

    rng = np.random.Generator(np.random.PCG64(seed))
    out = []
    for _ in range(n):
        az = rng.uniform(az_lo, az_hi)
        el = rng.uniform(el_lo, el_hi)
        sky = sky_palette[int(rng.integers(len(sky_palette)))]
        out.append(LightingCondition(
            sun_azimuth_deg=az,
            sun_elevation_deg=el,
            sky_zenith_color=tuple(sky),
            ambient=ambient,
        ))
    return out
