"""Directions on the unit sphere: azimuth/elevation angles, unit vectors, distances.

Conventions used throughout the package:

* azimuth in radians, wrapped to [-pi, pi); 0 points along +x, pi/2 along +y
* elevation in radians in [-pi/2, pi/2]; +pi/2 points along +z
* unit vector (cos el cos az, cos el sin az, sin el)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_azimuth(angle):
    """Wrap an angle (scalar or array, radians) into [-pi, pi)."""
    return np.mod(angle + np.pi, TWO_PI) - np.pi


@dataclass(frozen=True)
class DoaAngle:
    """A direction of arrival. Azimuth is wrapped on construction; elevation
    must already lie in [-pi/2, pi/2] (up to roundoff, which is clamped)."""

    azimuth: float
    elevation: float

    def __post_init__(self):
        az = float(self.azimuth)
        el = float(self.elevation)
        if not (math.isfinite(az) and math.isfinite(el)):
            raise ValueError(f"non-finite DoA angles: az={az}, el={el}")
        if abs(el) > math.pi / 2 + 1e-9:
            raise ValueError(f"elevation {el} outside [-pi/2, pi/2]")
        object.__setattr__(self, "azimuth", float(wrap_azimuth(az)))
        object.__setattr__(self, "elevation", min(max(el, -math.pi / 2), math.pi / 2))

    @classmethod
    def from_degrees(cls, azimuth_deg: float, elevation_deg: float) -> "DoaAngle":
        return cls(math.radians(azimuth_deg), math.radians(elevation_deg))

    @classmethod
    def from_vector(cls, v) -> "DoaAngle":
        """Direction of an arbitrary non-zero 3-vector."""
        x, y, z = (float(c) for c in v)
        norm = math.sqrt(x * x + y * y + z * z)
        if norm == 0.0 or not math.isfinite(norm):
            raise ValueError("cannot derive a direction from a zero or non-finite vector")
        return cls(math.atan2(y, x), math.asin(min(max(z / norm, -1.0), 1.0)))

    def to_vector(self) -> np.ndarray:
        ce = math.cos(self.elevation)
        return np.array(
            [ce * math.cos(self.azimuth), ce * math.sin(self.azimuth), math.sin(self.elevation)]
        )

    def rotated(self, delta_azimuth: float) -> "DoaAngle":
        return DoaAngle(self.azimuth + delta_azimuth, self.elevation)


def unit_vectors(azimuth, elevation) -> np.ndarray:
    """Stack unit vectors for arrays of angles; output shape (..., 3)."""
    az = np.asarray(azimuth, dtype=float)
    el = np.asarray(elevation, dtype=float)
    ce = np.cos(el)
    return np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el)], axis=-1)


def angles_from_vectors(v) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`unit_vectors`; accepts non-normalized input."""
    v = np.asarray(v, dtype=float)
    az = np.arctan2(v[..., 1], v[..., 0])
    el = np.arctan2(v[..., 2], np.hypot(v[..., 0], v[..., 1]))
    return wrap_azimuth(az), el


def great_circle_deg(az1, el1, az2, el2) -> np.ndarray:
    """Great-circle distance in degrees between angle pairs given in radians.

    arccos(sin el1 sin el2 + cos el1 cos el2 cos(az1-az2)) with the argument
    clamped to [-1, 1]; exactly equal angle pairs short-circuit to 0 (the
    arccos path would return ~1e-8 deg of pure roundoff there).
    """
    az1, el1, az2, el2 = (np.asarray(a, dtype=float) for a in (az1, el1, az2, el2))
    cosd = np.sin(el1) * np.sin(el2) + np.cos(el1) * np.cos(el2) * np.cos(az1 - az2)
    dist = np.degrees(np.arccos(np.clip(cosd, -1.0, 1.0)))
    return np.where((az1 == az2) & (el1 == el2), 0.0, dist)


def angular_distance(a: DoaAngle, b: DoaAngle) -> float:
    """Great-circle distance between two DoAs, in degrees."""
    return float(great_circle_deg(a.azimuth, a.elevation, b.azimuth, b.elevation))


def lerp_angles(a: DoaAngle, b: DoaAngle, fraction: float) -> DoaAngle:
    """Linear interpolation; azimuth follows the shorter way around the circle."""
    daz = wrap_azimuth(b.azimuth - a.azimuth)
    return DoaAngle(
        a.azimuth + fraction * float(daz),
        a.elevation + fraction * (b.elevation - a.elevation),
    )
