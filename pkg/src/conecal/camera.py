"""Pinhole camera: intrinsics, pixel rays, and projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels; the camera center is the frame origin."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ConfigurationError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ConfigurationError("sensor size must be positive")


def pixel_to_ray(intrinsics: CameraIntrinsics, pixels) -> np.ndarray:
    """Unit direction of the back-projected pixel ray.

    Accepts ``(2,)`` or ``(..., 2)`` pixel coordinates; the ray origin is
    always the camera center.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    d = np.stack(
        [
            (pixels[..., 0] - intrinsics.cx) / intrinsics.fx,
            (pixels[..., 1] - intrinsics.cy) / intrinsics.fy,
            np.ones(pixels.shape[:-1]),
        ],
        axis=-1,
    )
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def pinhole_project(intrinsics: CameraIntrinsics, points) -> np.ndarray:
    """Project camera-frame points to pixels; points must lie in front."""
    points = np.asarray(points, dtype=np.float64)
    z = points[..., 2]
    if np.any(z <= 0.0):
        raise DataError("cannot project points at or behind the camera plane")
    return np.stack(
        [
            intrinsics.fx * points[..., 0] / z + intrinsics.cx,
            intrinsics.fy * points[..., 1] / z + intrinsics.cy,
        ],
        axis=-1,
    )
