"""Distortion diagnostics: where does the cover move each pixel's view.

The distortion at a pixel is measured against a frontal plane: trace
the pixel through the cover to the plane ``z = depth``, project that
landing point with the bare pinhole model, and report the pixel
displacement. Because the cover only displaces and redirects the ray
before it leaves the outer wall, each displacement component is an
affine function of inverse depth; the curve fit exposes the slope and
intercept of that relation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import pinhole_project, pixel_to_ray
from .errors import DataError
from .observations import ObservationSet
from .raytrace import (
    STAGE_NAMES,
    SceneParams,
    TraceStatus,
    _raise_for_status,
    _trace_batch,
    trace_pixels,
)


def _trace_to_frontal_plane(params: SceneParams, pixels: np.ndarray, depth: float):
    """Landing points of pixel rays on the plane z = depth.

    Returns (points, status); rays that leave the cover moving away from
    the plane are flagged as board-plane misses.
    """
    dirs = pixel_to_ray(params.intrinsics, pixels)
    batch = _trace_batch(params.cone, params.surface, np.zeros_like(dirs), dirs)
    status = batch.status.copy()
    rz = batch.dir_out[..., 2]
    t = (depth - batch.x_outer[..., 2]) / np.where(np.abs(rz) > 1e-12, rz, 1.0)
    bad = (np.abs(rz) <= 1e-12) | (t <= 0.0)
    status[bad & (status == TraceStatus.OK)] = TraceStatus.MISS_BOARD
    points = batch.x_outer + t[..., None] * batch.dir_out
    return points, status


def distortion_vector(params: SceneParams, pixel, depth: float) -> np.ndarray:
    """Pixel displacement induced by the cover for a scene plane at ``depth``.

    The returned vector is ``(undistorted pixel) - (actual pixel)``: the
    pinhole projection of the point this pixel really sees, minus the
    pixel itself. Raises a stage-tagged error if the ray fails.
    """
    if depth <= 0.0:
        raise DataError("depth must be positive")
    pixel = np.asarray(pixel, dtype=np.float64)
    points, status = _trace_to_frontal_plane(params, pixel[None, :], float(depth))
    _raise_for_status(int(status[0]))
    return pinhole_project(params.intrinsics, points[0]) - pixel


@dataclass(frozen=True)
class DistortionField:
    """Displacement vectors sampled on a regular pixel grid."""

    depth: float
    stride: int
    pixels: np.ndarray  # (M, 2)
    deltas: np.ndarray  # (M, 2), NaN where the trace failed
    status: np.ndarray  # (M,) TraceStatus values


def distortion_field(params: SceneParams, depth: float, stride: int = 40) -> DistortionField:
    """Distortion vectors over the sensor at one scene depth.

    Samples start at pixel (0, 0) and step by ``stride`` in both axes,
    so doubling the stride yields a subset of the sample points.
    """
    if stride < 1:
        raise DataError("stride must be a positive pixel count")
    if depth <= 0.0:
        raise DataError("depth must be positive")
    xs = np.arange(0.0, params.intrinsics.width, float(stride))
    ys = np.arange(0.0, params.intrinsics.height, float(stride))
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pixels = np.column_stack([gx.ravel(), gy.ravel()])
    points, status = _trace_to_frontal_plane(params, pixels, float(depth))
    ok = status == TraceStatus.OK
    deltas = np.full_like(pixels, np.nan)
    if np.any(ok):
        deltas[ok] = pinhole_project(params.intrinsics, points[ok]) - pixels[ok]
    return DistortionField(
        depth=float(depth), stride=int(stride), pixels=pixels, deltas=deltas, status=status
    )


def write_distortion_csv(field: DistortionField, path) -> None:
    """Write one row per sample: px,py,dpx,dpy,norm,depth,status."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["px", "py", "dpx", "dpy", "norm", "depth", "status"])
        for pixel, delta, st in zip(field.pixels, field.deltas, field.status):
            st = TraceStatus(st)
            name = "ok" if st == TraceStatus.OK else STAGE_NAMES[st]
            norm = float(np.hypot(delta[0], delta[1]))
            writer.writerow(
                [
                    repr(float(pixel[0])),
                    repr(float(pixel[1])),
                    repr(float(delta[0])),
                    repr(float(delta[1])),
                    repr(norm),
                    repr(field.depth),
                    name,
                ]
            )


@dataclass(frozen=True)
class DepthCurve:
    """Distortion of one pixel as a function of inverse depth.

    ``slope`` and ``intercept`` are per-component coefficients of the
    affine fit ``delta = slope * (1/depth) + intercept``;
    ``r_squared`` pools both components.
    """

    pixel: np.ndarray
    inv_depths: np.ndarray
    deltas: np.ndarray  # (N, 2)
    slope: np.ndarray  # (2,)
    intercept: np.ndarray  # (2,)
    r_squared: float

    @property
    def slope_norm(self) -> float:
        return float(np.hypot(self.slope[0], self.slope[1]))


def distortion_vs_inverse_depth(
    params: SceneParams,
    pixel,
    inv_depth_range: tuple[float, float] = (1.0 / 1.5, 1.0 / 0.3),
    n_samples: int = 25,
) -> DepthCurve:
    """Sample one pixel's distortion across depths and fit the affine law.

    The ray is traced through the cover once; only the plane intersection
    varies with depth.
    """
    lo, hi = float(inv_depth_range[0]), float(inv_depth_range[1])
    if not 0.0 < lo < hi:
        raise DataError("inverse depth range must be positive and increasing")
    if n_samples < 2:
        raise DataError("need at least two depth samples")
    pixel = np.asarray(pixel, dtype=np.float64)
    dirs = pixel_to_ray(params.intrinsics, pixel[None, :])
    batch = _trace_batch(params.cone, params.surface, np.zeros_like(dirs), dirs)
    _raise_for_status(int(batch.status[0]))
    x_o = batch.x_outer[0]
    r_o = batch.dir_out[0]
    if r_o[2] <= 1e-12:
        raise DataError("ray leaves the cover moving away from the scene")

    inv_depths = np.linspace(lo, hi, n_samples)
    depths = 1.0 / inv_depths
    t = (depths - x_o[2]) / r_o[2]
    points = x_o[None, :] + t[:, None] * r_o[None, :]
    deltas = pinhole_project(params.intrinsics, points) - pixel

    slope = np.empty(2)
    intercept = np.empty(2)
    ss_res = 0.0
    ss_tot = 0.0
    for c in range(2):
        coeffs = np.polyfit(inv_depths, deltas[:, c], 1)
        slope[c], intercept[c] = coeffs
        pred = np.polyval(coeffs, inv_depths)
        ss_res += float(np.sum((deltas[:, c] - pred) ** 2))
        ss_tot += float(np.sum((deltas[:, c] - np.mean(deltas[:, c])) ** 2))
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return DepthCurve(
        pixel=pixel,
        inv_depths=inv_depths,
        deltas=deltas,
        slope=slope,
        intercept=intercept,
        r_squared=float(r_squared),
    )


def corner_error_scatter(params: SceneParams, observations: ObservationSet) -> dict:
    """Per-corner residuals under the full model, grouped by image.

    Returns a JSON-ready dict: for every corner its pixel, grid index,
    board-plane residual (meters) and trace status; failed corners have
    null residuals. Includes the pooled RMSE over traced corners (cm).
    """
    images = []
    total = 0.0
    count = 0
    for im in sorted(observations.images, key=lambda x: x.image_index):
        batch = trace_pixels(params, im.image_index, im.pixels)
        rho = batch.board_local - im.board_local()
        corners = []
        for k in range(im.n_corners):
            st = TraceStatus(batch.status[k])
            entry = {
                "i": int(im.grid_ij[k, 0]),
                "j": int(im.grid_ij[k, 1]),
                "px": float(im.pixels[k, 0]),
                "py": float(im.pixels[k, 1]),
                "status": "ok" if st == TraceStatus.OK else STAGE_NAMES[st],
            }
            if st == TraceStatus.OK:
                entry["dmx_m"] = float(rho[k, 0])
                entry["dmy_m"] = float(rho[k, 1])
                entry["err_m"] = float(np.hypot(rho[k, 0], rho[k, 1]))
                total += float(rho[k, 0] ** 2 + rho[k, 1] ** 2)
                count += 1
            else:
                entry["dmx_m"] = None
                entry["dmy_m"] = None
                entry["err_m"] = None
            corners.append(entry)
        images.append({"index": im.image_index, "corners": corners})
    if count == 0:
        raise DataError("no corner completed the trace; nothing to report")
    return {
        "images": images,
        "rmse_cm": float(np.sqrt(total / count) * 100.0),
        "n_corners": count,
    }
