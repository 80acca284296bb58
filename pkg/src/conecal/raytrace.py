"""Ray tracing through the double-cone cover.

A camera ray meets the inner wall, refracts into the glass, meets the
outer wall (intersection computed against the perfect cone; the
irregularity field enters through the outer normal only), refracts into
the surrounding medium and continues to the checkerboard plane. Scalar
entry points raise stage-tagged errors; the batched paths used by the
calibration loop carry per-ray status codes instead so failed rays can
be excluded and reported deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .camera import CameraIntrinsics, pixel_to_ray
from .errors import (
    ConfigurationError,
    DataError,
    MissError,
    SingularSurfaceError,
    TotalInternalReflectionError,
)
from .geometry import (
    ConeGeometry,
    RbfSurface,
    Which,
    outer_surface_normal,
)

_T_MIN = 1e-12  # smallest accepted ray parameter: keeps self-hits out


class TraceStatus(IntEnum):
    """Per-ray outcome of the batched trace."""

    OK = 0
    MISS_INNER = 1
    TIR_INNER = 2
    MISS_OUTER = 3
    TIR_OUTER = 4
    MISS_BOARD = 5
    SINGULAR = 6


STAGE_NAMES = {
    TraceStatus.MISS_INNER: "inner-intersection",
    TraceStatus.TIR_INNER: "inner-refraction",
    TraceStatus.MISS_OUTER: "outer-intersection",
    TraceStatus.TIR_OUTER: "outer-refraction",
    TraceStatus.MISS_BOARD: "board-intersection",
    TraceStatus.SINGULAR: "surface-normal",
}


@dataclass(frozen=True)
class Ray:
    """Half-line with a unit direction."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        origin = np.array(self.origin, dtype=np.float64)
        direction = np.array(self.direction, dtype=np.float64)
        if origin.shape != (3,) or direction.shape != (3,):
            raise ConfigurationError("ray origin and direction must be 3-vectors")
        norm = np.linalg.norm(direction)
        if norm < 1e-12:
            raise ConfigurationError("ray direction must be nonzero")
        direction = direction / norm
        origin.flags.writeable = False
        direction.flags.writeable = False
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)


@dataclass(frozen=True)
class BoardPose:
    """Checkerboard pose: board frame to camera frame.

    Columns of ``rotation`` are the board's x-axis, y-axis and plane
    normal expressed in camera coordinates; ``translation`` is the board
    center. Corner ``(i, j)`` (1-based) sits at board-local
    ``((i - (n+1)/2) * square_size, (j - (n+1)/2) * square_size)``.
    """

    rotation: np.ndarray
    translation: np.ndarray
    square_size: float
    corners_per_side: int

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64)
        trans = np.array(self.translation, dtype=np.float64)
        if rot.shape != (3, 3) or trans.shape != (3,):
            raise ConfigurationError("pose needs a 3x3 rotation and a 3-vector translation")
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9) or np.linalg.det(rot) < 0.0:
            raise ConfigurationError("rotation must be orthonormal with determinant +1")
        if self.square_size <= 0.0:
            raise ConfigurationError("square_size must be positive")
        if self.corners_per_side < 2:
            raise ConfigurationError("corners_per_side must be at least 2")
        rot.flags.writeable = False
        trans.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)
        object.__setattr__(self, "corners_per_side", int(self.corners_per_side))

    @property
    def normal(self) -> np.ndarray:
        return self.rotation[:, 2]

    def board_to_world(self, xy) -> np.ndarray:
        """Camera-frame position of board-local planar coordinates."""
        xy = np.asarray(xy, dtype=np.float64)
        return (
            self.translation
            + xy[..., 0, None] * self.rotation[:, 0]
            + xy[..., 1, None] * self.rotation[:, 1]
        )

    def corner_indices(self) -> np.ndarray:
        """All (i, j) corner indices, 1-based, row-major, shape (n^2, 2)."""
        n = self.corners_per_side
        i, j = np.meshgrid(np.arange(1, n + 1), np.arange(1, n + 1), indexing="ij")
        return np.column_stack([i.ravel(), j.ravel()])

    def corner_board_coords(self, ij=None) -> np.ndarray:
        """Board-local coordinates of corners; all of them when ij is None."""
        if ij is None:
            ij = self.corner_indices()
        ij = np.asarray(ij, dtype=np.float64)
        mid = (self.corners_per_side + 1) / 2.0
        return (ij - mid) * self.square_size


@dataclass(frozen=True)
class SceneParams:
    """Everything the forward model needs: camera, cover, field, poses."""

    intrinsics: CameraIntrinsics
    cone: ConeGeometry
    surface: RbfSurface
    poses: tuple[BoardPose, ...]

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        lo, hi = self.surface.patch.s1_range
        if hi > self.cone.height + 1e-12:
            raise ConfigurationError(
                f"surface patch extends above the cone slice ({hi} > {self.cone.height})"
            )
        del lo

    def with_surface(self, surface: RbfSurface) -> "SceneParams":
        return SceneParams(self.intrinsics, self.cone, surface, self.poses)

    def with_poses(self, poses) -> "SceneParams":
        return SceneParams(self.intrinsics, self.cone, self.surface, tuple(poses))

    def pose(self, image_index: int) -> BoardPose:
        try:
            return self.poses[image_index]
        except IndexError:
            raise DataError(f"no pose for image index {image_index}") from None


# ---------------------------------------------------------------------------
# refraction


def _refract_batch(d: np.ndarray, n: np.ndarray, eta: float):
    """Vector refraction with automatic normal orientation.

    Returns (refracted unit directions, ok mask); ``ok`` is False where
    the incidence is beyond the critical angle. The tangential component
    is scaled by ``eta`` and the result is unit-norm by construction.
    """
    cos_i = -np.sum(d * n, axis=-1)
    n = np.where(cos_i[..., None] < 0.0, -n, n)
    cos_i = np.abs(cos_i)
    k = 1.0 - eta * eta * (1.0 - cos_i * cos_i)
    ok = k >= 0.0
    k_safe = np.where(ok, k, 0.0)
    t = eta * d + (eta * cos_i - np.sqrt(k_safe))[..., None] * n
    return t, ok


def refract(direction, normal, eta_ratio: float) -> np.ndarray:
    """Refract a unit direction at a surface with unit normal.

    ``eta_ratio`` is the incident-side index divided by the transmitted
    side index. The normal may point to either side; it is flipped to
    face the incident ray. Raises
    :class:`TotalInternalReflectionError` beyond the critical angle.
    """
    d = np.asarray(direction, dtype=np.float64)
    n = np.asarray(normal, dtype=np.float64)
    t, ok = _refract_batch(d, n, float(eta_ratio))
    if not np.all(ok):
        raise TotalInternalReflectionError(
            "incidence beyond the critical angle", stage="refraction"
        )
    return t


# ---------------------------------------------------------------------------
# intersections


def _intersect_cone_batch(cone: ConeGeometry, origins: np.ndarray, dirs: np.ndarray, which: Which):
    """Smallest positive ray parameter hitting the requested wall.

    Solves the quadratic of the wall's supporting cone (the outer wall
    uses its virtual apex) and keeps roots inside the shared height band.
    Returns (t, hit mask); t is +inf where there is no hit.
    """
    ax, ay, az = cone.apex
    w = cone.tan_half_angle
    apex_v_y = cone.apex_y(which)

    ox = origins[..., 0] - ax
    oz = origins[..., 2] - az
    ydiff = apex_v_y - origins[..., 1]
    dx, dy, dz = dirs[..., 0], dirs[..., 1], dirs[..., 2]

    a = dx * dx + dz * dz - w * w * dy * dy
    b = 2.0 * (ox * dx + oz * dz + w * w * ydiff * dy)
    c = ox * ox + oz * oz - w * w * ydiff * ydiff

    with np.errstate(divide="ignore", invalid="ignore"):
        disc = b * b - 4.0 * a * c
        sqrt_disc = np.sqrt(np.maximum(disc, 0.0))
        q = -0.5 * (b + np.copysign(sqrt_disc, b))
        linear = np.abs(a) < 1e-14
        t1 = np.where(linear, -c / np.where(np.abs(b) < 1e-300, np.nan, b), q / np.where(a == 0.0, np.nan, a))
        t2 = np.where(linear, np.inf, c / np.where(q == 0.0, np.nan, q))
    # grazing contact counts as a miss
    usable = np.where(linear, np.abs(b) >= 1e-300, disc > 1e-14)

    candidates = np.stack([t1, t2], axis=-1)
    y_hit = origins[..., 1, None] + candidates * dy[..., None]
    s1 = ay - y_hit
    valid = (
        usable[..., None]
        & np.isfinite(candidates)
        & (candidates > _T_MIN)
        & (s1 >= -1e-12)
        & (s1 <= cone.height + 1e-12)
    )
    t = np.min(np.where(valid, candidates, np.inf), axis=-1)
    return t, np.isfinite(t)


def intersect_cone(cone: ConeGeometry, ray: Ray, which: Which):
    """Intersection of a ray with one wall slice.

    Returns ``(point, s)`` with ``s`` the cone coordinates of the hit, or
    ``None`` when the ray misses the slice (including grazing contact).
    """
    t, hit = _intersect_cone_batch(cone, ray.origin[None, :], ray.direction[None, :], which)
    if not hit[0]:
        return None
    point = ray.origin + t[0] * ray.direction
    s = _cone_coords_unchecked(cone, point[None, :])[0]
    return point, s


def _cone_coords_unchecked(cone: ConeGeometry, x: np.ndarray) -> np.ndarray:
    """Cone coordinates without the height-band check (batch internal)."""
    ax, ay, az = cone.apex
    s1 = np.clip(ay - x[..., 1], 0.0, cone.height)
    s2 = np.arctan2(x[..., 0] - ax, x[..., 2] - az)
    return np.stack([s1, s2], axis=-1)


def _intersect_board_batch(pose: BoardPose, origins: np.ndarray, dirs: np.ndarray):
    """Ray parameter of the board-plane hit; (t, hit mask)."""
    n = pose.normal
    denom = np.sum(dirs * n, axis=-1)
    ok = np.abs(denom) > 1e-12
    denom_safe = np.where(ok, denom, 1.0)
    t = np.sum((pose.translation - origins) * n, axis=-1) / denom_safe
    hit = ok & (t > _T_MIN)
    return np.where(hit, t, np.inf), hit


def intersect_board(pose: BoardPose, ray: Ray):
    """Board-plane intersection point, or ``None`` for parallel/behind."""
    t, hit = _intersect_board_batch(pose, ray.origin[None, :], ray.direction[None, :])
    if not hit[0]:
        return None
    return ray.origin + t[0] * ray.direction


def world_to_board_local(pose: BoardPose, x, tol: float = 1e-9) -> np.ndarray:
    """Planar board coordinates of an on-plane camera-frame point."""
    x = np.asarray(x, dtype=np.float64)
    rel = x - pose.translation
    off_plane = np.abs(np.sum(rel * pose.normal, axis=-1))
    if np.any(off_plane > tol):
        raise DataError(
            f"point lies {np.max(off_plane):.3g} m off the board plane (tolerance {tol:g})"
        )
    return np.stack(
        [np.sum(rel * pose.rotation[:, 0], axis=-1), np.sum(rel * pose.rotation[:, 1], axis=-1)],
        axis=-1,
    )


# ---------------------------------------------------------------------------
# trace


@dataclass
class TraceBatch:
    """Arrays describing each ray's path through the cover.

    Rays with ``status != OK`` carry placeholder values from the failing
    stage onward and must be masked by the caller.
    """

    ray_dir: np.ndarray  # (..., 3) unit direction leaving the camera
    x_inner: np.ndarray  # (..., 3) inner-wall hit
    dir_glass: np.ndarray  # (..., 3) unit direction inside the glass
    x_outer: np.ndarray  # (..., 3) outer-wall hit (perfect cone)
    s_outer: np.ndarray  # (..., 2) cone coordinates of the outer hit
    n_outer: np.ndarray  # (..., 3) outward unit normal incl. irregularity
    dir_out: np.ndarray  # (..., 3) unit direction after exit
    status: np.ndarray  # (...,) TraceStatus values
    t_board: np.ndarray | None = None  # (...,) set by trace_pixels
    x_board: np.ndarray | None = None  # (..., 3) board-plane hit
    board_local: np.ndarray | None = None  # (..., 2) board coordinates

    @property
    def ok(self) -> np.ndarray:
        return self.status == TraceStatus.OK


def _trace_batch(
    cone: ConeGeometry, surface: RbfSurface | None, origins: np.ndarray, dirs: np.ndarray
) -> TraceBatch:
    """Vectorized two-refraction trace from inside the cover."""
    status = np.full(dirs.shape[:-1], TraceStatus.OK, dtype=np.int64)

    t_i, hit_i = _intersect_cone_batch(cone, origins, dirs, "inner")
    status[~hit_i] = TraceStatus.MISS_INNER
    t_i = np.where(hit_i, t_i, 1.0)
    x_i = origins + t_i[..., None] * dirs
    s_i = _cone_coords_unchecked(cone, x_i)

    near_apex = (s_i[..., 0] < 1e-12) & (status == TraceStatus.OK)
    status[near_apex] = TraceStatus.SINGULAR
    s_i_safe = np.where(near_apex[..., None], [cone.height / 2, 0.0], s_i)

    # inner wall: perfect cone, normal toward the axis
    cos_a = np.cos(cone.half_angle)
    sin_a = np.sin(cone.half_angle)
    n_i = -np.stack(
        [
            np.sin(s_i_safe[..., 1]) * cos_a,
            np.full(s_i_safe.shape[:-1], sin_a),
            np.cos(s_i_safe[..., 1]) * cos_a,
        ],
        axis=-1,
    )
    eta_in = cone.eta_outside / cone.eta_inside
    d_glass, ok_in = _refract_batch(dirs, n_i, eta_in)
    status[(~ok_in) & (status == TraceStatus.OK)] = TraceStatus.TIR_INNER

    t_o, hit_o = _intersect_cone_batch(cone, x_i, d_glass, "outer")
    miss_o = (~hit_o) & (status == TraceStatus.OK)
    status[miss_o] = TraceStatus.MISS_OUTER
    t_o = np.where(hit_o, t_o, 1.0)
    x_o = x_i + t_o[..., None] * d_glass
    s_o = _cone_coords_unchecked(cone, x_o)
    s_o_safe = np.where((status != TraceStatus.OK)[..., None], [cone.height / 2, 0.0], s_o)

    n_o = outer_surface_normal(cone, surface, s_o_safe)
    eta_out = cone.eta_inside / cone.eta_outside
    d_out, ok_out = _refract_batch(d_glass, n_o, eta_out)
    status[(~ok_out) & (status == TraceStatus.OK)] = TraceStatus.TIR_OUTER

    return TraceBatch(
        ray_dir=dirs,
        x_inner=x_i,
        dir_glass=d_glass,
        x_outer=x_o,
        s_outer=s_o_safe,
        n_outer=n_o,
        dir_out=d_out,
        status=status,
    )


def _raise_for_status(status: int) -> None:
    status = TraceStatus(status)
    if status == TraceStatus.OK:
        return
    stage = STAGE_NAMES[status]
    if status in (TraceStatus.MISS_INNER, TraceStatus.MISS_OUTER, TraceStatus.MISS_BOARD):
        raise MissError(f"ray misses the surface at stage {stage}", stage=stage)
    if status in (TraceStatus.TIR_INNER, TraceStatus.TIR_OUTER):
        raise TotalInternalReflectionError(
            f"total internal reflection at stage {stage}", stage=stage
        )
    raise SingularSurfaceError(f"undefined surface normal at stage {stage}")


def trace_through_cover(params: SceneParams, ray: Ray) -> Ray:
    """Trace one ray through both walls; returns the outgoing ray.

    Raises a stage-tagged error when the ray misses a wall slice, hits
    the apex, or undergoes total internal reflection.
    """
    batch = _trace_batch(
        params.cone, params.surface, ray.origin[None, :], ray.direction[None, :]
    )
    _raise_for_status(int(batch.status[0]))
    return Ray(origin=batch.x_outer[0], direction=batch.dir_out[0])


def trace_pixels(params: SceneParams, image_index: int, pixels) -> TraceBatch:
    """Batched pixel-to-board trace keeping every intermediate quantity.

    The returned :class:`TraceBatch` includes the board-plane hit; the
    calibration gradients are assembled from these intermediates.
    """
    pose = params.pose(image_index)
    pixels = np.asarray(pixels, dtype=np.float64)
    dirs = pixel_to_ray(params.intrinsics, pixels)
    origins = np.zeros_like(dirs)
    batch = _trace_batch(params.cone, params.surface, origins, dirs)

    t_b, hit_b = _intersect_board_batch(pose, batch.x_outer, batch.dir_out)
    batch.status[(~hit_b) & (batch.status == TraceStatus.OK)] = TraceStatus.MISS_BOARD
    t_b = np.where(hit_b, t_b, 1.0)
    x_t = batch.x_outer + t_b[..., None] * batch.dir_out
    rel = x_t - pose.translation
    local = np.stack(
        [np.sum(rel * pose.rotation[:, 0], axis=-1), np.sum(rel * pose.rotation[:, 1], axis=-1)],
        axis=-1,
    )
    batch.t_board = t_b
    batch.x_board = x_t
    batch.board_local = local
    return batch


def raycast_pixels(params: SceneParams, image_index: int, pixels):
    """Batched pixel-to-board raycast under the full cover model.

    Returns ``(board_local, status)`` where ``board_local`` has shape
    ``(..., 2)`` (meters; placeholder values where ``status != OK``).
    """
    batch = trace_pixels(params, image_index, pixels)
    return batch.board_local, batch.status


def raycast(params: SceneParams, image_index: int, pixel) -> np.ndarray:
    """Board-local landing point of one pixel's ray, shape (2,), meters."""
    pixel = np.asarray(pixel, dtype=np.float64)
    local, status = raycast_pixels(params, image_index, pixel[None, :])
    _raise_for_status(int(status[0]))
    return local[0]


def pinhole_raycast(intrinsics: CameraIntrinsics, pose: BoardPose, pixels):
    """Board-local landing points ignoring the cover (straight rays).

    This is the no-distortion reference model; returns
    ``(board_local, hit mask)``.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    dirs = pixel_to_ray(intrinsics, pixels)
    origins = np.zeros_like(dirs)
    t, hit = _intersect_board_batch(pose, origins, dirs)
    t = np.where(hit, t, 1.0)
    x_t = origins + t[..., None] * dirs
    rel = x_t - pose.translation
    local = np.stack(
        [np.sum(rel * pose.rotation[:, 0], axis=-1), np.sum(rel * pose.rotation[:, 1], axis=-1)],
        axis=-1,
    )
    return local, hit
