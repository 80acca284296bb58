"""Double-cone cover geometry and the RBF irregularity field.

Conventions used throughout the package:

* Camera frame: origin at the camera center, +z along the optical axis,
  +y pointing down in the image. The cone axis is parallel to +y and the
  cone narrows toward +y, so the apex is the lowest point of the cover.
* Cone coordinates ``s = (s1, s2)``: ``s1`` is the height above the inner
  apex in meters and is shared by both walls (the inner and outer surface
  sample the same height band ``[0, height]``); ``s2`` is the polar angle
  around the axis in ``[-pi, pi]`` with ``s2 = 0`` on the half-plane that
  contains +z. A surface point at ``s`` sits at radius
  ``s1 * tan(half_angle)`` (inner) or ``+ radial_thickness`` (outer) from
  the axis, plus the local irregularity offset on the outer wall.
* The irregularity field is a sum of Gaussian radial basis functions with
  fixed centers on a regular grid over the normalized patch ``[0, 1]^2``
  (boundary included); only the per-center amplitudes (in meters, signed,
  radial) are free parameters, so the field is linear in them.

All functions broadcast over leading axes: ``s`` may be ``(2,)`` or
``(..., 2)``, points ``(3,)`` or ``(..., 3)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np

from .errors import ConfigurationError, OutOfRangeError, SingularSurfaceError

Which = Literal["inner", "outer"]

_EY = np.array([0.0, 1.0, 0.0])


def _as_coords(s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != 2:
        raise ConfigurationError(f"cone coordinates must have a trailing axis of 2, got {s.shape}")
    return s


@dataclass(frozen=True)
class ConeGeometry:
    """Dimensions and optical constants of the double-cone cover.

    Attributes:
        apex: apex of the inner cone in camera coordinates, meters.
        half_angle: opening half-angle in radians, in (0, pi/2).
        height: extent of the wall slice above the apex, meters.
        radial_thickness: horizontal gap between the walls, meters; the
            outer wall radius at height ``s1`` is the inner radius plus
            this constant, which places the (virtual) outer apex
            ``radial_thickness / tan(half_angle)`` below the inner one.
        eta_inside: refractive index of the cover material.
        eta_outside: refractive index of the surrounding medium.
    """

    apex: tuple[float, float, float]
    half_angle: float
    height: float
    radial_thickness: float
    eta_inside: float
    eta_outside: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "apex", tuple(float(c) for c in self.apex))
        if len(self.apex) != 3:
            raise ConfigurationError("apex must be a 3-vector")
        if not 0.0 < self.half_angle < np.pi / 2:
            raise ConfigurationError("half_angle must lie strictly between 0 and pi/2")
        if self.height <= 0.0:
            raise ConfigurationError("height must be positive")
        if self.radial_thickness <= 0.0:
            raise ConfigurationError("radial_thickness must be positive")
        if self.eta_inside <= 0.0 or self.eta_outside <= 0.0:
            raise ConfigurationError("refractive indices must be positive")

    @property
    def tan_half_angle(self) -> float:
        return float(np.tan(self.half_angle))

    @property
    def apex_array(self) -> np.ndarray:
        return np.array(self.apex)

    def apex_y(self, which: Which) -> float:
        """Apex height of the requested wall's supporting cone.

        The outer wall is a cone with the same half-angle whose (virtual)
        apex sits ``radial_thickness / tan(half_angle)`` below the inner
        apex, so that both walls differ by a constant horizontal gap.
        """
        _check_which(which)
        if which == "inner":
            return self.apex[1]
        return self.apex[1] + self.radial_thickness / self.tan_half_angle

    def radius(self, s1, which: Which):
        """Wall radius at height ``s1`` above the inner apex (no field)."""
        _check_which(which)
        r = np.asarray(s1, dtype=np.float64) * self.tan_half_angle
        if which == "outer":
            r = r + self.radial_thickness
        return r


def _check_which(which: str) -> None:
    if which not in ("inner", "outer"):
        raise ConfigurationError(f"unknown cone wall {which!r}, expected 'inner' or 'outer'")


@dataclass(frozen=True)
class RbfPatch:
    """Rectangular patch of the outer wall carrying the irregularity field."""

    s1_range: tuple[float, float]
    s2_range: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "s1_range", (float(self.s1_range[0]), float(self.s1_range[1])))
        object.__setattr__(self, "s2_range", (float(self.s2_range[0]), float(self.s2_range[1])))
        if not self.s1_range[0] < self.s1_range[1]:
            raise ConfigurationError("patch s1_range must be increasing")
        if self.s1_range[0] < 0.0:
            raise ConfigurationError("patch s1_range must start at or above the apex")
        if not self.s2_range[0] < self.s2_range[1]:
            raise ConfigurationError("patch s2_range must be increasing")
        if self.s2_range[0] < -np.pi or self.s2_range[1] > np.pi:
            raise ConfigurationError("patch s2_range must lie within [-pi, pi]")

    @property
    def spans(self) -> np.ndarray:
        return np.array(
            [
                self.s1_range[1] - self.s1_range[0],
                self.s2_range[1] - self.s2_range[0],
            ]
        )

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.s1_range[0], self.s2_range[0]])


def _grid_spacing(n: int) -> float:
    return 1.0 if n == 1 else 1.0 / (n - 1)


@dataclass(frozen=True)
class RbfSurface:
    """Irregularity field: amplitudes on a fixed grid of Gaussian centers.

    ``amplitudes`` has shape ``grid`` = (rows, cols); rows index the
    normalized ``s1`` direction, columns the normalized ``s2`` direction.
    Centers sit on the regular grid over ``[0, 1]^2`` including the
    boundary (a singleton axis centers at 0.5). ``beta`` is the shared
    squared kernel width in normalized units. The value is immutable;
    use :meth:`with_amplitudes` to derive an updated surface.
    """

    patch: RbfPatch
    grid: tuple[int, int]
    amplitudes: np.ndarray = field(repr=False)
    beta: float

    def __post_init__(self):
        object.__setattr__(self, "grid", (int(self.grid[0]), int(self.grid[1])))
        if self.grid[0] < 1 or self.grid[1] < 1:
            raise ConfigurationError("center grid must have at least one row and column")
        amps = np.array(self.amplitudes, dtype=np.float64)
        if amps.shape != self.grid:
            raise ConfigurationError(
                f"amplitudes shape {amps.shape} does not match grid {self.grid}"
            )
        if not np.all(np.isfinite(amps)):
            raise ConfigurationError("amplitudes must be finite")
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "beta", float(self.beta))
        if not self.beta > 0.0:
            raise ConfigurationError("beta must be positive")

    @classmethod
    def flat(cls, patch: RbfPatch, grid: tuple[int, int], beta: float | None = None) -> "RbfSurface":
        """Zero-amplitude surface; beta defaults to the product of the
        normalized center spacings (spacing squared for square grids)."""
        rows, cols = int(grid[0]), int(grid[1])
        if rows < 1 or cols < 1:
            raise ConfigurationError("center grid must have at least one row and column")
        if beta is None:
            beta = _grid_spacing(rows) * _grid_spacing(cols)
        return cls(patch=patch, grid=(rows, cols), amplitudes=np.zeros((rows, cols)), beta=beta)

    def with_amplitudes(self, amplitudes: np.ndarray) -> "RbfSurface":
        return RbfSurface(self.patch, self.grid, amplitudes, self.beta)

    @property
    def n_centers(self) -> int:
        return self.grid[0] * self.grid[1]

    @cached_property
    def centers(self) -> np.ndarray:
        """Normalized center positions, shape (n_centers, 2), row-major."""
        rows, cols = self.grid
        c1 = np.full(rows, 0.5) if rows == 1 else np.arange(rows) / (rows - 1)
        c2 = np.full(cols, 0.5) if cols == 1 else np.arange(cols) / (cols - 1)
        grid1, grid2 = np.meshgrid(c1, c2, indexing="ij")
        centers = np.column_stack([grid1.ravel(), grid2.ravel()])
        centers.flags.writeable = False
        return centers

    @property
    def flat_amplitudes(self) -> np.ndarray:
        return self.amplitudes.ravel()


def normalize_coords(patch: RbfPatch, s) -> np.ndarray:
    """Affine map from cone coordinates into the patch's unit square.

    Points outside the patch map outside ``[0, 1]^2``; nothing clips.
    """
    return (_as_coords(s) - patch.lower) / patch.spans


def denormalize_coords(patch: RbfPatch, s_norm) -> np.ndarray:
    """Inverse of :func:`normalize_coords`."""
    return _as_coords(s_norm) * patch.spans + patch.lower


def rbf_kernel_terms(surface: RbfSurface, s):
    """Per-center kernel values and their cone-coordinate derivatives.

    Returns ``(k, dk_ds1, dk_ds2)``, each of shape ``(..., n_centers)``.
    The field and its derivatives are these matrices contracted with the
    flat amplitude vector; gradients with respect to the amplitudes reuse
    the same matrices directly, which is what makes the fit linear.
    """
    s_norm = normalize_coords(surface.patch, s)
    diff = surface.centers - s_norm[..., None, :]  # (..., n_centers, 2)
    k = np.exp(-np.sum(diff * diff, axis=-1) / (2.0 * surface.beta))
    spans = surface.patch.spans
    dk_ds1 = k * diff[..., 0] / (surface.beta * spans[0])
    dk_ds2 = k * diff[..., 1] / (surface.beta * spans[1])
    return k, dk_ds1, dk_ds2


def rbf_offset(surface: RbfSurface, s):
    """Radial irregularity offset at cone coordinates ``s``, in meters."""
    k, _, _ = rbf_kernel_terms(surface, s)
    out = np.sum(k * surface.flat_amplitudes, axis=-1)
    return float(out) if out.ndim == 0 else out


def cone_point(cone: ConeGeometry, surface: RbfSurface | None, s, which: Which) -> np.ndarray:
    """Cartesian point of the wall at cone coordinates ``s``.

    ``surface=None`` evaluates the perfect cone (zero field).
    """
    _check_which(which)
    s = _as_coords(s)
    r = cone.radius(s[..., 0], which)
    if surface is not None:
        r = r + rbf_offset(surface, s)
    ax, ay, az = cone.apex
    return np.stack(
        [
            ax + r * np.sin(s[..., 1]),
            ay - s[..., 0],
            az + r * np.cos(s[..., 1]),
        ],
        axis=-1,
    )


def cartesian_to_cone_coords(cone: ConeGeometry, x) -> np.ndarray:
    """Cone coordinates of a cartesian point: shared height and polar angle.

    The coordinates depend only on the axis, not on which wall the point
    belongs to. Raises :class:`OutOfRangeError` when the height falls
    outside the ``[0, height]`` slice (tolerance 1e-9 m).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != 3:
        raise ConfigurationError(f"points must have a trailing axis of 3, got {x.shape}")
    ax, ay, az = cone.apex
    s1 = ay - x[..., 1]
    tol = 1e-9
    if np.any(s1 < -tol) or np.any(s1 > cone.height + tol):
        bad = np.sum((s1 < -tol) | (s1 > cone.height + tol))
        raise OutOfRangeError(
            f"{bad} point(s) outside the cone height band [0, {cone.height}] "
            f"(heights range {np.min(s1):.6g}..{np.max(s1):.6g})"
        )
    s1 = np.clip(s1, 0.0, cone.height)
    s2 = np.arctan2(x[..., 0] - ax, x[..., 2] - az)
    return np.stack([s1, s2], axis=-1)


def inner_surface_normal(cone: ConeGeometry, s) -> np.ndarray:
    """Unit normal of the inner wall, oriented toward the axis.

    The inner wall is the perfect cone, so the normal is closed-form and
    independent of ``s1``; the apex itself has no defined normal.
    """
    s = _as_coords(s)
    if np.any(s[..., 0] < 1e-12):
        raise SingularSurfaceError("inner wall normal is undefined at the apex (s1 = 0)")
    cos_a = np.cos(cone.half_angle)
    sin_a = np.sin(cone.half_angle)
    s2 = s[..., 1]
    return np.stack(
        [
            -np.sin(s2) * cos_a,
            -np.full_like(s2, sin_a),
            -np.cos(s2) * cos_a,
        ],
        axis=-1,
    )


def _outer_tangents(cone: ConeGeometry, surface: RbfSurface | None, s):
    """Tangent vectors d(point)/d(s1) and d(point)/d(s2) of the outer wall."""
    s = _as_coords(s)
    s1, s2 = s[..., 0], s[..., 1]
    sin2, cos2 = np.sin(s2), np.cos(s2)
    radius = cone.radius(s1, "outer")
    tan_a = cone.tan_half_angle
    if surface is None:
        phi = np.zeros_like(s1)
        phi1 = np.zeros_like(s1)
        phi2 = np.zeros_like(s1)
    else:
        k, k1, k2 = rbf_kernel_terms(surface, s)
        a = surface.flat_amplitudes
        phi = np.sum(k * a, axis=-1)
        phi1 = np.sum(k1 * a, axis=-1)
        phi2 = np.sum(k2 * a, axis=-1)
    slope = tan_a + phi1
    u = np.stack([slope * sin2, -np.ones_like(s1), slope * cos2], axis=-1)
    rr = radius + phi
    v = np.stack([rr * cos2 + phi2 * sin2, np.zeros_like(s1), -rr * sin2 + phi2 * cos2], axis=-1)
    return u, v, sin2, cos2


def outer_surface_normal(cone: ConeGeometry, surface: RbfSurface | None, s) -> np.ndarray:
    """Unit normal of the outer wall, irregularity included, oriented outward.

    Built from the cross product of the surface tangents, so the field's
    derivatives enter through the chain rule; with zero amplitudes this
    reduces to the closed-form cone normal.
    """
    u, v, sin2, cos2 = _outer_tangents(cone, surface, s)
    raw = np.cross(u, v)
    norm = np.linalg.norm(raw, axis=-1)
    if np.any(norm < 1e-12):
        raise SingularSurfaceError("outer wall normal is undefined (degenerate tangents)")
    n = raw / norm[..., None]
    radial = np.stack([sin2, np.zeros_like(sin2), cos2], axis=-1)
    sign = np.where(np.sum(n * radial, axis=-1) < 0.0, -1.0, 1.0)
    return n * sign[..., None]


def outer_normal_amplitude_jacobian(cone: ConeGeometry, surface: RbfSurface, s) -> np.ndarray:
    """d(outer unit normal)/d(amplitudes), shape ``(..., 3, n_centers)``.

    The field is linear in the amplitudes, so each center contributes
    fixed tangent perturbations; the jacobian is their cross products
    pushed through the normalization of the raw normal.
    """
    u, v, sin2, cos2 = _outer_tangents(cone, surface, s)
    raw = np.cross(u, v)
    norm = np.linalg.norm(raw, axis=-1)
    if np.any(norm < 1e-12):
        raise SingularSurfaceError("outer wall normal is undefined (degenerate tangents)")
    n = raw / norm[..., None]
    radial = np.stack([sin2, np.zeros_like(sin2), cos2], axis=-1)
    sign = np.where(np.sum(n * radial, axis=-1) < 0.0, -1.0, 1.0)

    zeros = np.zeros_like(sin2)
    g = radial
    gp = np.stack([cos2, zeros, -sin2], axis=-1)
    k, k1, k2 = rbf_kernel_terms(surface, s)
    # d(raw)/da_k = k1_k (g x v) + k_k (u x gp) + k2_k (u x g)
    d_raw = (
        np.cross(g, v)[..., :, None] * k1[..., None, :]
        + np.cross(u, gp)[..., :, None] * k[..., None, :]
        + np.cross(u, g)[..., :, None] * k2[..., None, :]
    )
    n_dot = np.sum(n[..., :, None] * d_raw, axis=-2, keepdims=True)
    d_n = (d_raw - n[..., :, None] * n_dot) / norm[..., None, None]
    return d_n * sign[..., None, None]
