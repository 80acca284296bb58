"""Loss, analytic gradients and optimizers for surface and pose recovery.

The loss is the sum of squared board-plane residuals (meters squared)
between raycast landing points and the known corner positions, taken
over every corner whose ray completes the trace; failed rays are
excluded and reported. The irregularity field enters the trace only
through the outer-wall normal, so the gradient with respect to the
amplitudes is assembled by chaining the board residual back through
the exit refraction and the normal's dependence on the field. Pose
gradients use a left rotation increment about the current estimate.

Accumulations use ``np.sum`` (pairwise summation) in a fixed order so
repeated runs produce bit-identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from .errors import ConfigurationError, DataError, DivergenceError
from .geometry import RbfSurface, _outer_tangents, rbf_kernel_terms
from .observations import ImageObservations, ObservationSet
from .raytrace import (
    STAGE_NAMES,
    BoardPose,
    SceneParams,
    TraceStatus,
    pinhole_raycast,
    trace_pixels,
)

_STEP_RULES = ("adam", "fixed")
_REFINE_METHODS = ("gauss-newton", "adam", "fixed")


@dataclass(frozen=True)
class OptimizerOptions:
    """Settings for the first-order descent loops.

    ``rate_decay=None`` resolves per rule: the adaptive rule anneals the
    rate with a half-cosine (full rate at the start, near zero at the
    end), the fixed rule keeps it constant. ``tolerance`` stops early
    when the loss improves by less than that amount (m^2); zero
    disables early stopping.
    """

    step_count: int = 500
    learning_rate: float = 1e-6
    step_rule: str = "adam"
    rate_decay: bool | None = None
    tolerance: float = 0.0

    def __post_init__(self):
        if self.step_count < 1:
            raise ConfigurationError("step_count must be at least 1")
        if self.learning_rate <= 0.0:
            raise ConfigurationError("learning_rate must be positive")
        if self.step_rule not in _STEP_RULES:
            raise ConfigurationError(f"step_rule must be one of {_STEP_RULES}")
        if self.tolerance < 0.0:
            raise ConfigurationError("tolerance must be nonnegative")

    @property
    def decay_enabled(self) -> bool:
        if self.rate_decay is None:
            return self.step_rule == "adam"
        return bool(self.rate_decay)

    def rate_at(self, step_index: int) -> float:
        """Learning rate for 0-based step ``step_index``."""
        if not self.decay_enabled or self.step_count <= 1:
            return self.learning_rate
        frac = step_index / self.step_count
        return self.learning_rate * 0.5 * (1.0 + math.cos(math.pi * frac))


@dataclass(frozen=True)
class LossResult:
    """Loss value plus the bookkeeping of excluded corners."""

    value: float
    n_active: int
    errored: tuple  # ((image_index, i, j, stage), ...) sorted


@dataclass(frozen=True)
class FitResult:
    """Outcome of the amplitude fit."""

    params: SceneParams
    surface: RbfSurface
    loss_history: np.ndarray  # one entry per evaluated iterate
    errored: tuple
    n_active: int

    @property
    def final_loss(self) -> float:
        return float(self.loss_history[-1])


@dataclass(frozen=True)
class ImageRefineReport:
    image_index: int
    initial_cost: float
    final_cost: float
    n_valid: int


@dataclass(frozen=True)
class RefineResult:
    """Outcome of the pose refinement."""

    params: SceneParams
    reports: tuple


def _sorted_images(observations: ObservationSet):
    return sorted(observations.images, key=lambda im: im.image_index)


def _errored_rows(im: ImageObservations, status: np.ndarray) -> list:
    rows = []
    for ij, st in zip(im.grid_ij, status):
        if st != TraceStatus.OK:
            rows.append((im.image_index, int(ij[0]), int(ij[1]), STAGE_NAMES[TraceStatus(st)]))
    return rows


def loss(params: SceneParams, observations: ObservationSet) -> LossResult:
    """Sum of squared corner residuals in board coordinates (m^2)."""
    total = 0.0
    n_active = 0
    errored = []
    for im in _sorted_images(observations):
        batch = trace_pixels(params, im.image_index, im.pixels)
        ok = batch.ok
        rho = batch.board_local - im.board_local()
        total += float(np.sum(rho[ok] ** 2))
        n_active += int(np.count_nonzero(ok))
        errored.extend(_errored_rows(im, batch.status))
    if n_active == 0:
        raise DataError("no corner completed the trace; loss is undefined")
    return LossResult(value=total, n_active=n_active, errored=tuple(sorted(errored)))


def _board_residual_adjoints(batch, pose, rho, ok):
    """Shared first links of the backward chain, restricted to valid rows.

    Returns (w3, r_o, nb_ro, dL/dr_o): ``w3`` is the gradient of the loss
    with respect to the board-plane hit point.
    """
    r1, r2, n_b = pose.rotation[:, 0], pose.rotation[:, 1], pose.normal
    rho = rho[ok]
    w3 = 2.0 * (rho[:, 0, None] * r1 + rho[:, 1, None] * r2)
    r_o = batch.dir_out[ok]
    nb_ro = r_o @ n_b
    ro_w3 = np.sum(r_o * w3, axis=-1)
    dl_dro = batch.t_board[ok, None] * (w3 - n_b * (ro_w3 / nb_ro)[:, None])
    return w3, r_o, nb_ro, ro_w3, dl_dro


def _amplitude_gradient_image(params: SceneParams, im: ImageObservations, batch, rho, ok):
    """Per-image loss gradient with respect to the flat amplitudes."""
    cone = params.cone
    surface = params.surface
    pose = params.pose(im.image_index)
    _, r_o, nb_ro, ro_w3, dl_dro = _board_residual_adjoints(batch, pose, rho, ok)

    # backward through the exit refraction: r_o depends on the oriented
    # outer normal both directly and via the incidence cosine
    eta = cone.eta_inside / cone.eta_outside
    r_m = batch.dir_glass[ok]
    n_hat = batch.n_outer[ok]
    sigma = np.where(np.sum(r_m * n_hat, axis=-1) > 0.0, -1.0, 1.0)
    n_eff = sigma[:, None] * n_hat
    c_i = -np.sum(r_m * n_eff, axis=-1)
    k_refr = 1.0 - eta * eta * (1.0 - c_i * c_i)
    c_t = np.sqrt(np.maximum(k_refr, 1e-300))
    f = eta * c_i - c_t
    df_dci = eta - eta * eta * c_i / c_t
    dl_dneff = f[:, None] * dl_dro - (df_dci * np.sum(n_eff * dl_dro, axis=-1))[:, None] * r_m
    dl_dnhat = sigma[:, None] * dl_dneff

    # backward through the normalization and the tangent cross product
    s_o = batch.s_outer[ok]
    u, v, sin2, cos2 = _outer_tangents(cone, surface, s_o)
    raw = np.cross(u, v)
    norm = np.linalg.norm(raw, axis=-1)
    g = np.stack([sin2, np.zeros_like(sin2), cos2], axis=-1)
    gp = np.stack([cos2, np.zeros_like(sin2), -sin2], axis=-1)
    sgn = np.where(np.sum(raw * g, axis=-1) < 0.0, -1.0, 1.0)
    n_unit = raw * (sgn / norm)[:, None]
    dl_draw = (sgn / norm)[:, None] * (
        dl_dnhat - n_unit * np.sum(n_unit * dl_dnhat, axis=-1)[:, None]
    )
    dl_du = np.cross(v, dl_draw)
    dl_dv = np.cross(dl_draw, u)

    # the field enters u through its slope, v through its value and its
    # angular derivative; all three are linear in the amplitudes
    c_phi1 = np.sum(g * dl_du, axis=-1)
    c_phi = np.sum(gp * dl_dv, axis=-1)
    c_phi2 = np.sum(g * dl_dv, axis=-1)
    k, k1, k2 = rbf_kernel_terms(surface, s_o)
    return np.sum(
        k * c_phi[:, None] + k1 * c_phi1[:, None] + k2 * c_phi2[:, None], axis=0
    )


def _pose_gradient_image(params: SceneParams, im: ImageObservations, batch, rho, ok):
    """Per-image loss gradient for a left rotation increment and the
    translation, evaluated at the current pose; shape (6,)."""
    pose = params.pose(im.image_index)
    n_b = pose.normal
    w3, r_o, nb_ro, ro_w3, _ = _board_residual_adjoints(batch, pose, rho, ok)
    x_t = batch.x_board[ok]
    t_b = pose.translation

    scale = (ro_w3 / nb_ro)[:, None]
    d_omega = np.cross(w3, x_t - t_b) + scale * np.cross(n_b, t_b - x_t)
    d_trans = scale * n_b - w3
    return np.concatenate([np.sum(d_omega, axis=0), np.sum(d_trans, axis=0)])


def loss_gradient(params: SceneParams, observations: ObservationSet, wrt: str = "amplitudes"):
    """Loss and its analytic gradient.

    ``wrt="amplitudes"`` returns the gradient over the flattened center
    amplitudes; ``wrt="poses"`` returns one ``[rotation-increment,
    translation]`` block of 6 per image, concatenated in image order.
    """
    if wrt not in ("amplitudes", "poses"):
        raise ConfigurationError(f"unknown gradient target {wrt!r}")
    total = 0.0
    n_active = 0
    errored = []
    grads = []
    for im in _sorted_images(observations):
        batch = trace_pixels(params, im.image_index, im.pixels)
        ok = batch.ok
        rho = batch.board_local - im.board_local()
        total += float(np.sum(rho[ok] ** 2))
        n_active += int(np.count_nonzero(ok))
        errored.extend(_errored_rows(im, batch.status))
        if wrt == "amplitudes":
            grads.append(_amplitude_gradient_image(params, im, batch, rho, ok))
        else:
            grads.append(_pose_gradient_image(params, im, batch, rho, ok))
    if n_active == 0:
        raise DataError("no corner completed the trace; loss is undefined")
    result = LossResult(value=total, n_active=n_active, errored=tuple(sorted(errored)))
    if wrt == "amplitudes":
        grad = grads[0]
        for g in grads[1:]:
            grad = grad + g
    else:
        grad = np.concatenate(grads)
    return result, grad


class _AdamState:
    """Bias-corrected Adam moments (beta1 0.9, beta2 0.999, eps 1e-8)."""

    def __init__(self, n: int):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.b1t = 1.0
        self.b2t = 1.0

    def step(self, grad: np.ndarray, rate: float) -> np.ndarray:
        self.m = 0.9 * self.m + 0.1 * grad
        self.v = 0.999 * self.v + 0.001 * grad * grad
        self.b1t *= 0.9
        self.b2t *= 0.999
        m_hat = self.m / (1.0 - self.b1t)
        v_hat = self.v / (1.0 - self.b2t)
        return rate * m_hat / (np.sqrt(v_hat) + 1e-8)


def _check_divergence(
    value: float,
    grad: np.ndarray | None,
    iteration: int,
    last_stable: "FitResult | None" = None,
) -> None:
    bad = not np.isfinite(value) or value > 1e6
    if grad is not None:
        bad = bad or not np.all(np.isfinite(grad))
    if bad:
        raise DivergenceError(
            f"optimization diverged at iteration {iteration} (loss {value!r})",
            iteration=iteration,
            last_stable=last_stable,
        )


def optimize_amplitudes(
    params: SceneParams, observations: ObservationSet, options: OptimizerOptions | None = None
) -> FitResult:
    """Descend the corner loss over the field amplitudes.

    Starts from the amplitudes in ``params`` and returns updated scene
    parameters, the per-iterate loss history (initial value included)
    and the exclusions of the final evaluation.  On divergence the raised
    error carries the last well-behaved iterate in ``last_stable`` so
    callers can persist a usable result.
    """
    options = options or OptimizerOptions()
    current = params
    x = params.surface.flat_amplitudes.copy()
    adam = _AdamState(x.size) if options.step_rule == "adam" else None
    history = []
    last_stable: FitResult | None = None

    for it in range(options.step_count):
        try:
            result, grad = loss_gradient(current, observations, wrt="amplitudes")
        except DataError:
            if it == 0:
                raise
            # the step wiped out every ray: that is divergence, not bad data
            raise DivergenceError(
                f"optimization diverged at iteration {it}: no ray completes the trace",
                iteration=it,
                last_stable=last_stable,
            ) from None
        history.append(result.value)
        if np.isfinite(result.value) and result.value <= 1e6 and np.all(np.isfinite(grad)):
            last_stable = FitResult(
                params=current,
                surface=current.surface,
                loss_history=np.array(history),
                errored=result.errored,
                n_active=result.n_active,
            )
        _check_divergence(result.value, grad, it, last_stable)
        if (
            options.tolerance > 0.0
            and len(history) >= 2
            and abs(history[-2] - history[-1]) <= options.tolerance
        ):
            break
        rate = options.rate_at(it)
        if adam is not None:
            x = x - adam.step(grad, rate)
        else:
            x = x - rate * grad
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 1.0:
            raise DivergenceError(
                f"optimization diverged at iteration {it}: amplitudes left the "
                "physically meaningful range",
                iteration=it,
                last_stable=last_stable,
            )
        current = current.with_surface(
            current.surface.with_amplitudes(x.reshape(current.surface.grid))
        )

    final = loss(current, observations)
    history.append(final.value)
    _check_divergence(final.value, None, options.step_count, last_stable)
    return FitResult(
        params=current,
        surface=current.surface,
        loss_history=np.array(history),
        errored=final.errored,
        n_active=final.n_active,
    )


# ---------------------------------------------------------------------------
# pose refinement


def _apply_pose_step(pose: BoardPose, omega: np.ndarray, translation: np.ndarray) -> BoardPose:
    """Left-multiply a rotation increment and set the translation."""
    rot = Rotation.from_rotvec(omega).as_matrix() @ pose.rotation
    return replace(pose, rotation=rot, translation=np.asarray(translation, dtype=np.float64))


def _zero_surface_params(params: SceneParams) -> SceneParams:
    surface = params.surface
    return params.with_surface(
        RbfSurface.flat(surface.patch, surface.grid, beta=surface.beta)
    )


def _refine_image_gauss_newton(params: SceneParams, im: ImageObservations) -> tuple:
    """Least-squares pose update for one image under the perfect cone.

    The rays are pose-independent, so they are traced once; each trial
    pose only re-intersects the board plane. Corners whose ray misses
    the plane for a trial pose contribute a large constant residual.
    """
    batch = trace_pixels(params, im.image_index, im.pixels)
    cover_ok = (batch.status == TraceStatus.OK) | (batch.status == TraceStatus.MISS_BOARD)
    x_o = batch.x_outer[cover_ok]
    r_o = batch.dir_out[cover_ok]
    x_cb = im.board_local()[cover_ok]
    n_valid = int(np.count_nonzero(cover_ok))
    pose0 = params.pose(im.image_index)
    if n_valid == 0:
        return pose0, 0.0, 0.0, 0

    def residual(p):
        rot = Rotation.from_rotvec(p[:3]).as_matrix() @ pose0.rotation
        t_b = p[3:]
        n_b = rot[:, 2]
        denom = r_o @ n_b
        safe = np.abs(denom) > 1e-12
        t_star = ((t_b - x_o) @ n_b) / np.where(safe, denom, 1.0)
        good = safe & (t_star > 0.0)
        x_t = x_o + t_star[:, None] * r_o
        rel = x_t - t_b
        m = np.stack([rel @ rot[:, 0], rel @ rot[:, 1]], axis=-1)
        res = np.where(good[:, None], m - x_cb, 1e3)
        return res.ravel()

    p0 = np.concatenate([np.zeros(3), pose0.translation])
    initial_cost = float(np.sum(residual(p0) ** 2))
    sol = least_squares(residual, p0, method="trf", xtol=1e-14, ftol=1e-14, gtol=1e-14)
    final_cost = float(np.sum(residual(sol.x) ** 2))
    if final_cost >= initial_cost:
        return pose0, initial_cost, initial_cost, n_valid
    return (
        _apply_pose_step(pose0, sol.x[:3], sol.x[3:]),
        initial_cost,
        final_cost,
        n_valid,
    )


def refine_poses(
    params: SceneParams,
    observations: ObservationSet,
    method: str = "gauss-newton",
    options: OptimizerOptions | None = None,
) -> RefineResult:
    """Improve the per-image board poses under the zero-field model.

    The poses carried by ``params`` are the starting point. Refinement
    never worsens an image: if an update fails to lower that image's
    cost, its starting pose is kept. The surface carried by ``params``
    is preserved in the returned parameters (the refinement itself
    always runs with amplitudes zeroed).
    """
    if method not in _REFINE_METHODS:
        raise ConfigurationError(f"refine method must be one of {_REFINE_METHODS}")
    zero = _zero_surface_params(params)
    images = _sorted_images(observations)

    if method == "gauss-newton":
        poses = []
        reports = []
        for im in images:
            pose, cost0, cost1, n_valid = _refine_image_gauss_newton(zero, im)
            poses.append(pose)
            reports.append(
                ImageRefineReport(
                    image_index=im.image_index,
                    initial_cost=cost0,
                    final_cost=cost1,
                    n_valid=n_valid,
                )
            )
        refined = params.with_poses(poses)
        return RefineResult(params=refined, reports=tuple(reports))

    # first-order descent on the stacked [rotation-increment, translation]
    # blocks, re-anchoring the increment at every step
    options = options or OptimizerOptions(step_count=200, learning_rate=1e-4)
    n = len(images)
    adam = _AdamState(6 * n) if options.step_rule == "adam" else None
    current = zero
    initial = loss(current, observations)
    costs0, counts0 = _per_image_costs(current, observations)
    best = current
    best_value = initial.value
    for it in range(options.step_count):
        result, grad = loss_gradient(current, observations, wrt="poses")
        _check_divergence(result.value, grad, it)
        if result.value < best_value:
            best, best_value = current, result.value
        rate = options.rate_at(it)
        step = adam.step(grad, rate) if adam is not None else rate * grad
        new_poses = []
        for idx, im in enumerate(images):
            pose = current.pose(im.image_index)
            block = step[6 * idx : 6 * idx + 6]
            new_poses.append(
                _apply_pose_step(pose, -block[:3], pose.translation - block[3:])
            )
        current = current.with_poses(new_poses)
    final = loss(current, observations)
    if final.value < best_value:
        best, best_value = current, final.value
    costs1, _ = _per_image_costs(best, observations)
    reports = tuple(
        ImageRefineReport(
            image_index=im.image_index,
            initial_cost=costs0[im.image_index],
            final_cost=costs1[im.image_index],
            n_valid=counts0[im.image_index],
        )
        for im in images
    )
    return RefineResult(params=params.with_poses(best.poses), reports=reports)


def _per_image_costs(params: SceneParams, observations: ObservationSet):
    costs = {}
    counts = {}
    for im in _sorted_images(observations):
        batch = trace_pixels(params, im.image_index, im.pixels)
        rho = batch.board_local - im.board_local()
        costs[im.image_index] = float(np.sum(rho[batch.ok] ** 2))
        counts[im.image_index] = int(np.count_nonzero(batch.ok))
    return costs, counts


# ---------------------------------------------------------------------------
# summary metrics


def rmse_cm(params: SceneParams, observations: ObservationSet) -> float:
    """Root-mean-square corner residual under the full model, in cm."""
    result = loss(params, observations)
    return math.sqrt(result.value / result.n_active) * 100.0


def pinhole_rmse_cm(params: SceneParams, observations: ObservationSet) -> float:
    """Root-mean-square corner residual ignoring the cover, in cm."""
    total = 0.0
    n_active = 0
    for im in _sorted_images(observations):
        local, hit = pinhole_raycast(params.intrinsics, params.pose(im.image_index), im.pixels)
        rho = local - im.board_local()
        total += float(np.sum(rho[hit] ** 2))
        n_active += int(np.count_nonzero(hit))
    if n_active == 0:
        raise DataError("no corner reaches the board under the pinhole model")
    return math.sqrt(total / n_active) * 100.0
