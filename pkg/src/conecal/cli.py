"""Command-line workflows: generate, refine-poses, calibrate, analyze.

Every subcommand reads one scene configuration (JSON, see
:mod:`conecal.config`) plus flag overrides — flags win. Outputs are
deterministic for a fixed config and seed: JSON files use sorted keys,
CSV floats round-trip exactly, and nothing embeds timestamps or machine
paths.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
divergence (argument parsing failures also exit 2, via argparse).
"""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    corner_error_scatter,
    distortion_field,
    distortion_vs_inverse_depth,
    write_distortion_csv,
)
from .calibrate import (
    OptimizerOptions,
    optimize_amplitudes,
    pinhole_rmse_cm,
    refine_poses,
    rmse_cm,
)
from .config import (
    amplitude_distribution_from_config,
    board_from_config,
    cone_from_config,
    config_with_amplitudes,
    intrinsics_from_config,
    load_config,
    pose_sampler_from_config,
    surface_from_config,
)
from .errors import ConfigurationError, DataError, DivergenceError
from .geometry import RbfPatch, RbfSurface
from .observations import (
    _pose_to_json,
    load_observations,
    observations_to_json_dict,
    save_observations,
)
from .raytrace import SceneParams
from .synth import generate_dataset

DEFAULT_PROBE_PIXELS = ((820.0, 1232.0), (410.0, 1232.0))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _ensure_out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_grid(text: str) -> tuple[int, int]:
    match = re.fullmatch(r"(\d+)x(\d+)", text)
    if not match:
        raise ConfigurationError(f"--grid must look like ROWSxCOLS (e.g. 8x8), got {text!r}")
    rows, cols = int(match.group(1)), int(match.group(2))
    if rows < 1 or cols < 1:
        raise ConfigurationError("--grid needs at least one row and one column")
    return rows, cols


def _apply_surface_overrides(config: dict, args) -> dict:
    if getattr(args, "grid", None) is not None:
        rows, cols = _parse_grid(args.grid)
        config["surface"]["grid_rows"] = rows
        config["surface"]["grid_cols"] = cols
        # stored amplitudes belong to the configured grid, not the override
        config["surface"]["amplitudes_m"] = None
    return config


def _scene_for_observations(config: dict, surface: RbfSurface, observations) -> SceneParams:
    return SceneParams(
        intrinsics=intrinsics_from_config(config),
        cone=cone_from_config(config),
        surface=surface,
        poses=observations.initial_poses(),
    )


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args) -> None:
    config = _apply_surface_overrides(load_config(args.config), args)
    if args.images is not None:
        config["generate"]["n_images"] = args.images
    if args.noise is not None:
        config["generate"]["noise_sigma_px"] = args.noise

    template = surface_from_config(config)
    square_size, corners_per_side = board_from_config(config)
    # stored amplitudes pin the ground truth; otherwise draw fresh ones
    dist = None
    if config["surface"]["amplitudes_m"] is None:
        dist = amplitude_distribution_from_config(config)
    dataset = generate_dataset(
        intrinsics_from_config(config),
        cone_from_config(config),
        template,
        n_images=int(config["generate"]["n_images"]),
        square_size=square_size,
        corners_per_side=corners_per_side,
        amplitude_dist=dist,
        pose_sampler=pose_sampler_from_config(config),
        noise_sigma_px=float(config["generate"]["noise_sigma_px"]),
        seed=args.seed,
    )

    out = _ensure_out(args)
    save_observations(dataset.observations, out / "observations.json")
    truth_config = config_with_amplitudes(config, dataset.params.surface.amplitudes)
    _write_json(
        out / "ground_truth.json",
        {
            "seed": dataset.seed,
            "scene_config": truth_config,
            "amplitudes_m": truth_config["surface"]["amplitudes_m"],
            "poses": [
                {"index": i, **_pose_to_json(pose)}
                for i, pose in enumerate(dataset.params.poses)
            ],
        },
    )
    rmse = pinhole_rmse_cm(dataset.params, dataset.observations)
    print(f"generated {dataset.observations.n_images} images, "
          f"{dataset.observations.n_corners} corners")
    print(f"pinhole RMSE: {rmse:.6f} cm")


# ---------------------------------------------------------------------------
# refine-poses


def cmd_refine_poses(args) -> None:
    config = load_config(args.config)
    observations = load_observations(args.observations)
    surface = RbfSurface.flat(
        RbfPatch(
            s1_range=(
                config["surface"]["patch"]["s1_min_m"],
                config["surface"]["patch"]["s1_max_m"],
            ),
            s2_range=(
                config["surface"]["patch"]["s2_min_rad"],
                config["surface"]["patch"]["s2_max_rad"],
            ),
        ),
        (config["surface"]["grid_rows"], config["surface"]["grid_cols"]),
    )
    params = _scene_for_observations(config, surface, observations)
    result = refine_poses(params, observations, method=args.method)

    refined = observations_to_json_dict(observations)
    for image, pose in zip(refined["images"], result.params.poses):
        image["initial_pose"] = _pose_to_json(pose)
    refined["refinement"] = {
        "method": args.method,
        "images": [
            {
                "index": report.image_index,
                "initial_cost_m2": report.initial_cost,
                "final_cost_m2": report.final_cost,
                "n_valid_corners": report.n_valid,
            }
            for report in result.reports
        ],
    }
    out = _ensure_out(args)
    _write_json(out / "refined_poses.json", refined)
    for report in result.reports:
        print(
            f"image {report.image_index}: cost {report.initial_cost:.6e} -> "
            f"{report.final_cost:.6e} m^2 ({report.n_valid} corners)"
        )


# ---------------------------------------------------------------------------
# calibrate


def _fitted_surface_json(
    config: dict,
    surface: RbfSurface,
    loss_history: np.ndarray,
    errored: tuple,
    n_active: int,
    rmse_initial: float,
    rmse_cone_only: float,
    rmse_final: float,
    options: OptimizerOptions,
    diverged_at: int | None,
) -> dict:
    patch = config["surface"]["patch"]
    return {
        "grid_rows": surface.grid[0],
        "grid_cols": surface.grid[1],
        "amplitudes_m": [[float(v) for v in row] for row in surface.amplitudes],
        "beta_norm_sq": surface.beta,
        "patch": {
            "s1_min_m": float(patch["s1_min_m"]),
            "s1_max_m": float(patch["s1_max_m"]),
            "s2_min_rad": float(patch["s2_min_rad"]),
            "s2_max_rad": float(patch["s2_max_rad"]),
        },
        "rmse_initial_cm": rmse_initial,
        "rmse_cone_only_cm": rmse_cone_only,
        "rmse_final_cm": rmse_final,
        "relative_improvement_pct": 100.0 * (1.0 - rmse_final / rmse_initial),
        "loss_history_m2": [float(v) for v in loss_history],
        "errored_rays": [
            {"image": image, "i": int(i), "j": int(j), "stage": stage}
            for image, i, j, stage in errored
        ],
        "n_active_corners": n_active,
        "options": {
            "step_count": options.step_count,
            "learning_rate": options.learning_rate,
            "step_rule": options.step_rule,
            "rate_decay": options.decay_enabled,
            "tolerance": options.tolerance,
        },
        "diverged_at_iteration": diverged_at,
    }


def load_fitted_surface(path) -> RbfSurface:
    """Rebuild the irregularity field written by the calibrate subcommand."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"fitted surface file not found: {path}")
    try:
        data = json.loads(path.read_text())
        patch = RbfPatch(
            s1_range=(data["patch"]["s1_min_m"], data["patch"]["s1_max_m"]),
            s2_range=(data["patch"]["s2_min_rad"], data["patch"]["s2_max_rad"]),
        )
        return RbfSurface(
            patch=patch,
            grid=(int(data["grid_rows"]), int(data["grid_cols"])),
            amplitudes=np.array(data["amplitudes_m"], dtype=np.float64),
            beta=float(data["beta_norm_sq"]),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed fitted surface file {path}: {exc}") from exc


def _print_rmse_table(rmse_initial: float, rmse_final: float) -> None:
    improvement = 100.0 * (1.0 - rmse_final / rmse_initial)
    print("set  RMSE initial (cm)  RMSE final (cm)  rel. improvement")
    print(f"1    {rmse_initial:<18.6f}{rmse_final:<17.6f}{improvement:.2f}%")


def cmd_calibrate(args) -> None:
    config = _apply_surface_overrides(load_config(args.config), args)
    observations = load_observations(args.observations)
    start_surface = surface_from_config(config)
    params = _scene_for_observations(config, start_surface, observations)
    if args.refine_poses:
        params = refine_poses(params, observations).params

    zero = RbfSurface.flat(start_surface.patch, start_surface.grid, beta=start_surface.beta)
    rmse_initial = pinhole_rmse_cm(params, observations)
    rmse_cone_only = rmse_cm(params.with_surface(zero), observations)
    options = OptimizerOptions(
        step_count=args.steps,
        learning_rate=args.rate,
        step_rule=args.step_rule,
    )

    out = _ensure_out(args)
    try:
        result = optimize_amplitudes(params, observations, options)
    except DivergenceError as exc:
        if exc.last_stable is None:
            raise
        stable = exc.last_stable
        _write_json(
            out / "fitted_surface.json",
            _fitted_surface_json(
                config,
                stable.surface,
                stable.loss_history,
                stable.errored,
                stable.n_active,
                rmse_initial,
                rmse_cone_only,
                rmse_cm(stable.params, observations),
                options,
                diverged_at=exc.iteration,
            ),
        )
        print(f"saved last stable iterate to {out / 'fitted_surface.json'}", file=sys.stderr)
        raise

    rmse_final = rmse_cm(result.params, observations)
    _write_json(
        out / "fitted_surface.json",
        _fitted_surface_json(
            config,
            result.surface,
            result.loss_history,
            result.errored,
            result.n_active,
            rmse_initial,
            rmse_cone_only,
            rmse_final,
            options,
            diverged_at=None,
        ),
    )
    _print_rmse_table(rmse_initial, rmse_final)


# ---------------------------------------------------------------------------
# analyze


def _write_depth_curve_csv(path: Path, curves) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["px", "py", "inv_depth_per_m", "dpx", "dpy"])
        for curve in curves:
            for inv_depth, delta in zip(curve.inv_depths, curve.deltas):
                writer.writerow(
                    [
                        repr(float(curve.pixel[0])),
                        repr(float(curve.pixel[1])),
                        repr(float(inv_depth)),
                        repr(float(delta[0])),
                        repr(float(delta[1])),
                    ]
                )


def _write_scatter_csv(path: Path, scatter: dict) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["image", "i", "j", "px", "py", "status", "dmx_m", "dmy_m", "err_m"])
        for image in scatter["images"]:
            for corner in image["corners"]:
                writer.writerow(
                    [
                        image["index"],
                        corner["i"],
                        corner["j"],
                        repr(corner["px"]),
                        repr(corner["py"]),
                        corner["status"],
                        "" if corner["dmx_m"] is None else repr(corner["dmx_m"]),
                        "" if corner["dmy_m"] is None else repr(corner["dmy_m"]),
                        "" if corner["err_m"] is None else repr(corner["err_m"]),
                    ]
                )


def cmd_analyze(args) -> None:
    config = load_config(args.config)
    observations = load_observations(args.observations)
    if args.fitted is not None:
        surface = load_fitted_surface(args.fitted)
    elif config["surface"]["amplitudes_m"] is not None:
        surface = surface_from_config(config)
    else:
        raise DataError(
            "no fitted surface: pass --fitted or store surface.amplitudes_m in the config"
        )
    params = _scene_for_observations(config, surface, observations)
    out = _ensure_out(args)

    field = distortion_field(params, depth=args.depth, stride=args.stride)
    write_distortion_csv(field, out / "distortion_field.csv")

    inv_range = (args.inv_depth_min, args.inv_depth_max)
    curves = [
        distortion_vs_inverse_depth(params, pixel, inv_depth_range=inv_range)
        for pixel in DEFAULT_PROBE_PIXELS
    ]
    _write_depth_curve_csv(out / "depth_curves.csv", curves)
    _write_json(
        out / "depth_curves.json",
        {
            "inv_depth_range_per_m": [float(inv_range[0]), float(inv_range[1])],
            "curves": [
                {
                    "pixel_px": [float(curve.pixel[0]), float(curve.pixel[1])],
                    "slope_px_per_inv_m": [float(v) for v in curve.slope],
                    "intercept_px": [float(v) for v in curve.intercept],
                    "r_squared": curve.r_squared,
                    "slope_norm_px_per_inv_m": curve.slope_norm,
                }
                for curve in curves
            ],
        },
    )

    scatter = corner_error_scatter(params, observations)
    _write_json(out / "corner_scatter.json", scatter)
    _write_scatter_csv(out / "corner_scatter.csv", scatter)

    print(f"distortion field: {field.pixels.shape[0]} samples at depth {args.depth} m")
    print(f"corner RMSE under fitted model: {scatter['rmse_cm']:.6f} cm")


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conecal",
        description="Calibrate and analyze a camera behind a conical refractive cover.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    def add_common(sub):
        sub.add_argument("--config", default=None, help="scene configuration JSON file")
        sub.add_argument("--out", default=".", help="output directory (created if missing)")

    generate = subparsers.add_parser(
        "generate", help="synthesize a checkerboard dataset behind the cover"
    )
    add_common(generate)
    generate.add_argument("--seed", type=int, default=42, help="random seed (default 42)")
    generate.add_argument("--images", type=int, default=None, help="number of board images")
    generate.add_argument(
        "--grid",
        default=None,
        help="surface center grid ROWSxCOLS; clears amplitudes stored in the config",
    )
    generate.add_argument("--noise", type=float, default=None, help="corner noise sigma in px")
    generate.set_defaults(func=cmd_generate)

    refine = subparsers.add_parser(
        "refine-poses", help="refine board poses under the perfect-cone model"
    )
    add_common(refine)
    refine.add_argument("--observations", required=True, help="observations JSON file")
    refine.add_argument(
        "--method",
        default="gauss-newton",
        choices=["gauss-newton", "adam", "fixed"],
        help="refinement method (default gauss-newton)",
    )
    refine.set_defaults(func=cmd_refine_poses)

    calibrate = subparsers.add_parser(
        "calibrate", help="fit the irregularity-field amplitudes to observed corners"
    )
    add_common(calibrate)
    calibrate.add_argument("--observations", required=True, help="observations JSON file")
    calibrate.add_argument(
        "--steps", type=int, default=1000, help="descent steps (default 1000; synthetic runs use 500)"
    )
    calibrate.add_argument("--rate", type=float, default=1e-6, help="learning rate (default 1e-6)")
    calibrate.add_argument(
        "--step-rule", default="adam", choices=["adam", "fixed"], help="update rule (default adam)"
    )
    calibrate.add_argument(
        "--grid", default=None, help="fitting center grid ROWSxCOLS (default from config)"
    )
    calibrate.add_argument(
        "--refine-poses",
        action="store_true",
        help="refine board poses under the perfect-cone model before fitting",
    )
    calibrate.set_defaults(func=cmd_calibrate)

    analyze = subparsers.add_parser(
        "analyze", help="distortion field, inverse-depth curves, per-corner residuals"
    )
    add_common(analyze)
    analyze.add_argument("--observations", required=True, help="observations JSON file")
    analyze.add_argument("--fitted", default=None, help="fitted surface JSON from calibrate")
    analyze.add_argument("--depth", type=float, default=1.0, help="field depth in m (default 1)")
    analyze.add_argument("--stride", type=int, default=40, help="field pixel stride (default 40)")
    analyze.add_argument(
        "--inv-depth-min", type=float, default=0.5, help="curve range start in 1/m (default 0.5)"
    )
    analyze.add_argument(
        "--inv-depth-max", type=float, default=10.0, help="curve range end in 1/m (default 10)"
    )
    analyze.set_defaults(func=cmd_analyze)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
