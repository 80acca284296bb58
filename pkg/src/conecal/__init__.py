"""Calibration of a camera behind a conical refractive cover.

The package models a camera looking through a double-walled conical
glass cover whose outer wall carries a smooth radial irregularity
field, traces pixels through the two refractions onto a checkerboard,
and recovers the field's parameters from observed corner positions by
gradient descent on the reprojection-through-glass loss.
"""

from .analysis import (
    DepthCurve,
    DistortionField,
    corner_error_scatter,
    distortion_field,
    distortion_vector,
    distortion_vs_inverse_depth,
    write_distortion_csv,
)
from .calibrate import (
    FitResult,
    OptimizerOptions,
    RefineResult,
    loss,
    loss_gradient,
    optimize_amplitudes,
    pinhole_rmse_cm,
    refine_poses,
    rmse_cm,
)
from .camera import CameraIntrinsics, pinhole_project, pixel_to_ray
from .config import (
    cone_from_config,
    default_config,
    intrinsics_from_config,
    load_config,
    patch_from_config,
    surface_from_config,
)
from .errors import (
    ConecalError,
    ConfigurationError,
    DataError,
    DivergenceError,
    MissError,
    NotFittedError,
    OutOfRangeError,
    RayTraceError,
    SingularSurfaceError,
    TotalInternalReflectionError,
)
from .estimators import BoardPoseRefiner, ConeSurfaceCalibrator
from .geometry import (
    ConeGeometry,
    RbfPatch,
    RbfSurface,
    cartesian_to_cone_coords,
    cone_point,
    denormalize_coords,
    inner_surface_normal,
    normalize_coords,
    outer_surface_normal,
    rbf_offset,
)
from .observations import (
    ImageObservations,
    ObservationSet,
    load_observations,
    save_observations,
)
from .raytrace import (
    BoardPose,
    Ray,
    SceneParams,
    TraceStatus,
    intersect_board,
    intersect_cone,
    raycast,
    raycast_pixels,
    refract,
    trace_pixels,
    trace_through_cover,
    world_to_board_local,
)
from .synth import AmplitudeDistribution, PoseSampler, generate_dataset, project_corners

__version__ = "0.1.0"

__all__ = [
    "AmplitudeDistribution",
    "BoardPose",
    "BoardPoseRefiner",
    "CameraIntrinsics",
    "ConeGeometry",
    "ConeSurfaceCalibrator",
    "ConecalError",
    "ConfigurationError",
    "DataError",
    "DepthCurve",
    "DistortionField",
    "DivergenceError",
    "FitResult",
    "ImageObservations",
    "MissError",
    "NotFittedError",
    "ObservationSet",
    "OptimizerOptions",
    "OutOfRangeError",
    "PoseSampler",
    "Ray",
    "RayTraceError",
    "RbfPatch",
    "RbfSurface",
    "RefineResult",
    "SceneParams",
    "SingularSurfaceError",
    "TotalInternalReflectionError",
    "TraceStatus",
    "cartesian_to_cone_coords",
    "cone_from_config",
    "cone_point",
    "corner_error_scatter",
    "default_config",
    "denormalize_coords",
    "distortion_field",
    "distortion_vector",
    "distortion_vs_inverse_depth",
    "generate_dataset",
    "inner_surface_normal",
    "intersect_board",
    "intersect_cone",
    "intrinsics_from_config",
    "load_config",
    "load_observations",
    "loss",
    "loss_gradient",
    "normalize_coords",
    "optimize_amplitudes",
    "outer_surface_normal",
    "patch_from_config",
    "pinhole_project",
    "pinhole_rmse_cm",
    "pixel_to_ray",
    "project_corners",
    "raycast",
    "raycast_pixels",
    "rbf_offset",
    "refine_poses",
    "refract",
    "rmse_cm",
    "save_observations",
    "surface_from_config",
    "trace_pixels",
    "trace_through_cover",
    "world_to_board_local",
    "__version__",
]
