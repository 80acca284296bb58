"""Observed checkerboard corners and their JSON serialization.

An observation set couples the board dimensions with, per image, an
initial pose estimate and the detected corner pixels keyed by 1-based
grid indices ``(i, j)``. Corner pixel positions may fall outside the
sensor bounds (detection noise); grid indices must be unique and in
range. Image indices must form a dense ``0..n-1`` sequence so they can
double as pose indices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DataError
from .raytrace import BoardPose


@dataclass(frozen=True)
class ImageObservations:
    """Corners detected in one image plus the board's initial pose."""

    image_index: int
    initial_pose: BoardPose
    grid_ij: np.ndarray  # (M, 2) int, 1-based corner indices
    pixels: np.ndarray  # (M, 2) float, detected pixel positions

    def __post_init__(self):
        ij = np.array(self.grid_ij, dtype=np.int64)
        px = np.array(self.pixels, dtype=np.float64)
        if ij.ndim != 2 or ij.shape[1] != 2 or px.shape != (ij.shape[0], 2):
            raise DataError("grid_ij must be (M, 2) and pixels must match it")
        n = self.initial_pose.corners_per_side
        if ij.shape[0] == 0:
            raise DataError(f"image {self.image_index} has no corners")
        if np.any(ij < 1) or np.any(ij > n):
            raise DataError(f"corner indices must lie in [1, {n}]")
        if len({(int(a), int(b)) for a, b in ij}) != ij.shape[0]:
            raise DataError(f"image {self.image_index} has duplicate corner indices")
        if not np.all(np.isfinite(px)):
            raise DataError(f"image {self.image_index} has non-finite pixel positions")
        ij.flags.writeable = False
        px.flags.writeable = False
        object.__setattr__(self, "image_index", int(self.image_index))
        object.__setattr__(self, "grid_ij", ij)
        object.__setattr__(self, "pixels", px)

    @property
    def n_corners(self) -> int:
        return self.grid_ij.shape[0]

    def board_local(self) -> np.ndarray:
        """Board-frame planar coordinates of the observed corners, (M, 2)."""
        return self.initial_pose.corner_board_coords(self.grid_ij)


@dataclass(frozen=True)
class ObservationSet:
    """All images of one capture session, sharing one board."""

    square_size: float
    corners_per_side: int
    images: tuple[ImageObservations, ...]

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "corners_per_side", int(self.corners_per_side))
        if not self.images:
            raise DataError("observation set has no images")
        indices = sorted(im.image_index for im in self.images)
        if indices != list(range(len(self.images))):
            raise DataError("image indices must be unique and dense from 0")
        for im in self.images:
            if (
                im.initial_pose.square_size != self.square_size
                or im.initial_pose.corners_per_side != self.corners_per_side
            ):
                raise DataError("image pose board dimensions disagree with the set")

    @property
    def n_images(self) -> int:
        return len(self.images)

    @property
    def n_corners(self) -> int:
        return sum(im.n_corners for im in self.images)

    def image(self, index: int) -> ImageObservations:
        for im in self.images:
            if im.image_index == index:
                return im
        raise DataError(f"no image with index {index}")

    def initial_poses(self) -> tuple[BoardPose, ...]:
        """Poses ordered by image index, usable as SceneParams.poses."""
        return tuple(im.initial_pose for im in sorted(self.images, key=lambda x: x.image_index))


def _pose_to_json(pose: BoardPose) -> dict:
    return {
        "rotation_rowmajor": [float(v) for v in pose.rotation.ravel()],
        "translation_m": [float(v) for v in pose.translation],
    }


def _pose_from_json(obj: dict, square_size: float, corners_per_side: int) -> BoardPose:
    if "rotation_rowmajor" in obj:
        rot = np.array(obj["rotation_rowmajor"], dtype=np.float64).reshape(3, 3)
    elif "rotation_axis_angle_rad" in obj:
        rot = Rotation.from_rotvec(np.asarray(obj["rotation_axis_angle_rad"])).as_matrix()
    else:
        raise DataError("pose needs rotation_rowmajor or rotation_axis_angle_rad")
    return BoardPose(
        rotation=rot,
        translation=np.array(obj["translation_m"], dtype=np.float64),
        square_size=square_size,
        corners_per_side=corners_per_side,
    )


def observations_to_json_dict(obs: ObservationSet) -> dict:
    images = []
    for im in sorted(obs.images, key=lambda x: x.image_index):
        corners = [
            {"i": int(ij[0]), "j": int(ij[1]), "px": float(p[0]), "py": float(p[1])}
            for ij, p in zip(im.grid_ij, im.pixels)
        ]
        images.append(
            {
                "index": im.image_index,
                "initial_pose": _pose_to_json(im.initial_pose),
                "corners": corners,
            }
        )
    return {
        "board": {
            "square_size_m": obs.square_size,
            "corners_per_side": obs.corners_per_side,
        },
        "images": images,
    }


def observations_from_json_dict(data: dict) -> ObservationSet:
    try:
        board = data["board"]
        square = float(board["square_size_m"])
        corners_per_side = int(board["corners_per_side"])
        images = []
        for im in data["images"]:
            pose = _pose_from_json(im["initial_pose"], square, corners_per_side)
            corners = im["corners"]
            ij = np.array([[c["i"], c["j"]] for c in corners], dtype=np.int64)
            px = np.array([[c["px"], c["py"]] for c in corners], dtype=np.float64)
            images.append(
                ImageObservations(
                    image_index=int(im["index"]), initial_pose=pose, grid_ij=ij, pixels=px
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed observations: {exc}") from exc
    return ObservationSet(square_size=square, corners_per_side=corners_per_side, images=tuple(images))


def save_observations(obs: ObservationSet, path) -> None:
    Path(path).write_text(json.dumps(observations_to_json_dict(obs), indent=2, sort_keys=True) + "\n")


def load_observations(path) -> ObservationSet:
    path = Path(path)
    if not path.exists():
        raise DataError(f"observations file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"observations file is not valid JSON: {exc}") from exc
    return observations_from_json_dict(data)
