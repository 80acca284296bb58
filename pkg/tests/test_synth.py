"""Tests for synthetic data generation and the raycast inversion."""

import numpy as np
import pytest

from conecal.errors import ConfigurationError, DataError
from conecal.geometry import RbfSurface
from conecal.raytrace import SceneParams, TraceStatus, raycast_pixels
from conecal.synth import (
    AmplitudeDistribution,
    GeneratedDataset,
    PoseSampler,
    generate_dataset,
    project_corner,
    project_corners,
    sample_surface,
)
from oracles import grid_search_project


class TestAmplitudeDistribution:
    def test_sample_statistics(self):
        rng = np.random.default_rng(3)
        dist = AmplitudeDistribution(mean=1e-5, sigma=2.5e-6)
        draws = dist.sample(rng, (100, 100))
        assert draws.shape == (100, 100)
        assert abs(float(np.mean(draws)) - 1e-5) < 1e-7
        assert abs(float(np.std(draws)) - 2.5e-6) < 1e-7

    def test_negative_sigma_rejected(self):
        with pytest.raises(ConfigurationError):
            AmplitudeDistribution(sigma=-1e-6)

    def test_sample_surface_keeps_structure(self, patch):
        rng = np.random.default_rng(5)
        template = RbfSurface.flat(patch, (4, 4))
        drawn = sample_surface(rng, template, AmplitudeDistribution())
        assert drawn.grid == template.grid
        assert drawn.beta == template.beta
        assert not np.all(drawn.amplitudes == 0.0)


class TestPoseSampler:
    def test_sampled_pose_is_fully_visible(self, intrinsics, cone, flat_surface):
        rng = np.random.default_rng(11)
        sampler = PoseSampler(depth_range=(0.3, 1.5), rotation_range_deg=25.0)
        pose = sampler.sample_pose(rng, intrinsics, cone, flat_surface, 0.03, 7)
        assert 0.3 <= pose.translation[2] <= 1.5
        params = SceneParams(intrinsics=intrinsics, cone=cone, surface=flat_surface, poses=(pose,))
        pixels, converged = project_corners(params, 0, pose.corner_board_coords())
        assert np.all(converged)
        assert np.all((pixels >= 0.0) & (pixels < [intrinsics.width, intrinsics.height]))

    def test_deterministic_given_seed(self, intrinsics, cone, flat_surface):
        sampler = PoseSampler()
        a = sampler.sample_pose(np.random.default_rng(17), intrinsics, cone, flat_surface, 0.03, 7)
        b = sampler.sample_pose(np.random.default_rng(17), intrinsics, cone, flat_surface, 0.03, 7)
        assert np.array_equal(a.rotation, b.rotation)
        assert np.array_equal(a.translation, b.translation)

    def test_impossible_constraints_raise(self, intrinsics, cone, flat_surface):
        rng = np.random.default_rng(19)
        sampler = PoseSampler(depth_range=(0.3, 0.3), max_attempts=5)
        # a meter-scale board cannot fit the field of view at 0.3 m
        with pytest.raises(ConfigurationError):
            sampler.sample_pose(rng, intrinsics, cone, flat_surface, 0.2, 7)

    def test_parameter_validation(self):
        with pytest.raises(ConfigurationError):
            PoseSampler(depth_range=(0.0, 1.0))
        with pytest.raises(ConfigurationError):
            PoseSampler(rotation_range_deg=90.0)
        with pytest.raises(ConfigurationError):
            PoseSampler(lateral_margin=0.0)
        with pytest.raises(ConfigurationError):
            PoseSampler(max_attempts=0)


class TestProjectCorners:
    def test_round_trip_through_raycast(self, scene_zero):
        for idx, pose in enumerate(scene_zero.poses):
            targets = pose.corner_board_coords()
            pixels, converged = project_corners(scene_zero, idx, targets)
            assert np.all(converged)
            local, status = raycast_pixels(scene_zero, idx, pixels)
            assert np.all(status == TraceStatus.OK)
            assert np.max(np.linalg.norm(local - targets, axis=-1)) <= 1e-9

    def test_round_trip_with_irregular_field(self, scene_zero):
        rng = np.random.default_rng(23)
        amps = rng.normal(1e-5, 2.5e-6, size=scene_zero.surface.grid)
        params = scene_zero.with_surface(scene_zero.surface.with_amplitudes(amps))
        targets = params.poses[0].corner_board_coords()
        pixels, converged = project_corners(params, 0, targets)
        assert np.all(converged)
        local, status = raycast_pixels(params, 0, pixels)
        assert np.all(status == TraceStatus.OK)
        assert np.max(np.linalg.norm(local - targets, axis=-1)) <= 1e-9

    def test_matches_grid_search(self, scene_zero):
        from conecal.camera import pinhole_project

        rng = np.random.default_rng(29)
        pose = scene_zero.poses[1]
        targets = rng.uniform(-0.08, 0.08, size=(12, 2))
        pixels, converged = project_corners(scene_zero, 1, targets)
        assert np.all(converged)
        for target, pixel in zip(targets, pixels):
            seed_px = pinhole_project(scene_zero.intrinsics, pose.board_to_world(target))
            reference = grid_search_project(scene_zero, 1, target, seed_px, half_width=60.0)
            assert reference is not None
            assert np.max(np.abs(pixel - reference)) < 1e-3

    def test_single_corner_helper(self, scene_zero):
        pixel = project_corner(scene_zero, 0, np.array([0.03, -0.06]))
        local, status = raycast_pixels(scene_zero, 0, pixel[None, :])
        assert status[0] == TraceStatus.OK
        np.testing.assert_allclose(local[0], [0.03, -0.06], atol=1e-9)

    def test_behind_camera_rejected(self, scene_zero, poses):
        import dataclasses

        flipped = dataclasses.replace(
            poses[0], translation=np.array([0.0, 0.0, -0.6]), rotation=poses[0].rotation
        )
        params = scene_zero.with_poses((flipped,))
        with pytest.raises(DataError):
            project_corners(params, 0, flipped.corner_board_coords())


class TestGenerateDataset:
    def make(self, intrinsics, cone, patch, **kwargs):
        template = RbfSurface.flat(patch, kwargs.pop("grid", (4, 4)))
        defaults = dict(
            n_images=3,
            amplitude_dist=AmplitudeDistribution(),
            pose_sampler=PoseSampler(depth_range=(0.4, 1.2)),
            seed=101,
        )
        defaults.update(kwargs)
        return generate_dataset(intrinsics, cone, template, **defaults)

    def test_deterministic_for_seed(self, intrinsics, cone, patch):
        a = self.make(intrinsics, cone, patch)
        b = self.make(intrinsics, cone, patch)
        assert isinstance(a, GeneratedDataset)
        assert np.array_equal(a.params.surface.amplitudes, b.params.surface.amplitudes)
        for im_a, im_b in zip(a.observations.images, b.observations.images):
            assert np.array_equal(im_a.pixels, im_b.pixels)
            assert np.array_equal(im_a.initial_pose.rotation, im_b.initial_pose.rotation)

    def test_seeds_differ(self, intrinsics, cone, patch):
        a = self.make(intrinsics, cone, patch, seed=101)
        b = self.make(intrinsics, cone, patch, seed=102)
        assert not np.array_equal(a.params.surface.amplitudes, b.params.surface.amplitudes)

    def test_pixels_raycast_back_to_corners(self, intrinsics, cone, patch):
        data = self.make(intrinsics, cone, patch)
        for im in data.observations.images:
            local, status = raycast_pixels(data.params, im.image_index, im.pixels)
            assert np.all(status == TraceStatus.OK)
            err = np.linalg.norm(local - im.board_local(), axis=-1)
            assert np.max(err) <= 1e-9

    def test_noise_statistics(self, intrinsics, cone, patch):
        clean = self.make(intrinsics, cone, patch, noise_sigma_px=0.0)
        noisy = self.make(intrinsics, cone, patch, noise_sigma_px=0.3)
        diffs = np.concatenate(
            [
                (na.pixels - ca.pixels).ravel()
                for na, ca in zip(noisy.observations.images, clean.observations.images)
            ]
        )
        assert diffs.size >= 200
        assert abs(float(np.std(diffs)) - 0.3) < 0.05
        assert abs(float(np.mean(diffs))) < 0.05
        # the underlying geometry is untouched by the noise draw
        assert np.array_equal(
            clean.params.surface.amplitudes, noisy.params.surface.amplitudes
        )

    def test_clean_pixels_inside_sensor(self, intrinsics, cone, patch):
        data = self.make(intrinsics, cone, patch)
        for im in data.observations.images:
            assert np.all(im.pixels >= 0.0)
            assert np.all(im.pixels < [intrinsics.width, intrinsics.height])
            assert im.n_corners == 49  # margins keep the whole board visible

    def test_fixed_amplitudes_pass_through(self, intrinsics, cone, patch):
        template = RbfSurface.flat(patch, (3, 3)).with_amplitudes(np.full((3, 3), 2e-5))
        data = generate_dataset(
            intrinsics,
            cone,
            template,
            n_images=1,
            pose_sampler=PoseSampler(depth_range=(0.5, 0.8)),
            seed=7,
        )
        assert np.array_equal(data.params.surface.amplitudes, template.amplitudes)

    def test_validation(self, intrinsics, cone, patch):
        template = RbfSurface.flat(patch, (3, 3))
        with pytest.raises(ConfigurationError):
            generate_dataset(intrinsics, cone, template, n_images=0)
        with pytest.raises(ConfigurationError):
            generate_dataset(intrinsics, cone, template, n_images=1, noise_sigma_px=-0.1)
