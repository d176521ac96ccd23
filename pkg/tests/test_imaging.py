"""Tests for unwarping, augmentation and raw-pixel features."""

import numpy as np
import pytest

from exceptions import DimensionMismatchError, InvalidArgumentError, InvalidCalibrationError
from imaging import (AugmentDraw, AugmentPolicy, ChannelNormalizer, FeatureStandardizer,
                     UnwarpCalibration, apply_augmentation, area_resize, augment,
                     raw_pixel_features, sample_augmentation, unwarp, warp)
from simgel import TactileImage


def _blob(size, center, sigma=2.0):
    rows, cols = np.meshgrid(np.arange(float(size)), np.arange(float(size)), indexing="ij")
    plane = np.exp(-((rows - center[0]) ** 2 + (cols - center[1]) ** 2) / (2 * sigma ** 2))
    return TactileImage(np.repeat(plane[:, :, None], 3, axis=2))


def _centroid(pixels):
    plane = pixels[:, :, 0]
    rows, cols = np.meshgrid(np.arange(plane.shape[0]), np.arange(plane.shape[1]), indexing="ij")
    total = plane.sum()
    return (rows * plane).sum() / total, (cols * plane).sum() / total


class TestUnwarp:
    def test_identity_calibration_reproduces_input(self, pattern_image):
        out = unwarp(pattern_image, UnwarpCalibration.identity((96, 96)))
        assert np.abs(out.pixels - pattern_image.pixels).max() <= 1e-6

    def test_singular_homography_rejected(self):
        with pytest.raises(InvalidCalibrationError):
            UnwarpCalibration((0.0,) * 9, 0.0, 0.0, (10, 10))

    def test_rotation_and_inverse_round_trip(self, pattern_image):
        n = 96
        rotation = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, n - 1.0], [0.0, 0.0, 1.0]])
        rotated = unwarp(pattern_image, UnwarpCalibration.from_matrix(rotation, output_size=(n, n)))
        np.testing.assert_allclose(rotated.pixels, np.rot90(pattern_image.pixels, -1, axes=(0, 1)),
                                   atol=1e-9)
        back = unwarp(rotated, UnwarpCalibration.from_matrix(np.linalg.inv(rotation), output_size=(n, n)))
        assert np.abs(back.pixels - pattern_image.pixels).mean() < 0.5 / 255

    def test_radial_warp_round_trip(self, pattern_image):
        cal = UnwarpCalibration.from_matrix(np.eye(3), k1=0.1, output_size=(96, 96))
        restored = unwarp(warp(pattern_image, cal), cal)
        interior = (slice(16, 80), slice(16, 80))
        assert np.abs(restored.pixels[interior] - pattern_image.pixels[interior]).mean() < 0.5 / 255

    def test_radial_warp_recovers_marker_position(self):
        marker = _blob(96, (20.0, 20.0))
        cal = UnwarpCalibration.from_matrix(np.eye(3), k1=0.1, output_size=(96, 96))
        warped = warp(marker, cal)
        restored = unwarp(warped, cal)
        warped_row, warped_col = _centroid(warped.pixels)
        row, col = _centroid(restored.pixels)
        assert abs(warped_row - 20.0) > 1.0
        assert abs(row - 20.0) <= 0.5 and abs(col - 20.0) <= 0.5

    def test_output_size_follows_calibration(self, pattern_image):
        cal = UnwarpCalibration.from_matrix(np.diag([2.0, 2.0, 1.0]), output_size=(48, 40))
        assert unwarp(pattern_image, cal).shape == (48, 40, 3)

    def test_config_block_round_trip(self):
        cal = UnwarpCalibration.from_matrix([[1.0, 0.1, 2.0], [0.0, 0.9, -1.0], [0.0, 0.0, 1.0]],
                                            k1=0.05, k2=-0.01, output_size=(160, 120))
        assert UnwarpCalibration.from_config(cal.to_config()) == cal

    def test_malformed_config_block_rejected(self):
        with pytest.raises(InvalidCalibrationError):
            UnwarpCalibration.from_config({"h0": "1"})


class TestAugment:
    def test_null_policy_is_identity(self, pattern_image):
        out = augment(pattern_image, AugmentPolicy(), seed=9)
        assert np.array_equal(out.pixels, pattern_image.pixels)

    def test_forced_flip_is_involution(self, pattern_image):
        policy = AugmentPolicy(flip_lr=True)
        once = augment(pattern_image, policy, seed=1, force_flip=True)
        twice = augment(once, policy, seed=1, force_flip=True)
        assert not np.array_equal(once.pixels, pattern_image.pixels)
        assert np.array_equal(twice.pixels, pattern_image.pixels)

    def test_brightness_shifts_mean_by_sampled_delta(self, pattern_image):
        policy = AugmentPolicy(brightness_jitter=0.1)
        draw = sample_augmentation(policy, seed=42)
        assert draw == sample_augmentation(policy, seed=42)
        assert 0 < abs(draw.brightness_delta) <= 0.1
        shifted = apply_augmentation(pattern_image.pixels, draw, clamp=False)
        assert shifted.mean() - pattern_image.pixels.mean() == pytest.approx(draw.brightness_delta, abs=1e-12)

    def test_output_clamped(self, pattern_image):
        draw = AugmentDraw(flip=False, brightness_delta=0.9, contrast_factor=1.5, shift_rows=0)
        out = apply_augmentation(pattern_image.pixels, draw)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_row_shift_needs_geometric_policy(self):
        with pytest.raises(InvalidArgumentError):
            AugmentPolicy(max_shift_px=2)
        policy = AugmentPolicy(geometric_allowed=True, max_shift_px=2)
        assert abs(sample_augmentation(policy, seed=3).shift_rows) <= 2

    def test_geometric_policy_refused_for_regression(self):
        policy = AugmentPolicy(geometric_allowed=True)
        assert policy.validate_for("classification") is policy
        with pytest.raises(InvalidArgumentError):
            policy.validate_for("regression")

    def test_negative_jitter_rejected(self):
        with pytest.raises(InvalidArgumentError):
            AugmentPolicy(brightness_jitter=-0.1)


class TestFeatures:
    def test_uniform_image_gives_uniform_vector(self):
        image = TactileImage(np.full((64, 48, 3), 0.5))
        vector = raw_pixel_features(image, (32, 24))
        assert vector.shape == (32 * 24 * 3,)
        np.testing.assert_allclose(vector, 0.5)

    def test_block_mean(self):
        block = np.array([[0.0, 0.0], [1.0, 1.0]])[:, :, None]
        assert area_resize(block, (1, 1))[0, 0, 0] == pytest.approx(0.5)

    def test_non_integer_resize_keeps_mean(self, pattern_image):
        small = area_resize(pattern_image.pixels, (40, 30))
        assert small.shape == (40, 30, 3)
        np.testing.assert_allclose(small.mean(axis=(0, 1)), pattern_image.pixels.mean(axis=(0, 1)),
                                   atol=1e-2)

    def test_channel_planes_concatenated(self):
        pixels = np.zeros((8, 8, 3))
        pixels[:, :, 1] = 1.0
        vector = raw_pixel_features(TactileImage(pixels), (4, 4))
        assert np.all(vector[:16] == 0.0)
        assert np.all(vector[16:32] == 1.0)
        assert np.all(vector[32:] == 0.0)

    def test_grid_too_small_rejected(self, pattern_image):
        with pytest.raises(InvalidArgumentError):
            raw_pixel_features(pattern_image, (3, 8))

    def test_standardizer_uses_training_statistics(self, rng):
        train = rng.normal(3.0, 2.0, size=(200, 12))
        val = rng.normal(-1.0, 0.5, size=(50, 12))
        standardizer = FeatureStandardizer.fit(train)
        transformed = standardizer.transform(train)
        assert np.all(np.abs(transformed.mean(axis=0)) < 1e-9)
        np.testing.assert_allclose(transformed.std(axis=0), 1.0, atol=1e-6)
        np.testing.assert_allclose(standardizer.mean, train.mean(axis=0))
        assert not np.allclose(FeatureStandardizer.fit(val).mean, standardizer.mean)

    def test_standardizer_is_immutable(self, rng):
        standardizer = FeatureStandardizer.fit(rng.normal(size=(10, 4)))
        with pytest.raises(ValueError):
            standardizer.mean[0] = 1.0

    def test_standardizer_rejects_other_length(self, rng):
        standardizer = FeatureStandardizer.fit(rng.normal(size=(10, 4)))
        with pytest.raises(DimensionMismatchError):
            standardizer.transform(np.zeros(5))

    def test_standardized_features(self, rng):
        images = [TactileImage(rng.random((16, 16, 3))) for _ in range(6)]
        raw = np.stack([raw_pixel_features(img, (4, 4)) for img in images])
        standardizer = FeatureStandardizer.fit(raw)
        vector = raw_pixel_features(images[0], (4, 4), standardizer)
        np.testing.assert_allclose(vector, standardizer.transform(raw[0]))

    def test_channel_normalizer(self, rng):
        batch = rng.normal(2.0, 3.0, size=(8, 3, 5, 5))
        normalized = ChannelNormalizer.fit(batch).transform(batch)
        np.testing.assert_allclose(normalized.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
        np.testing.assert_allclose(normalized.std(axis=(0, 2, 3)), 1.0, atol=1e-12)
