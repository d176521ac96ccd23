"""Shared fixtures for the FinRay Tactile Lab test suite."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from simgel import SensorGeometry, TactileImage  # noqa: E402


@pytest.fixture
def small_geometry():
    """Coarse 48x36 canvas at 1 mm/px; still spans the 10-50 mm sensing range."""
    return SensorGeometry(rows=48, cols=36, resolution_mm_per_px=1.0, axis_center_mm=30.0,
                          blur_sigma_px=1.0, imprint_threshold_mm=0.02)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def pattern_image():
    """Smooth asymmetric test pattern, 96x96x3."""
    rows, cols = np.meshgrid(np.arange(96.0), np.arange(96.0), indexing="ij")
    red = 0.5 + 0.2 * np.sin(2 * np.pi * cols / 64.0)
    green = 0.5 + 0.2 * np.cos(2 * np.pi * rows / 64.0)
    blue = 0.3 + 0.4 * (rows + 2 * cols) / (3 * 95.0)
    return TactileImage(np.stack([red, green, blue], axis=-1))


@pytest.fixture
def output_dir(tmp_path):
    path = tmp_path / "out"
    path.mkdir()
    return path
