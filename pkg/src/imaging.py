"""Unwarping, augmentation and raw-pixel features for tactile frames."""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy.ndimage import map_coordinates

# Handle imports - try relative first, then absolute
try:
    from .exceptions import DimensionMismatchError, InvalidArgumentError, InvalidCalibrationError
    from .logger import Logger
    from .simgel import TactileImage
except ImportError:
    from exceptions import DimensionMismatchError, InvalidArgumentError, InvalidCalibrationError
    from logger import Logger
    from simgel import TactileImage

logger = Logger.get_logger(__name__)

RADIAL_INVERSION_STEPS = 30


@dataclass(frozen=True)
class UnwarpCalibration:
    """Maps rectified output pixels to distorted raw-frame pixels.

    An output pixel (col, row) goes through the homography to undistorted
    raw coordinates, then through the radial model
    d = c + (q - c) * (1 + k1 r^2 + k2 r^4), with r measured in units of
    half the larger raw dimension.
    """
    homography: Tuple[float, ...]
    radial_k1: float
    radial_k2: float
    output_size: Tuple[int, int]

    def __post_init__(self):
        if len(self.homography) != 9:
            raise InvalidCalibrationError("Homography needs 9 values (row-major 3x3)")
        if abs(np.linalg.det(self.matrix)) <= 1e-9:
            raise InvalidCalibrationError("Homography is singular")
        if self.output_size[0] < 1 or self.output_size[1] < 1:
            raise InvalidCalibrationError(f"Invalid output size {self.output_size}")

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.homography, dtype=np.float64).reshape(3, 3)

    @classmethod
    def identity(cls, size: Tuple[int, int]) -> "UnwarpCalibration":
        return cls(tuple(np.eye(3).ravel()), 0.0, 0.0, (int(size[0]), int(size[1])))

    @classmethod
    def from_matrix(cls, matrix, k1: float = 0.0, k2: float = 0.0,
                    output_size: Tuple[int, int] = (160, 120)) -> "UnwarpCalibration":
        values = tuple(float(x) for x in np.asarray(matrix, dtype=np.float64).ravel())
        return cls(values, float(k1), float(k2), (int(output_size[0]), int(output_size[1])))

    def to_config(self) -> dict:
        """Flat key-value block: 9 homography reals row-major, k1, k2, H, W."""
        block = {f"h{i}": repr(v) for i, v in enumerate(self.homography)}
        block.update({"k1": repr(self.radial_k1), "k2": repr(self.radial_k2),
                      "height": str(self.output_size[0]), "width": str(self.output_size[1])})
        return block

    @classmethod
    def from_config(cls, block) -> "UnwarpCalibration":
        try:
            values = tuple(float(block[f"h{i}"]) for i in range(9))
            return cls(values, float(block["k1"]), float(block["k2"]),
                       (int(block["height"]), int(block["width"])))
        except (KeyError, ValueError) as e:
            raise InvalidCalibrationError(f"Malformed calibration block: {e}")


def _radial_frame(shape: Tuple[int, int]):
    rows, cols = shape
    center = np.array([(cols - 1) / 2.0, (rows - 1) / 2.0])
    scale = max(rows, cols) / 2.0
    return center, scale


def _distort(x, y, k1, k2, center, scale):
    xn = (x - center[0]) / scale
    yn = (y - center[1]) / scale
    r2 = xn ** 2 + yn ** 2
    factor = 1.0 + k1 * r2 + k2 * r2 ** 2
    return center[0] + xn * factor * scale, center[1] + yn * factor * scale


def _undistort(x, y, k1, k2, center, scale):
    """Fixed-point inverse of the radial model."""
    xd = (x - center[0]) / scale
    yd = (y - center[1]) / scale
    xn, yn = xd.copy(), yd.copy()
    for _ in range(RADIAL_INVERSION_STEPS):
        r2 = xn ** 2 + yn ** 2
        factor = 1.0 + k1 * r2 + k2 * r2 ** 2
        xn, yn = xd / factor, yd / factor
    return center[0] + xn * scale, center[1] + yn * scale


def _apply_homography(matrix: np.ndarray, x: np.ndarray, y: np.ndarray):
    pts = np.stack([x.ravel(), y.ravel(), np.ones(x.size)])
    mapped = matrix @ pts
    w = mapped[2]
    if np.any(np.abs(w) < 1e-12):
        raise InvalidCalibrationError("Homography maps output pixels to infinity")
    return (mapped[0] / w).reshape(x.shape), (mapped[1] / w).reshape(x.shape)


def _sample_bilinear(pixels: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    channels = [map_coordinates(pixels[:, :, c], [y, x], order=1, mode="nearest")
                for c in range(pixels.shape[2])]
    return np.stack(channels, axis=-1)


def unwarp(raw: TactileImage, cal: UnwarpCalibration) -> TactileImage:
    """Resample a raw frame into the rectified tactile-region rectangle."""
    out_h, out_w = cal.output_size
    rows, cols = np.meshgrid(np.arange(out_h, dtype=np.float64),
                             np.arange(out_w, dtype=np.float64), indexing="ij")
    qx, qy = _apply_homography(cal.matrix, cols, rows)
    if cal.radial_k1 != 0.0 or cal.radial_k2 != 0.0:
        center, scale = _radial_frame(raw.pixels.shape[:2])
        qx, qy = _distort(qx, qy, cal.radial_k1, cal.radial_k2, center, scale)
    pixels = np.clip(_sample_bilinear(raw.pixels, qx, qy), 0.0, 1.0)
    return TactileImage(pixels, seed=raw.seed, contact=raw.contact, meta=dict(raw.meta))


def warp(rectified: TactileImage, cal: UnwarpCalibration,
         raw_size: Optional[Tuple[int, int]] = None) -> TactileImage:
    """Synthesize the distorted raw frame that `unwarp` would rectify back."""
    raw_h, raw_w = raw_size or rectified.pixels.shape[:2]
    rows, cols = np.meshgrid(np.arange(raw_h, dtype=np.float64),
                             np.arange(raw_w, dtype=np.float64), indexing="ij")
    qx, qy = cols, rows
    if cal.radial_k1 != 0.0 or cal.radial_k2 != 0.0:
        center, scale = _radial_frame((raw_h, raw_w))
        qx, qy = _undistort(qx, qy, cal.radial_k1, cal.radial_k2, center, scale)
    px, py = _apply_homography(np.linalg.inv(cal.matrix), qx, qy)
    pixels = np.clip(_sample_bilinear(rectified.pixels, px, py), 0.0, 1.0)
    return TactileImage(pixels, seed=rectified.seed, contact=rectified.contact,
                        meta=dict(rectified.meta))


def area_resize(pixels: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Area-averaged resize of an HxWxC array to (h, w)."""
    h, w = int(size[0]), int(size[1])
    src_h, src_w = pixels.shape[:2]
    if (h, w) == (src_h, src_w):
        return pixels.astype(np.float64, copy=True)
    if src_h % h == 0 and src_w % w == 0:
        fh, fw = src_h // h, src_w // w
        return pixels.reshape(h, fh, w, fw, -1).mean(axis=(1, 3))
    channels = []
    for c in range(pixels.shape[2]):
        plane = Image.fromarray(pixels[:, :, c].astype(np.float32), mode="F")
        channels.append(np.asarray(plane.resize((w, h), resample=Image.BOX), dtype=np.float64))
    return np.stack(channels, axis=-1)


@dataclass(frozen=True)
class AugmentPolicy:
    flip_lr: bool = False
    brightness_jitter: float = 0.0
    contrast_jitter: float = 0.0
    geometric_allowed: bool = False
    max_shift_px: int = 0

    def __post_init__(self):
        if self.brightness_jitter < 0 or self.contrast_jitter < 0:
            raise InvalidArgumentError("Jitter magnitudes must be nonnegative")
        if self.max_shift_px < 0:
            raise InvalidArgumentError("max_shift_px must be nonnegative")
        if self.max_shift_px > 0 and not self.geometric_allowed:
            raise InvalidArgumentError("Row shifts need geometric_allowed")

    def validate_for(self, kind: str) -> "AugmentPolicy":
        """Regression labels depend on geometry; refuse geometric policies there."""
        if kind == "regression" and self.geometric_allowed:
            raise InvalidArgumentError("Geometric augmentation corrupts position labels")
        return self


@dataclass(frozen=True)
class AugmentDraw:
    flip: bool
    brightness_delta: float
    contrast_factor: float
    shift_rows: int


def sample_augmentation(policy: AugmentPolicy, seed: int, force_flip: Optional[bool] = None) -> AugmentDraw:
    rng = np.random.default_rng(seed)
    flip = bool(rng.random() < 0.5) if policy.flip_lr else False
    if force_flip is not None:
        flip = force_flip
    delta = float(rng.uniform(-policy.brightness_jitter, policy.brightness_jitter)) \
        if policy.brightness_jitter > 0 else 0.0
    factor = 1.0 + float(rng.uniform(-policy.contrast_jitter, policy.contrast_jitter)) \
        if policy.contrast_jitter > 0 else 1.0
    shift = int(rng.integers(-policy.max_shift_px, policy.max_shift_px + 1)) \
        if policy.geometric_allowed and policy.max_shift_px > 0 else 0
    return AugmentDraw(flip, delta, factor, shift)


def apply_augmentation(pixels: np.ndarray, draw: AugmentDraw, clamp: bool = True) -> np.ndarray:
    out = pixels[:, ::-1, :] if draw.flip else pixels
    if draw.contrast_factor != 1.0:
        mean = out.mean(axis=(0, 1), keepdims=True)
        out = (out - mean) * draw.contrast_factor + mean
    if draw.brightness_delta != 0.0:
        out = out + draw.brightness_delta
    if draw.shift_rows:
        out = np.roll(out, draw.shift_rows, axis=0)
    out = np.array(out, dtype=np.float64)
    return np.clip(out, 0.0, 1.0) if clamp else out


def augment(img: TactileImage, policy: AugmentPolicy, seed: int,
            force_flip: Optional[bool] = None) -> TactileImage:
    draw = sample_augmentation(policy, seed, force_flip)
    return TactileImage(apply_augmentation(img.pixels, draw), seed=img.seed,
                        contact=img.contact, meta=dict(img.meta))


@dataclass(frozen=True)
class FeatureStandardizer:
    """Column statistics of the training feature matrix."""
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "FeatureStandardizer":
        features = np.asarray(features, dtype=np.float64)
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        mean.setflags(write=False)
        std.setflags(write=False)
        return cls(mean, std)

    def transform(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.shape[-1] != self.mean.shape[0]:
            raise DimensionMismatchError(
                f"Feature length {features.shape[-1]} != trained length {self.mean.shape[0]}")
        return (features - self.mean) / self.std


@dataclass(frozen=True)
class ChannelNormalizer:
    """Per-channel statistics for network inputs (NCHW)."""
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, images: np.ndarray) -> "ChannelNormalizer":
        mean = images.mean(axis=(0, 2, 3))
        std = images.std(axis=(0, 2, 3))
        return cls(mean, np.where(std > 1e-12, std, 1.0))

    def transform(self, images: np.ndarray) -> np.ndarray:
        return (images - self.mean[None, :, None, None]) / self.std[None, :, None, None]


def raw_pixel_features(img: TactileImage, downsample_to: Sequence[int] = (32, 24),
                       standardizer: Optional[FeatureStandardizer] = None) -> np.ndarray:
    """Area-averaged downsample, channel planes concatenated row-major."""
    h, w = int(downsample_to[0]), int(downsample_to[1])
    if h < 4 or w < 4:
        raise InvalidArgumentError(f"Feature grid must be at least 4x4, got {h}x{w}")
    small = area_resize(img.pixels, (h, w))
    vector = small.transpose(2, 0, 1).ravel()
    return standardizer.transform(vector) if standardizer is not None else vector
