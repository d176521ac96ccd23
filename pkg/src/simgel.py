"""Synthetic tactile image simulator for a gel-skinned Fin Ray finger.

The pipeline is make_indenter -> indentation_depth -> deform_membrane ->
shade, with optional seeded pixel noise on top (render). All functions are
pure; randomness only enters through explicit seeds.
"""

import json
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter, map_coordinates

# Handle imports - try relative first, then absolute
try:
    from .exceptions import ConfigurationError, DataError, InvalidArgumentError
    from .logger import Logger
except ImportError:
    from exceptions import ConfigurationError, DataError, InvalidArgumentError
    from logger import Logger

logger = Logger.get_logger(__name__)

SIM_PARAMS_VERSION = "1"
DEFAULT_PARAMS_PATH = Path(__file__).parent / "sim_params.json"
RAW_MAGIC = b"FTIMG1"


class IndenterKind(str, Enum):
    CYLINDER = "Cylinder"
    CUBOID = "Cuboid"
    NUT_TEXTURE = "NutTexture"


class NutClass(str, Enum):
    """Nut classes in label-index order."""
    ALMOND = "Almond"
    BRAZIL_NUT = "BrazilNut"
    PECAN = "Pecan"
    WALNUT = "Walnut"

    @property
    def label_index(self) -> int:
        return list(NutClass).index(self)

    @classmethod
    def from_index(cls, index: int) -> "NutClass":
        return list(cls)[index]

    @property
    def display_name(self) -> str:
        return {"BrazilNut": "Brazil Nut"}.get(self.value, self.value)


@dataclass(frozen=True)
class SimParams:
    """Versioned texture / compliance / lighting / canvas table."""
    version: str
    canvas: Dict[str, float]
    compliance: Dict[str, Dict[str, float]]
    lighting: Dict[str, Any]
    noise_std: float
    cylinder: Dict[str, float]
    cuboid: Dict[str, float]
    textures: Dict[str, Dict[str, float]]
    separation: Dict[str, float]

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SimParams":
        version = str(data.get("version"))
        if version != SIM_PARAMS_VERSION:
            raise ConfigurationError(
                f"Unsupported simulator parameter table version {version!r} "
                f"(expected {SIM_PARAMS_VERSION!r})"
            )
        try:
            return cls(
                version=version,
                canvas=dict(data["canvas"]),
                compliance={k: dict(v) for k, v in data["compliance"].items()},
                lighting=dict(data["lighting"]),
                noise_std=float(data["noise_std"]),
                cylinder=dict(data["cylinder"]),
                cuboid=dict(data["cuboid"]),
                textures={k: dict(v) for k, v in data["textures"].items()},
                separation=dict(data.get("separation", {})),
            )
        except KeyError as e:
            raise ConfigurationError(f"Simulator parameter table missing section {e}")


@lru_cache(maxsize=8)
def load_sim_params(path: Optional[str] = None) -> SimParams:
    """Load (and cache) the simulator parameter table."""
    params_path = Path(path) if path else DEFAULT_PARAMS_PATH
    try:
        with open(params_path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"Cannot read simulator parameters {params_path}: {e}")
    return SimParams.from_dict(data)


@dataclass(frozen=True)
class SensorGeometry:
    """Canvas layout. Rows run along the finger length."""
    rows: int = 160
    cols: int = 120
    resolution_mm_per_px: float = 0.33
    axis_center_mm: float = 30.0
    blur_sigma_px: float = 1.0
    imprint_threshold_mm: float = 0.02

    def __post_init__(self):
        if self.rows < 8 or self.cols < 8:
            raise InvalidArgumentError(f"Canvas must be at least 8x8, got {self.rows}x{self.cols}")
        if self.resolution_mm_per_px <= 0:
            raise InvalidArgumentError("resolution_mm_per_px must be positive")

    @classmethod
    def from_params(cls, params: Optional[SimParams] = None, **overrides) -> "SensorGeometry":
        params = params or load_sim_params()
        values = {k: params.canvas[k] for k in (
            "rows", "cols", "resolution_mm_per_px", "axis_center_mm",
            "blur_sigma_px", "imprint_threshold_mm")}
        values.update(overrides)
        values["rows"] = int(values["rows"])
        values["cols"] = int(values["cols"])
        return cls(**values)

    def position_to_row(self, position_mm: float) -> float:
        return self.rows / 2.0 + (position_mm - self.axis_center_mm) / self.resolution_mm_per_px

    def lateral_to_col(self, lateral_offset_mm: float) -> float:
        return self.cols / 2.0 + lateral_offset_mm / self.resolution_mm_per_px


@dataclass(frozen=True)
class IndenterSpec:
    kind: IndenterKind
    size_mm: float
    nut_class: Optional[NutClass] = None
    texture_seed: int = 0

    def __post_init__(self):
        if not self.size_mm > 0:
            raise InvalidArgumentError(f"Indenter size must be positive, got {self.size_mm}")
        if self.kind == IndenterKind.NUT_TEXTURE and self.nut_class is None:
            raise InvalidArgumentError("NutTexture indenter requires a nut class")
        if self.kind != IndenterKind.NUT_TEXTURE and self.nut_class is not None:
            raise InvalidArgumentError(f"{self.kind.value} indenter takes no nut class")

    @classmethod
    def nut(cls, nut_class: NutClass, texture_seed: int = 0,
            params: Optional[SimParams] = None) -> "IndenterSpec":
        """Nut indenter at its reference size from the texture table."""
        params = params or load_sim_params()
        size = 2.0 * params.textures[nut_class.value]["half_length_mm"]
        return cls(IndenterKind.NUT_TEXTURE, size, nut_class, texture_seed)


@dataclass(frozen=True)
class ContactState:
    position_mm: float
    force_n: float
    lateral_offset_mm: float = 0.0
    angle_deg: float = 0.0

    def check_generation_range(self):
        if not 10.0 <= self.position_mm <= 50.0:
            raise InvalidArgumentError(f"Contact position {self.position_mm} mm outside [10, 50]")
        if not 0.0 <= self.force_n <= 25.0:
            raise InvalidArgumentError(f"Contact force {self.force_n} N outside [0, 25]")


@dataclass
class Heightmap:
    grid: np.ndarray
    resolution_mm_per_px: float

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.ndim != 2 or self.grid.shape[0] < 8 or self.grid.shape[1] < 8:
            raise InvalidArgumentError(f"Heightmap must be at least 8x8, got {self.grid.shape}")
        if not np.all(np.isfinite(self.grid)):
            raise InvalidArgumentError("Heightmap contains non-finite values")
        if not self.resolution_mm_per_px > 0:
            raise InvalidArgumentError("Heightmap resolution must be positive")


@dataclass
class TactileImage:
    pixels: np.ndarray
    seed: Optional[int] = None
    contact: Optional[ContactState] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise InvalidArgumentError(f"Tactile image must be HxWx3, got {self.pixels.shape}")

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.pixels.shape


def _local_grid(half_u_mm: float, half_v_mm: float, resolution: float):
    """Centered odd-sized sample grid, at least 8x8, in indenter mm coordinates."""
    n_u = max(2 * int(math.ceil(half_u_mm / resolution)) + 1, 9)
    n_v = max(2 * int(math.ceil(half_v_mm / resolution)) + 1, 9)
    u = (np.arange(n_u) - (n_u - 1) / 2.0) * resolution
    v = (np.arange(n_v) - (n_v - 1) / 2.0) * resolution
    return np.meshgrid(u, v, indexing="ij")


def _cylinder_relief(spec: IndenterSpec, params: SimParams, resolution: float) -> np.ndarray:
    radius = spec.size_mm / 2.0
    half_len = spec.size_mm * params.cylinder["length_factor"] / 2.0
    u, v = _local_grid(radius, half_len, resolution)
    inside = (np.abs(u) <= radius) & (np.abs(v) <= half_len)
    return np.where(inside, np.sqrt(np.clip(radius ** 2 - u ** 2, 0.0, None)), 0.0)


def _cuboid_relief(spec: IndenterSpec, params: SimParams, resolution: float) -> np.ndarray:
    half = spec.size_mm / 2.0
    top = spec.size_mm * params.cuboid["height_fraction"]
    fillet = spec.size_mm * params.cuboid["fillet_fraction"]
    u, v = _local_grid(half, half, resolution)
    edge = np.minimum(half - np.abs(u), half - np.abs(v))
    inset = np.clip(fillet - edge, 0.0, fillet)
    drop = fillet - np.sqrt(np.clip(fillet ** 2 - inset ** 2, 0.0, None))
    return np.where(edge >= 0, top - drop, 0.0)


def _nut_relief(spec: IndenterSpec, params: SimParams, resolution: float) -> np.ndarray:
    table = params.textures[spec.nut_class.value]
    scale = spec.size_mm / (2.0 * table["half_length_mm"])
    a = table["half_length_mm"] * scale
    b = table["half_width_mm"] * scale
    height = table["body_height_mm"] * scale
    rng = np.random.default_rng(spec.texture_seed)
    u, v = _local_grid(a, b, resolution)
    ellipse = 1.0 - (u / a) ** 2 - (v / b) ** 2
    inside = ellipse > 0
    body = height * np.sqrt(np.clip(ellipse, 0.0, None))

    if spec.nut_class == NutClass.ALMOND:
        phase = rng.uniform(0, 2 * np.pi)
        relief = body + table["striation_amp_mm"] * np.cos(
            2 * np.pi * v / (table["striation_period_mm"] * scale) + phase)
        for _ in range(int(table["pit_count"])):
            cu, cv = rng.uniform(-0.8, 0.8) * a, rng.uniform(-0.8, 0.8) * b
            r = table["pit_radius_mm"] * scale
            relief -= table["pit_depth_mm"] * np.exp(-((u - cu) ** 2 + (v - cv) ** 2) / (2 * r ** 2))

    elif spec.nut_class == NutClass.BRAZIL_NUT:
        taper = np.clip((a - np.abs(u)) / (table["taper_fraction"] * a), 0.0, 1.0)
        n_facets = int(table["facet_count"])
        edges = np.linspace(-a, a, n_facets + 1)
        slopes = 1.0 + rng.uniform(-1, 1, size=(n_facets, 2)) * table["facet_slope_jitter"]
        facet = np.clip(np.searchsorted(edges, u, side="right") - 1, 0, n_facets - 1)
        side = (v >= 0).astype(int)
        relief = height * taper * np.clip(1.0 - slopes[facet, side] * np.abs(v) / b, 0.0, None)
        inside = (np.abs(u) <= a) & (np.abs(v) <= b)

    elif spec.nut_class == NutClass.PECAN:
        offset = table["groove_offset_fraction"] * b
        sigma = table["groove_sigma_mm"] * scale
        phase = rng.uniform(0, 2 * np.pi)
        relief = body + table["lobe_amp_mm"] * np.cos(2 * np.pi * u / a + phase)
        for center in (-offset, offset):
            relief -= table["groove_depth_mm"] * np.exp(-(v - center) ** 2 / (2 * sigma ** 2))

    else:
        waves = int(table["ridge_waves"])
        wavelength = table["ridge_wavelength_mm"] * scale
        angles = rng.uniform(0, np.pi, size=waves)
        phases = rng.uniform(0, 2 * np.pi, size=waves)
        acc = np.zeros_like(u)
        for theta, phi in zip(angles, phases):
            acc += np.cos(2 * np.pi * (u * np.cos(theta) + v * np.sin(theta)) / wavelength + phi)
        ridges = 1.0 - 2.0 * np.abs(acc) / waves
        relief = body + table["ridge_amp_mm"] * ridges

    return np.where(inside, np.clip(relief, 0.0, None), 0.0)


def make_indenter(spec: IndenterSpec, resolution: float,
                  params: Optional[SimParams] = None) -> Heightmap:
    """Sample the indenter's relief (mm toward the gel) on a local grid.

    Grid axis 0 maps to the finger axis at angle 0; the peak of the relief
    is the first point to touch the gel.
    """
    if not resolution > 0:
        raise InvalidArgumentError(f"Resolution must be positive, got {resolution}")
    if not spec.size_mm > 0:
        raise InvalidArgumentError(f"Indenter size must be positive, got {spec.size_mm}")
    params = params or load_sim_params()

    if spec.kind == IndenterKind.CYLINDER:
        grid = _cylinder_relief(spec, params, resolution)
    elif spec.kind == IndenterKind.CUBOID:
        grid = _cuboid_relief(spec, params, resolution)
    else:
        grid = _nut_relief(spec, params, resolution)
    return Heightmap(grid, resolution)


def indentation_depth(force_n: float, indenter: IndenterSpec,
                      params: Optional[SimParams] = None) -> float:
    """Saturating compliance law d_max * F / (F + k)."""
    if force_n < 0 or not math.isfinite(force_n):
        raise InvalidArgumentError(f"Force must be a finite nonnegative value, got {force_n}")
    params = params or load_sim_params()
    law = params.compliance[indenter.kind.value]
    return law["d_max_mm"] * force_n / (force_n + law["k_n"])


def deform_membrane(indenter: Heightmap, contact: ContactState, depth_mm: float,
                    geometry: Optional[SensorGeometry] = None) -> Heightmap:
    """Press the indenter into the gel and smooth the result.

    The gel height is max(relief - peak + depth, 0) under the indenter
    footprint and zero elsewhere, blurred with a fixed Gaussian.
    """
    if depth_mm < 0:
        raise InvalidArgumentError(f"Depth must be nonnegative, got {depth_mm}")
    geometry = geometry or SensorGeometry.from_params()
    res = geometry.resolution_mm_per_px
    canvas = np.zeros((geometry.rows, geometry.cols))
    if depth_mm == 0:
        return Heightmap(canvas, res)

    # canvas pixel -> indenter grid index (grids share the canvas resolution scale)
    rows, cols = np.meshgrid(np.arange(geometry.rows, dtype=np.float64),
                             np.arange(geometry.cols, dtype=np.float64), indexing="ij")
    du = (rows - geometry.position_to_row(contact.position_mm)) * res
    dv = (cols - geometry.lateral_to_col(contact.lateral_offset_mm)) * res
    theta = math.radians(contact.angle_deg)
    u = math.cos(theta) * du + math.sin(theta) * dv
    v = -math.sin(theta) * du + math.cos(theta) * dv
    grid = indenter.grid
    center_u = (grid.shape[0] - 1) / 2.0
    center_v = (grid.shape[1] - 1) / 2.0
    coords = [u / indenter.resolution_mm_per_px + center_u, v / indenter.resolution_mm_per_px + center_v]
    sampled = map_coordinates(grid, coords, order=1, mode="constant", cval=0.0)
    # only pixels under the indenter body can be pressed, however deep the press
    footprint = map_coordinates((grid > 0).astype(np.float64), coords,
                                order=1, mode="constant", cval=0.0) >= 0.5

    pressed = np.where(footprint, np.maximum(sampled - grid.max() + depth_mm, 0.0), 0.0)
    smoothed = gaussian_filter(pressed, geometry.blur_sigma_px, mode="constant", cval=0.0)
    return Heightmap(smoothed, res)


def light_directions(params: Optional[SimParams] = None) -> np.ndarray:
    """Unit vectors (x=cols, y=rows, z=up) of the three channel lights."""
    params = params or load_sim_params()
    elevation = math.radians(params.lighting["elevation_deg"])
    dirs = []
    for az_deg in params.lighting["azimuths_deg"]:
        az = math.radians(az_deg)
        dirs.append([math.cos(elevation) * math.cos(az),
                     math.cos(elevation) * math.sin(az),
                     math.sin(elevation)])
    return np.asarray(dirs)


def background_color(params: Optional[SimParams] = None) -> np.ndarray:
    """Color of the undeformed gel."""
    params = params or load_sim_params()
    lights = light_directions(params)
    diffuse = params.lighting["diffuse"] * np.clip(lights[:, 2], 0.0, None)
    return np.clip(params.lighting["ambient"] + diffuse, 0.0, 1.0)


def shade(deformed: Heightmap, params: Optional[SimParams] = None) -> TactileImage:
    """Lambertian shading under one directional light per color channel."""
    params = params or load_sim_params()
    h = deformed.grid
    res = deformed.resolution_mm_per_px
    dh_drow, dh_dcol = np.gradient(h, res)
    normals = np.stack([-dh_dcol, -dh_drow, np.ones_like(h)], axis=-1)
    normals /= np.linalg.norm(normals, axis=-1, keepdims=True)

    lights = light_directions(params)
    lambert = np.clip(normals @ lights.T, 0.0, None)
    pixels = params.lighting["ambient"] + params.lighting["diffuse"] * lambert
    return TactileImage(np.clip(pixels, 0.0, 1.0))


def render(contact: ContactState, spec: IndenterSpec, noise_std: float = 0.01, seed: int = 0,
           geometry: Optional[SensorGeometry] = None,
           params: Optional[SimParams] = None) -> TactileImage:
    """Render one synthetic tactile frame."""
    if noise_std < 0:
        raise InvalidArgumentError(f"noise_std must be nonnegative, got {noise_std}")
    params = params or load_sim_params()
    geometry = geometry or SensorGeometry.from_params(params)

    indenter = make_indenter(spec, geometry.resolution_mm_per_px, params)
    depth = indentation_depth(contact.force_n, spec, params)
    deformed = deform_membrane(indenter, contact, depth, geometry)
    image = shade(deformed, params)

    pixels = image.pixels
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        pixels = np.clip(pixels + rng.normal(0.0, noise_std, size=pixels.shape), 0.0, 1.0)
    return TactileImage(pixels, seed=seed, contact=contact,
                        meta={"indenter": spec.kind.value, "depth_mm": depth})


def imprint_mask(deformed: Heightmap, threshold_mm: float) -> np.ndarray:
    return deformed.grid > threshold_mm


def imprint_area(deformed: Heightmap, threshold_mm: float) -> int:
    return int(np.count_nonzero(imprint_mask(deformed, threshold_mm)))


def imprint_centroid(deformed: Heightmap, threshold_mm: float) -> Tuple[float, float]:
    """(row, col) centroid of the thresholded imprint."""
    rows, cols = np.nonzero(imprint_mask(deformed, threshold_mm))
    if rows.size == 0:
        raise InvalidArgumentError("No imprint above threshold")
    return float(rows.mean()), float(cols.mean())


def save_png(image: TactileImage, path) -> None:
    """8-bit-per-channel PNG."""
    data = np.round(np.clip(image.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    try:
        Image.fromarray(data, mode="RGB").save(str(path), format="PNG")
    except OSError as e:
        raise DataError(f"Cannot write image {path}: {e}")


def load_png(path) -> TactileImage:
    try:
        with Image.open(str(path)) as img:
            data = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as e:
        raise DataError(f"Cannot read image {path}: {e}")
    return TactileImage(data)


def save_raw(image: TactileImage, path) -> None:
    """FTIMG1 container: magic, u32 H, u32 W, u32 C, little-endian float32 row-major."""
    h, w, c = image.pixels.shape
    try:
        with open(path, 'wb') as f:
            f.write(RAW_MAGIC)
            f.write(struct.pack('<III', h, w, c))
            f.write(image.pixels.astype('<f4').tobytes(order='C'))
    except OSError as e:
        raise DataError(f"Cannot write raw image {path}: {e}")


def load_raw(path) -> TactileImage:
    try:
        with open(path, 'rb') as f:
            blob = f.read()
    except OSError as e:
        raise DataError(f"Cannot read raw image {path}: {e}")
    header = len(RAW_MAGIC) + 12
    if len(blob) < header or blob[:len(RAW_MAGIC)] != RAW_MAGIC:
        raise DataError(f"Not an FTIMG1 file: {path}")
    h, w, c = struct.unpack('<III', blob[len(RAW_MAGIC):header])
    expected = h * w * c * 4
    if len(blob) - header != expected:
        raise DataError(f"Truncated FTIMG1 payload in {path}")
    data = np.frombuffer(blob, dtype='<f4', offset=header).reshape(h, w, c)
    return TactileImage(data.astype(np.float64))


def load_image(path) -> TactileImage:
    """Load a PNG or FTIMG1 frame based on its suffix."""
    if str(path).endswith(".ftimg"):
        return load_raw(path)
    return load_png(path)
