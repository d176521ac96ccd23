"""Synthetic dataset generation, JSONL manifests, and array loading."""

import dataclasses
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import psutil

# Handle imports - try relative first, then absolute
try:
    from .exceptions import DataError, InvalidArgumentError, ManifestError, UnsupportedVersionError
    from .hashing import config_hash
    from .imaging import UnwarpCalibration, area_resize, unwarp
    from .logger import Logger
    from .simgel import (ContactState, IndenterKind, IndenterSpec, NutClass, SensorGeometry,
                         SimParams, load_image, load_sim_params, render, save_png, save_raw)
    from .splitting import split_indices
except ImportError:
    from exceptions import DataError, InvalidArgumentError, ManifestError, UnsupportedVersionError
    from hashing import config_hash
    from imaging import UnwarpCalibration, area_resize, unwarp
    from logger import Logger
    from simgel import (ContactState, IndenterKind, IndenterSpec, NutClass, SensorGeometry,
                        SimParams, load_image, load_sim_params, render, save_png, save_raw)
    from splitting import split_indices

logger = Logger.get_logger(__name__)

MANIFEST_VERSION = "1"
MANIFEST_NAME = "manifest.jsonl"
IMAGE_DIR = "images"
# Collection sizes of the physical experiments the desk-scale sets stand in for
REFERENCE_COUNTS = {"classification": 500, "regression": 60000}
REGRESSION_INDENTERS = (IndenterKind.CYLINDER, IndenterKind.CUBOID)
REGRESSION_INDENTER_SIZE_MM = 10.0
POSITION_BOUNDS_MM = (10.0, 50.0)
FORCE_BOUNDS_N = (0.0, 25.0)
CLASSIFICATION_FORCE_BOUNDS_N = (5.0, 25.0)
LATERAL_BOUNDS_MM = (-5.0, 5.0)
PROGRESS_EVERY = 250


class DatasetKind(str, Enum):
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


Label = Union[int, Tuple[float, float]]


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    path: str
    kind: str
    label: Label
    split: str
    seed: int
    indenter: str

    @property
    def group(self) -> str:
        """Stratification key: nut class or indenter."""
        return str(self.label) if self.kind == DatasetKind.CLASSIFICATION.value else self.indenter

    def to_json(self) -> Dict:
        if self.kind == DatasetKind.CLASSIFICATION.value:
            label = int(self.label)
        else:
            label = {"position_mm": float(self.label[0]), "force_n": float(self.label[1])}
        return {"id": self.id, "path": self.path, "kind": self.kind, "label": label,
                "split": self.split, "seed": int(self.seed), "indenter": self.indenter}

    @classmethod
    def from_json(cls, data: Dict, kind: str) -> "ManifestRecord":
        if data["kind"] != kind:
            raise ManifestError(f"Record {data['id']} is {data['kind']} in a {kind} manifest")
        raw = data["label"]
        if kind == DatasetKind.CLASSIFICATION.value:
            if not isinstance(raw, int) or not 0 <= raw < len(NutClass):
                raise ManifestError(f"Record {data['id']} has invalid class label {raw!r}")
            label: Label = raw
        else:
            label = (float(raw["position_mm"]), float(raw["force_n"]))
        return cls(str(data["id"]), str(data["path"]), kind, label, str(data["split"]),
                   int(data["seed"]), str(data["indenter"]))


@dataclass
class DatasetManifest:
    kind: str
    records: List[ManifestRecord]
    seed: int = 0
    config_hash: str = ""
    reference_count_per_group: int = 0
    scale: float = 1.0
    version: str = MANIFEST_VERSION
    root: Path = field(default=Path("."), compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.records)

    def group_keys(self) -> List[str]:
        return [r.group for r in self.records]

    def subset(self, indices: Sequence[int], split_tag: Optional[str] = None) -> "DatasetManifest":
        records = [self.records[i] for i in indices]
        if split_tag is not None:
            records = [dataclasses.replace(r, split=split_tag) for r in records]
        return dataclasses.replace(self, records=records)

    def with_split(self, tag: str) -> "DatasetManifest":
        return self.subset([i for i, r in enumerate(self.records) if r.split == tag])

    def for_indenter(self, indenter: str) -> "DatasetManifest":
        """Regression records of one indenter; "all" keeps the pooled set."""
        if indenter.lower() == "all":
            return self
        matches = [k.value for k in REGRESSION_INDENTERS if k.value.lower() == indenter.lower()]
        if not matches:
            raise InvalidArgumentError(f"Unknown indenter filter {indenter!r}")
        wanted = matches[0]
        return self.subset([i for i, r in enumerate(self.records) if r.indenter == wanted])

    def image_path(self, record: ManifestRecord) -> Path:
        return self.root / record.path

    def label_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for key in self.group_keys():
            counts[key] = counts.get(key, 0) + 1
        return counts


@dataclass
class ArrayDataset:
    """In-memory prepared inputs with labels: int classes or (N, 2) position/force."""
    inputs: np.ndarray
    labels: np.ndarray
    kind: str
    ids: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.inputs.shape[0])


def save_manifest(manifest: DatasetManifest, path) -> None:
    header = {"manifest_version": manifest.version, "kind": manifest.kind, "seed": manifest.seed,
              "config_hash": manifest.config_hash,
              "reference_count_per_group": manifest.reference_count_per_group,
              "scale": manifest.scale, "count": len(manifest.records)}
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(json.dumps(header, sort_keys=True) + "\n")
            for record in manifest.records:
                f.write(json.dumps(record.to_json(), sort_keys=True) + "\n")
    except OSError as e:
        raise DataError(f"Cannot write manifest {path}: {e}")
    logger.info(f"Manifest saved: {path} ({len(manifest.records)} records)")


def load_manifest(path, verify_images: bool = False) -> DatasetManifest:
    """Parse a manifest; every referenced image must exist (and parse, if verify_images)."""
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            lines = [line for line in f.read().split("\n") if line.strip()]
    except OSError as e:
        raise ManifestError(f"Cannot read manifest {path}: {e}")
    if not lines:
        raise ManifestError(f"Empty manifest: {path}")

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ManifestError(f"Corrupt manifest header in {path}: {e}")
    version = str(header.get("manifest_version"))
    if version != MANIFEST_VERSION:
        raise UnsupportedVersionError(
            f"Unsupported manifest version {version!r} in {path} (expected {MANIFEST_VERSION!r})")
    kind = header.get("kind")
    if kind not in (k.value for k in DatasetKind):
        raise ManifestError(f"Unknown manifest kind {kind!r} in {path}")

    records = []
    for number, line in enumerate(lines[1:], start=2):
        try:
            records.append(ManifestRecord.from_json(json.loads(line), kind))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ManifestError(f"Corrupt record on line {number} of {path}: {e}")

    manifest = DatasetManifest(
        kind=kind, records=records, seed=int(header.get("seed", 0)),
        config_hash=str(header.get("config_hash", "")),
        reference_count_per_group=int(header.get("reference_count_per_group", 0)),
        scale=float(header.get("scale", 1.0)), version=version, root=path.parent)

    for record in records:
        image_path = manifest.image_path(record)
        if not image_path.is_file():
            raise ManifestError(f"Manifest {path} references missing image {image_path}")
        if verify_images:
            try:
                load_image(image_path)
            except DataError as e:
                raise ManifestError(f"Manifest {path} references unreadable image {image_path}: {e}")
    return manifest


@dataclass(frozen=True)
class _RenderJob:
    index: int
    contact: ContactState
    spec: IndenterSpec
    seed: int
    label: Label


def _record_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


def _classification_jobs(n_per_class: int, seed: int, params: SimParams) -> List[_RenderJob]:
    jobs = []
    for nut in NutClass:
        for i in range(n_per_class):
            record_seed = _record_seed(seed, nut.label_index, i)
            rng = np.random.default_rng(record_seed)
            contact = ContactState(
                position_mm=float(rng.uniform(*POSITION_BOUNDS_MM)),
                force_n=float(rng.uniform(*CLASSIFICATION_FORCE_BOUNDS_N)),
                lateral_offset_mm=float(rng.uniform(*LATERAL_BOUNDS_MM)),
                angle_deg=float(rng.uniform(0.0, 360.0)),
            )
            spec = IndenterSpec.nut(nut, texture_seed=int(rng.integers(2 ** 31)), params=params)
            jobs.append(_RenderJob(len(jobs), contact, spec, record_seed, nut.label_index))
    return jobs


def jittered_grid(n: int, rng: np.random.Generator) -> np.ndarray:
    """n (position, force) samples, at most one per cell of a grid covering the label box."""
    grid_p = max(1, int(round(math.sqrt(1.6 * n))))
    grid_f = int(math.ceil(n / grid_p))
    cells = rng.permutation(grid_p * grid_f)[:n]
    jitter = rng.random((n, 2))
    lo_p, hi_p = POSITION_BOUNDS_MM
    lo_f, hi_f = FORCE_BOUNDS_N
    position = lo_p + (cells // grid_f + jitter[:, 0]) * (hi_p - lo_p) / grid_p
    force = lo_f + (cells % grid_f + jitter[:, 1]) * (hi_f - lo_f) / grid_f
    return np.stack([position, force], axis=1)


def _regression_jobs(n_per_indenter: int, seed: int) -> List[_RenderJob]:
    jobs = []
    for indenter_index, kind in enumerate(REGRESSION_INDENTERS):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1000 + indenter_index]))
        spec = IndenterSpec(kind, REGRESSION_INDENTER_SIZE_MM)
        for i, (position, force) in enumerate(jittered_grid(n_per_indenter, rng)):
            contact = ContactState(position_mm=float(position), force_n=float(force))
            jobs.append(_RenderJob(len(jobs), contact, spec,
                                   _record_seed(seed, 1000 + indenter_index, i),
                                   (float(position), float(force))))
    return jobs


def default_workers() -> int:
    return psutil.cpu_count(logical=False) or 1


class DatasetGenerator:
    """Renders a list of contacts to images and assembles the manifest."""

    def __init__(self, out_dir, geometry: Optional[SensorGeometry] = None,
                 params: Optional[SimParams] = None, noise_std: Optional[float] = None,
                 train_fraction: float = 0.8, write_raw: bool = False,
                 workers: Optional[int] = None):
        self.out_dir = Path(out_dir)
        self.params = params or load_sim_params()
        self.geometry = geometry or SensorGeometry.from_params(self.params)
        self.noise_std = self.params.noise_std if noise_std is None else float(noise_std)
        self.train_fraction = train_fraction
        self.write_raw = write_raw
        self.workers = workers or default_workers()
        self.logger = Logger.get_logger(__name__)

    def generation_config(self, kind: str, n: int, seed: int) -> Dict:
        return {"kind": kind, "n_per_group": n, "seed": seed, "noise_std": self.noise_std,
                "train_fraction": self.train_fraction,
                "geometry": dataclasses.asdict(self.geometry),
                "sim_params": dataclasses.asdict(self.params)}

    def _prepare_dirs(self):
        try:
            (self.out_dir / IMAGE_DIR).mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise DataError(f"Cannot create output directory {self.out_dir}: {e}")

    def _render_one(self, job: _RenderJob) -> str:
        image = render(job.contact, job.spec, noise_std=self.noise_std, seed=job.seed,
                       geometry=self.geometry, params=self.params)
        relative = f"{IMAGE_DIR}/{job.index:06d}.png"
        save_png(image, self.out_dir / relative)
        if self.write_raw:
            save_raw(image, self.out_dir / f"{IMAGE_DIR}/{job.index:06d}.ftimg")
        if (job.index + 1) % PROGRESS_EVERY == 0:
            self.logger.info(f"Rendered {job.index + 1} images")
        return relative

    def run(self, kind: DatasetKind, jobs: List[_RenderJob], n_per_group: int,
            seed: int) -> DatasetManifest:
        self._prepare_dirs()
        self.logger.info(f"Generating {len(jobs)} {kind.value} images into {self.out_dir} "
                         f"with {self.workers} workers")
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            paths = list(pool.map(self._render_one, jobs))

        indenters = [job.spec.kind.value for job in jobs]
        groups = [str(job.label) if kind == DatasetKind.CLASSIFICATION else indenters[i]
                  for i, job in enumerate(jobs)]
        train, _ = split_indices(groups, self.train_fraction, seed)
        train = set(train)

        records = [ManifestRecord(id=f"{job.index:06d}", path=paths[job.index], kind=kind.value,
                                  label=job.label, split="train" if job.index in train else "val",
                                  seed=job.seed, indenter=indenters[job.index])
                   for job in jobs]
        reference = REFERENCE_COUNTS[kind.value]
        manifest = DatasetManifest(
            kind=kind.value, records=records, seed=seed,
            config_hash=config_hash(self.generation_config(kind.value, n_per_group, seed)),
            reference_count_per_group=reference, scale=n_per_group / reference,
            root=self.out_dir)
        save_manifest(manifest, self.out_dir / MANIFEST_NAME)
        return manifest


def generate_classification_dataset(n_per_class: int, seed: int, out_dir, **options) -> DatasetManifest:
    """n_per_class nut presses per class at random position, angle, and force."""
    if n_per_class < 1:
        raise DataError(f"n_per_class must be at least 1, got {n_per_class}")
    generator = DatasetGenerator(out_dir, **options)
    jobs = _classification_jobs(n_per_class, seed, generator.params)
    return generator.run(DatasetKind.CLASSIFICATION, jobs, n_per_class, seed)


def generate_regression_dataset(n_per_indenter: int, seed: int, out_dir, **options) -> DatasetManifest:
    """Cylinder and cuboid presses on a jittered (position, force) grid."""
    if n_per_indenter < 1:
        raise DataError(f"n_per_indenter must be at least 1, got {n_per_indenter}")
    generator = DatasetGenerator(out_dir, **options)
    jobs = _regression_jobs(n_per_indenter, seed)
    return generator.run(DatasetKind.REGRESSION, jobs, n_per_indenter, seed)


def _default_prepare(size: Optional[Tuple[int, int]]) -> Callable[[np.ndarray], np.ndarray]:
    if size is None:
        return lambda pixels: pixels
    return lambda pixels: area_resize(pixels, size)


def load_arrays(manifest: DatasetManifest, size: Optional[Tuple[int, int]] = (64, 64),
                split: Optional[str] = None, prepare: Optional[Callable] = None,
                calibration: Optional[UnwarpCalibration] = None,
                workers: Optional[int] = None) -> ArrayDataset:
    """Load (optionally unwarped) images of a manifest and prepare them as model inputs.

    `prepare` maps HxWx3 pixels to one input; it defaults to an area resize
    to `size`.
    """
    if split is not None:
        manifest = manifest.with_split(split)
    prepare = prepare or _default_prepare(size)

    def load_one(record: ManifestRecord) -> np.ndarray:
        image = load_image(manifest.image_path(record))
        if calibration is not None:
            image = unwarp(image, calibration)
        return prepare(image.pixels)

    with ThreadPoolExecutor(max_workers=workers or default_workers()) as pool:
        inputs = list(pool.map(load_one, manifest.records))
    if manifest.kind == DatasetKind.CLASSIFICATION.value:
        labels = np.array([r.label for r in manifest.records], dtype=np.int64)
    else:
        labels = np.array([r.label for r in manifest.records], dtype=np.float64).reshape(-1, 2)
    stacked = np.stack(inputs) if inputs else np.zeros((0,))
    return ArrayDataset(stacked, labels, manifest.kind, [r.id for r in manifest.records])
