"""Tests for dataset generation, manifests and array loading."""

import json

import numpy as np
import pytest

from datasets import (MANIFEST_NAME, DatasetManifest, jittered_grid, generate_classification_dataset,
                      generate_regression_dataset, load_arrays, load_manifest, save_manifest)
from exceptions import DataError, InvalidArgumentError, ManifestError, UnsupportedVersionError


@pytest.fixture
def classification_set(tmp_path, small_geometry):
    return generate_classification_dataset(5, 7, tmp_path / "cls", geometry=small_geometry, workers=2)


@pytest.fixture
def regression_set(tmp_path, small_geometry):
    return generate_regression_dataset(10, 3, tmp_path / "reg", geometry=small_geometry, workers=2)


class TestClassificationGeneration:
    def test_counts_and_labels(self, classification_set):
        assert len(classification_set) == 20
        assert classification_set.label_counts() == {"0": 5, "1": 5, "2": 5, "3": 5}
        assert all(r.indenter == "NutTexture" for r in classification_set.records)

    def test_split_tags_stratified(self, classification_set):
        train = classification_set.with_split("train")
        assert len(train) == 16
        assert train.label_counts() == {"0": 4, "1": 4, "2": 4, "3": 4}
        assert len(classification_set.with_split("val")) == 4

    def test_scale_against_reference(self, classification_set):
        assert classification_set.reference_count_per_group == 500
        assert classification_set.scale == pytest.approx(0.01)

    def test_files_written(self, classification_set):
        root = classification_set.root
        assert (root / MANIFEST_NAME).is_file()
        assert sorted(p.name for p in (root / "images").iterdir())[0] == "000000.png"
        assert len(list((root / "images").glob("*.png"))) == 20

    def test_rerun_is_byte_identical(self, tmp_path, small_geometry):
        a = generate_classification_dataset(2, 11, tmp_path / "a", geometry=small_geometry, workers=2)
        b = generate_classification_dataset(2, 11, tmp_path / "b", geometry=small_geometry, workers=1)
        assert (a.root / MANIFEST_NAME).read_bytes() == (b.root / MANIFEST_NAME).read_bytes()
        for record in a.records:
            assert a.image_path(record).read_bytes() == b.image_path(record).read_bytes()

    def test_seed_changes_dataset(self, tmp_path, small_geometry):
        a = generate_classification_dataset(2, 1, tmp_path / "a", geometry=small_geometry, workers=1)
        b = generate_classification_dataset(2, 2, tmp_path / "b", geometry=small_geometry, workers=1)
        assert [r.seed for r in a.records] != [r.seed for r in b.records]

    def test_raw_frames_optional(self, tmp_path, small_geometry):
        manifest = generate_classification_dataset(1, 0, tmp_path / "raw", geometry=small_geometry,
                                                   write_raw=True, workers=1)
        assert len(list((manifest.root / "images").glob("*.ftimg"))) == 4

    def test_zero_count_rejected(self, tmp_path):
        with pytest.raises(DataError):
            generate_classification_dataset(0, 0, tmp_path / "none")

    def test_unwritable_output_dir(self, tmp_path, small_geometry):
        blocker = tmp_path / "blocker"
        blocker.write_text("not a directory")
        with pytest.raises(DataError):
            generate_classification_dataset(1, 0, blocker / "sub", geometry=small_geometry, workers=1)


class TestRegressionGeneration:
    def test_labels_within_bounds(self, regression_set):
        assert len(regression_set) == 20
        labels = np.array([r.label for r in regression_set.records])
        assert labels[:, 0].min() >= 10.0 and labels[:, 0].max() <= 50.0
        assert labels[:, 1].min() >= 0.0 and labels[:, 1].max() <= 25.0
        assert regression_set.label_counts() == {"Cylinder": 10, "Cuboid": 10}

    def test_reference_scale(self, regression_set):
        assert regression_set.scale == pytest.approx(10 / 60000)

    def test_indenter_filter(self, regression_set):
        cuboid = regression_set.for_indenter("cuboid")
        assert len(cuboid) == 10
        assert {r.indenter for r in cuboid.records} == {"Cuboid"}
        assert regression_set.for_indenter("all") is regression_set
        with pytest.raises(InvalidArgumentError):
            regression_set.for_indenter("Sphere")

    def test_jittered_grid_fills_every_cell_once(self):
        samples = jittered_grid(40, np.random.default_rng(0))
        cells = {(int((p - 10.0) // 5.0), int(f // 5.0)) for p, f in samples}
        assert len(cells) == 40
        assert {c[0] for c in cells} == set(range(8))
        assert {c[1] for c in cells} == set(range(5))


class TestManifest:
    def test_round_trip(self, classification_set):
        loaded = load_manifest(classification_set.root / MANIFEST_NAME, verify_images=True)
        assert loaded == classification_set

    def test_regression_round_trip(self, regression_set):
        loaded = load_manifest(regression_set.root / MANIFEST_NAME)
        assert loaded.records == regression_set.records

    def test_header_fields(self, classification_set):
        header = json.loads((classification_set.root / MANIFEST_NAME).read_text().splitlines()[0])
        assert header["manifest_version"] == "1"
        assert header["kind"] == "classification"
        assert header["count"] == 20
        assert len(header["config_hash"]) == 64

    def test_missing_image_named(self, classification_set):
        victim = classification_set.image_path(classification_set.records[3])
        victim.unlink()
        with pytest.raises(ManifestError, match=victim.name):
            load_manifest(classification_set.root / MANIFEST_NAME)

    def test_unknown_version(self, tmp_path):
        path = tmp_path / "future.jsonl"
        save_manifest(DatasetManifest("classification", [], version="99"), path)
        with pytest.raises(UnsupportedVersionError):
            load_manifest(path)

    def test_corrupt_record(self, classification_set):
        path = classification_set.root / MANIFEST_NAME
        with open(path, "a", encoding="utf-8") as f:
            f.write("{not json\n")
        with pytest.raises(ManifestError, match="line 22"):
            load_manifest(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(ManifestError):
            load_manifest(path)

    def test_missing_file_is_data_error(self, tmp_path):
        with pytest.raises(DataError):
            load_manifest(tmp_path / "absent.jsonl")


class TestLoadArrays:
    def test_resized_inputs(self, classification_set):
        data = load_arrays(classification_set, size=(16, 16), workers=2)
        assert data.inputs.shape == (20, 16, 16, 3)
        assert data.labels.dtype == np.int64
        assert data.labels.tolist() == [r.label for r in classification_set.records]
        assert data.ids[0] == "000000"

    def test_split_selection(self, classification_set):
        assert len(load_arrays(classification_set, size=(8, 8), split="val", workers=1)) == 4

    def test_regression_labels(self, regression_set):
        data = load_arrays(regression_set, size=None, workers=2)
        assert data.inputs.shape == (20, 48, 36, 3)
        assert data.labels.shape == (20, 2)

    def test_custom_prepare(self, classification_set):
        data = load_arrays(classification_set, prepare=lambda pixels: pixels.mean(axis=(0, 1)), workers=1)
        assert data.inputs.shape == (20, 3)
