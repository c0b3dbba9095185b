import numpy as np
import pytest
from numpy.testing import assert_array_equal

from lab.errors import InvalidInputError, ReportIOError
from lab.io import (checksum, export_scene, format_cell, metrics_row, read_label_grid, read_manifest, read_matrix,
                    write_csv, write_manifest, write_matrix)
from lab.metrics import evaluate, mask_from_labels
from lab.scenes import generate_scene
from schemas.experiment import ManifestStatus, RunManifest


def test_format_cell():
    assert format_cell(0.1) == "1.0000000000000001e-01"
    assert float(format_cell(1 / 3)) == 1 / 3
    assert format_cell(True) == "true"
    assert format_cell(np.bool_(False)) == "false"
    assert format_cell(ManifestStatus.complete) == "complete"
    assert format_cell(7) == "7"


def test_write_csv_uses_unix_line_endings(tmp_path):
    path = write_csv(tmp_path / "out.csv", ["a", "b"], [[1, 2.5], ["x,y", False]])
    assert path.read_bytes() == b'a,b\n1,2.5000000000000000e+00\n"x,y",false\n'


def test_write_csv_into_missing_directory(tmp_path):
    with pytest.raises(ReportIOError):
        write_csv(tmp_path / "missing" / "out.csv", ["a"], [])


def test_matrix_round_trip_is_exact(tmp_path):
    matrix = np.random.default_rng(0).standard_normal((3, 4))
    assert_array_equal(read_matrix(write_matrix(tmp_path / "m.csv", matrix)), matrix)


@pytest.mark.parametrize("content", ["", "1,2\n3\n", "1,x\n", "1,nan\n"])
def test_malformed_matrix(tmp_path, content):
    path = tmp_path / "m.csv"
    path.write_text(content)
    with pytest.raises(InvalidInputError):
        read_matrix(path)


def test_missing_matrix(tmp_path):
    with pytest.raises(ReportIOError):
        read_matrix(tmp_path / "nope.csv")


def test_exported_scene_reads_back(tmp_path, small_scene):
    img = generate_scene(small_scene, 0)
    intensities, labels = export_scene(img, tmp_path, "scene_000")
    assert intensities.name == "scene_000_intensities.txt"
    assert_array_equal(read_label_grid(labels), img.labels)
    assert_array_equal(np.loadtxt(intensities), img.intensities)
    assert len(labels.read_text().splitlines()) == img.shape[0]


def test_metrics_row():
    a = mask_from_labels(np.array([[0, 1], [1, 1]]))
    row = metrics_row(evaluate(a, a))
    assert row == "1.0000000000000000e+00,0.0000000000000000e+00,1.0000000000000000e+00,none"


def test_manifest_round_trip(tmp_path):
    report = write_csv(tmp_path / "r.csv", ["x"], [[1]])
    manifest = RunManifest(status=ManifestStatus.complete, command="verify", config={"kind": "verify-identities"},
                           seeds={"master": 3}, outputs={"r.csv": checksum(report)}, exit_code=0)
    path = write_manifest(tmp_path / "manifest.txt", manifest)
    entries = read_manifest(path)
    assert entries["status"] == "complete"
    assert entries["exit_code"] == "0"
    assert entries["config.kind"] == "verify-identities"
    assert entries["seed.master"] == "3"
    assert entries["output.r.csv"] == f"sha256:{checksum(report)}"
    assert not (tmp_path / "manifest.txt.tmp").exists()


def test_checksum_changes_with_content(tmp_path):
    path = tmp_path / "f.txt"
    path.write_text("a")
    first = checksum(path)
    path.write_text("b")
    assert checksum(path) != first
