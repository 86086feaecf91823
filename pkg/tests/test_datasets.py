"""
Tests for the CSV and IDX loaders and seeded splits.
"""

from pathlib import Path

import numpy as np
import pytest


def idx_bytes(magic: int, dims, payload: bytes) -> bytes:
    head = magic.to_bytes(4, "big") + b"".join(int(d).to_bytes(4, "big") for d in dims)
    return head + payload


class TestCsv:
    """Tests for load_csv / write_csv."""

    def test_round_trip_regression(self, temp_dir: Path):
        from fixdiff.datasets import load_csv, write_csv
        from fixdiff.linalg import Rng
        from fixdiff.problems import Dataset

        rng = Rng(0)
        ds = Dataset(rng.gaussian(12).reshape(4, 3), rng.gaussian(4))
        path = temp_dir / "reg.csv"
        write_csv(ds, path)
        back = load_csv(path)
        np.testing.assert_array_equal(back.X, ds.X)
        np.testing.assert_array_equal(back.targets, ds.targets)
        assert path.read_text().splitlines()[0] == "x0,x1,x2,target"

    def test_round_trip_labels(self, temp_dir: Path):
        from fixdiff.datasets import load_csv, write_csv
        from fixdiff.problems import Dataset

        ds = Dataset(np.array([[0.5, 1.0], [2.0, -1.5]]), np.array([1, 0]), 2)
        path = temp_dir / "cls.csv"
        write_csv(ds, path, header=["a", "b", "label"])
        back = load_csv(path, n_classes=2)
        assert back.labels.tolist() == [1, 0]
        assert back.n_classes == 2

    def test_header_length(self, temp_dir: Path):
        from fixdiff.datasets import write_csv
        from fixdiff.errors import ArgumentError
        from fixdiff.problems import Dataset

        with pytest.raises(ArgumentError):
            write_csv(Dataset(np.ones((1, 2)), np.ones(1)), temp_dir / "x.csv", header=["a"])

    @pytest.mark.parametrize(
        "text,row,col",
        [
            ("", 1, None),
            ("a,b\n1,2\n3\n", 3, None),
            ("a,b\n1,x\n", 2, 2),
            ("a,b\n1,nan\n", 2, 2),
            ("a,b\n", 2, None),
        ],
    )
    def test_format_errors(self, temp_dir: Path, text, row, col):
        from fixdiff.datasets import load_csv
        from fixdiff.errors import DataFormatError

        path = temp_dir / "bad.csv"
        path.write_text(text)
        with pytest.raises(DataFormatError) as exc:
            load_csv(path)
        assert exc.value.row == row
        assert exc.value.col == col

    def test_non_integer_label(self, temp_dir: Path):
        from fixdiff.datasets import load_csv
        from fixdiff.errors import DataFormatError

        path = temp_dir / "lab.csv"
        path.write_text("a,y\n1,0\n2,1.5\n")
        with pytest.raises(DataFormatError) as exc:
            load_csv(path, n_classes=3)
        assert (exc.value.row, exc.value.col) == (3, 2)

    def test_single_column_rejected(self, temp_dir: Path):
        from fixdiff.datasets import load_csv
        from fixdiff.errors import DataFormatError

        path = temp_dir / "one.csv"
        path.write_text("y\n1\n")
        with pytest.raises(DataFormatError):
            load_csv(path)


class TestIdx:
    """Tests for load_idx."""

    def test_load(self, temp_dir: Path):
        from fixdiff.datasets import IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, load_idx

        images = temp_dir / "img.idx"
        labels = temp_dir / "lab.idx"
        images.write_bytes(idx_bytes(IDX_IMAGES_MAGIC, (2, 2, 2), bytes([0, 255, 51, 0, 0, 0, 0, 255])))
        labels.write_bytes(idx_bytes(IDX_LABELS_MAGIC, (2,), bytes([3, 7])))
        ds = load_idx(images, labels)
        assert ds.X.shape == (2, 4)
        np.testing.assert_allclose(ds.X[0], [0.0, 1.0, 0.2, 0.0])
        assert ds.labels.tolist() == [3, 7]

    def test_bad_magic(self, temp_dir: Path):
        from fixdiff.datasets import IDX_LABELS_MAGIC, load_idx
        from fixdiff.errors import DataFormatError

        images = temp_dir / "img.idx"
        labels = temp_dir / "lab.idx"
        images.write_bytes(idx_bytes(IDX_LABELS_MAGIC, (1,), b"\x00"))
        labels.write_bytes(idx_bytes(IDX_LABELS_MAGIC, (1,), b"\x00"))
        with pytest.raises(DataFormatError) as exc:
            load_idx(images, labels)
        assert exc.value.offset == 0

    def test_truncated_payload(self, temp_dir: Path):
        from fixdiff.datasets import IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, load_idx
        from fixdiff.errors import DataFormatError

        images = temp_dir / "img.idx"
        labels = temp_dir / "lab.idx"
        images.write_bytes(idx_bytes(IDX_IMAGES_MAGIC, (2, 2, 2), bytes(5)))
        labels.write_bytes(idx_bytes(IDX_LABELS_MAGIC, (2,), bytes(2)))
        with pytest.raises(DataFormatError) as exc:
            load_idx(images, labels)
        assert exc.value.offset == 16

    def test_count_mismatch(self, temp_dir: Path):
        from fixdiff.datasets import IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, load_idx
        from fixdiff.errors import DataFormatError

        images = temp_dir / "img.idx"
        labels = temp_dir / "lab.idx"
        images.write_bytes(idx_bytes(IDX_IMAGES_MAGIC, (2, 1, 1), bytes(2)))
        labels.write_bytes(idx_bytes(IDX_LABELS_MAGIC, (3,), bytes(3)))
        with pytest.raises(DataFormatError):
            load_idx(images, labels)


class TestSplit:
    def _ds(self):
        from fixdiff.problems import Dataset

        return Dataset(np.arange(20.0).reshape(10, 2), np.arange(10.0))

    def test_partition(self):
        from fixdiff.datasets import split

        a, b = split(self._ds(), [0.3, 0.7], seed=1, tags=["train", "val"])
        assert (a.n_rows, b.n_rows) == (3, 7)
        assert sorted(np.concatenate([a.targets, b.targets]).tolist()) == list(range(10))
        assert (a.tag, b.tag) == ("train", "val")

    def test_seeded(self):
        from fixdiff.datasets import split

        a = split(self._ds(), [0.5, 0.5], seed=4)
        b = split(self._ds(), [0.5, 0.5], seed=4)
        np.testing.assert_array_equal(a[0].targets, b[0].targets)

    def test_bad_fractions(self):
        from fixdiff.datasets import split
        from fixdiff.errors import ArgumentError

        with pytest.raises(ArgumentError):
            split(self._ds(), [0.5, 0.6], seed=0)
        with pytest.raises(ArgumentError):
            split(self._ds(), [0.0, 1.0], seed=0)
