"""
Dataset files: CSV and IDX readers, CSV writer, seeded splits.

CSV: a header row, '.' decimals, '\\n' line ends; the last column is the
target, the others are features. IDX is the big-endian container used by
MNIST (images magic 0x00000803, labels 0x00000801).
"""

import csv
import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from fixdiff.errors import ArgumentError, DataFormatError
from fixdiff.linalg import Rng
from fixdiff.problems import Dataset

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

PathLike = Union[str, Path]


# -------------------- CSV --------------------


def _parse_cell(text: str, row: int, col: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataFormatError(f"non-numeric cell {text!r}", row=row, col=col) from None
    if not math.isfinite(value):
        raise DataFormatError(f"non-finite cell {text!r}", row=row, col=col)
    return value


def load_csv(path: PathLike, n_classes: Optional[int] = None, tag: str = "train") -> Dataset:
    """
    Read a dataset; rows and columns in errors are 1-based and count the header.

    With n_classes given, targets must be integers in [0, n_classes).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("empty file", row=1) from None
        width = len(header)
        if width < 2:
            raise DataFormatError("need at least one feature and one target column", row=1)
        rows: List[List[float]] = []
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != width:
                raise DataFormatError(f"expected {width} cells, found {len(record)}", row=lineno)
            rows.append([_parse_cell(cell, lineno, col) for col, cell in enumerate(record, start=1)])
    if not rows:
        raise DataFormatError("no data rows", row=2)
    data = np.array(rows, dtype=np.float64)
    targets = data[:, -1]
    if n_classes is not None:
        bad = np.flatnonzero(targets != np.round(targets))
        if bad.size:
            raise DataFormatError("non-integer class label", row=int(bad[0]) + 2, col=width)
        targets = targets.astype(np.int64)
    logger.debug("loaded %s: %d rows, %d features", path, data.shape[0], width - 1)
    return Dataset(data[:, :-1], targets, n_classes, tag)


def _format(value) -> str:
    return repr(float(value)) if not isinstance(value, (int, np.integer)) else str(int(value))


def write_csv(ds: Dataset, path: PathLike, header: Optional[Sequence[str]] = None) -> None:
    """Write ds so that load_csv reads back identical arrays."""
    names = list(header) if header is not None else [f"x{j}" for j in range(ds.n_features)] + ["target"]
    if len(names) != ds.n_features + 1:
        raise ArgumentError(f"header needs {ds.n_features + 1} names, got {len(names)}")
    path = Path(path)
    targets = ds.labels if ds.n_classes is not None else np.asarray(ds.targets, dtype=np.float64)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for x_row, t in zip(ds.X, targets):
            writer.writerow([_format(v) for v in x_row] + [_format(t)])


# -------------------- IDX --------------------


def _read_idx(path: PathLike, magic: int, ndim: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise DataFormatError("truncated header", offset=0)
    found = int.from_bytes(raw[:4], "big")
    if found != magic:
        raise DataFormatError(f"bad magic 0x{found:08x}, expected 0x{magic:08x}", offset=0)
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise DataFormatError("truncated dimension header", offset=len(raw))
    dims = [int.from_bytes(raw[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim)]
    count = int(np.prod(dims))
    if len(raw) - header_end != count:
        raise DataFormatError(
            f"payload has {len(raw) - header_end} bytes, dimensions {dims} need {count}",
            offset=header_end,
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header_end).reshape(dims)


def load_idx(images_path: PathLike, labels_path: PathLike, n_classes: int = 10, tag: str = "train") -> Dataset:
    """Images flattened to rows and scaled to [0, 1]; labels as integers."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels", offset=4)
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64), n_classes, tag)


# -------------------- SPLITS --------------------


def split(ds: Dataset, fractions: Sequence[float], seed: int, tags: Optional[Sequence[str]] = None) -> List[Dataset]:
    """Seeded shuffle followed by contiguous slices; the last slice takes the remainder."""
    fr = [float(f) for f in fractions]
    if not fr or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise ArgumentError(f"fractions must be non-negative and sum to 1, got {fr}")
    perm = Rng(seed).permutation(ds.n_rows)
    bounds = [0]
    for f in fr[:-1]:
        bounds.append(bounds[-1] + int(round(f * ds.n_rows)))
    bounds.append(ds.n_rows)
    names = list(tags) if tags is not None else [ds.tag] * len(fr)
    parts = []
    for i in range(len(fr)):
        lo, hi = bounds[i], bounds[i + 1]
        if hi <= lo:
            raise ArgumentError(f"split {i} is empty")
        parts.append(ds.subset(perm[lo:hi], names[i]))
    return parts
