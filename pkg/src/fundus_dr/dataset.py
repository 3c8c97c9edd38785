"""Dataset ingestion, the DR label taxonomy and stratified splitting."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .augment import rescale_to_features
from .image_core import Image, load_image, resize_bilinear

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".pgm", ".ppm", ".png")


class DatasetError(Exception):
    pass


@dataclass(frozen=True)
class ClassScheme:
    mode: str
    names: tuple[str, ...]

    @property
    def num_classes(self) -> int:
        return len(self.names)

    @classmethod
    def binary(cls) -> "ClassScheme":
        return cls("binary", ("No_DR", "DR"))

    @classmethod
    def multiclass(cls) -> "ClassScheme":
        return cls("multiclass", ("No_DR", "Mild", "Moderate", "Severe", "Proliferate_DR"))

    @classmethod
    def from_mode(cls, mode: str) -> "ClassScheme":
        if mode == "binary":
            return cls.binary()
        if mode == "multiclass":
            return cls.multiclass()
        raise ValueError(f"unknown mode {mode!r}; expected 'binary' or 'multiclass'")

    def label_from_diagnosis(self, diagnosis: int) -> int:
        # binary collapses grades 1-4 into DR
        return min(diagnosis, 1) if self.mode == "binary" else diagnosis


@dataclass
class Dataset:
    paths: list[Path]
    labels: list[int]
    scheme: ClassScheme = field(default_factory=ClassScheme.multiclass)

    def __post_init__(self):
        if len(self.paths) != len(self.labels):
            raise ValueError("paths and labels differ in length")
        k = self.scheme.num_classes
        for p, y in zip(self.paths, self.labels):
            if not 0 <= y < k:
                raise DatasetError(f"label {y} for {p} outside 0..{k - 1}")

    def __len__(self):
        return len(self.paths)

    def class_counts(self) -> np.ndarray:
        return np.bincount(np.asarray(self.labels, dtype=np.intp), minlength=self.scheme.num_classes)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset([self.paths[i] for i in indices], [self.labels[i] for i in indices], self.scheme)


def ingest_folder(root: str | os.PathLike, scheme: ClassScheme) -> Dataset:
    """Read a ``root/<class name>/<image>`` tree.

    Items are ordered by class index, then lexicographically by path, so
    the result is independent of directory listing order.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    index = {name: k for k, name in enumerate(scheme.names)}
    items: list[tuple[Path, int]] = []
    for sub in sorted(root.iterdir()):
        if not sub.is_dir():
            continue
        if sub.name not in index:
            raise DatasetError(
                f"unknown class folder {sub.name!r} under {root}; expected one of {list(scheme.names)}"
            )
        files = sorted(p for p in sub.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            log.warning("class folder %s is empty", sub)
        items.extend((p, index[sub.name]) for p in files)
    items.sort(key=lambda it: (it[1], str(it[0])))
    return Dataset([p for p, _ in items], [y for _, y in items], scheme)


def ingest_manifest(
    csv_path: str | os.PathLike,
    image_dir: str | os.PathLike,
    scheme: ClassScheme,
    extension: str = ".png",
) -> Dataset:
    """Read an ``id_code,diagnosis`` manifest; images are ``<id_code><extension>``."""
    image_dir = Path(image_dir)
    paths, labels = [], []
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["id_code", "diagnosis"]:
            raise DatasetError(f"{csv_path}: expected header 'id_code,diagnosis', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            id_code, diag_s = row[0].strip(), row[1].strip()
            try:
                diagnosis = int(diag_s)
            except ValueError:
                raise DatasetError(f"{csv_path}:{lineno}: diagnosis {diag_s!r} is not an integer") from None
            if not 0 <= diagnosis <= 4:
                raise DatasetError(f"{csv_path}:{lineno}: diagnosis {diagnosis} outside 0..4 (id {id_code})")
            path = image_dir / f"{id_code}{extension}"
            if not path.is_file():
                raise DatasetError(f"{csv_path}:{lineno}: image {path} not found")
            paths.append(path)
            labels.append(scheme.label_from_diagnosis(diagnosis))
    return Dataset(paths, labels, scheme)


@dataclass(frozen=True)
class SplitIndices:
    train: list[int]
    test: list[int]


def _test_count(n: int, train_ratio: float) -> int:
    # exact decimal arithmetic, round half up
    frac = (1 - Fraction(str(train_ratio))) * n
    return int(frac + Fraction(1, 2))


def stratified_split(labels: Sequence[int], train_ratio: float, seed: int) -> SplitIndices:
    """Per class, hold out ``round((1 - train_ratio) * n_c)`` items for test.

    Accepts a label sequence or a :class:`Dataset`.  Both index lists come
    back in ascending order.
    """
    if isinstance(labels, Dataset):
        labels = labels.labels
    if not 0 < train_ratio < 1:
        raise ValueError(f"train_ratio must be in (0, 1), got {train_ratio}")
    labels = np.asarray(labels, dtype=np.intp)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if members.size < 2:
            raise DatasetError(f"class {c} has {members.size} item(s); stratified split needs >= 2")
        n_test = _test_count(members.size, train_ratio)
        perm = rng.permutation(members)
        test.extend(perm[:n_test].tolist())
        train.extend(perm[n_test:].tolist())
    return SplitIndices(sorted(train), sorted(test))


def image_to_features(img: Image, width: int, height: int) -> np.ndarray:
    return rescale_to_features(resize_bilinear(img, width, height))


def flatten(
    ds: Dataset,
    width: int,
    height: int,
    transform: Callable[[Image], Image] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Load, optionally transform, resize and rescale every image.

    Returns an ``(n, height * width * channels)`` float matrix whose row ``i``
    is item ``i`` and the matching label vector.
    """
    rows = []
    for path in ds.paths:
        img = load_image(path)
        if transform is not None:
            img = transform(img)
        rows.append(image_to_features(img, width, height))
    if rows and len({r.size for r in rows}) > 1:
        raise DatasetError("images have mixed channel counts; convert to one colour mode first")
    X = np.vstack(rows) if rows else np.zeros((0, 0))
    return X, np.asarray(ds.labels, dtype=np.intp)
