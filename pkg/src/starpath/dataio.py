"""Datasets: MNIST IDX ingestion, seeded subsets, separable Gaussian blobs.

IDX layout (big-endian)::

    images  0x00000803 | count u32 | rows u32 | cols u32 | count*rows*cols u8
    labels  0x00000801 | count u32 | count u8

Pixels are scaled by 1/255 into [0, 1]; no centering is applied.
"""

from __future__ import annotations

import gzip
import hashlib
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
import numpy.typing as npt

from starpath.constants import IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC
from starpath.errors import IdxFormatError

logger = logging.getLogger("starpath")

PathLike = Union[str, Path]


def content_checksum(inputs: npt.NDArray[np.float64], labels: npt.NDArray[np.int64]) -> int:
    """64-bit hash over the raw bytes of inputs and labels."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(inputs.shape).encode())
    h.update(np.ascontiguousarray(inputs, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(labels, dtype=np.int64).tobytes())
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable labelled dataset with inputs in [0, 1]."""

    inputs: npt.NDArray[np.float64]
    labels: npt.NDArray[np.int64]
    name: str
    classes: int
    checksum: int = field(init=False)

    def __post_init__(self) -> None:
        inputs = np.array(self.inputs, dtype=np.float64, order="C")
        labels = np.array(self.labels, dtype=np.int64, order="C")
        if inputs.ndim != 2 or inputs.shape[0] < 1:
            raise ValueError(f"inputs must be N x d_in with N >= 1, got shape {inputs.shape}")
        if labels.shape != (inputs.shape[0],):
            raise ValueError(f"{labels.shape[0]} labels for {inputs.shape[0]} inputs")
        if self.classes < 1 or labels.min() < 0 or labels.max() >= self.classes:
            raise ValueError(f"labels must lie in [0, {self.classes})")
        if not np.all(np.isfinite(inputs)):
            raise ValueError("inputs contain NaN or Inf")
        inputs.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "checksum", content_checksum(inputs, labels))

    @property
    def size(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def d_in(self) -> int:
        return int(self.inputs.shape[1])


# ── IDX parsing ──────────────────────────────────────────────────────


def _read_bytes(path: PathLike) -> bytes:
    p = Path(path)
    opener = gzip.open if p.suffix == ".gz" else open
    with opener(p, "rb") as fh:
        return fh.read()


def _header(raw: bytes, path: str, words: int) -> tuple:
    need = 4 * words
    if len(raw) < need:
        raise IdxFormatError(path, len(raw), f"truncated header: need {need} bytes")
    return struct.unpack(f">{words}I", raw[:need])


def _parse_images(raw: bytes, path: str) -> npt.NDArray[np.float64]:
    magic = _header(raw, path, 1)[0]
    if magic == IDX_LABELS_MAGIC:
        raise IdxFormatError(path, 0, "found a labels file where images were expected (swapped files?)")
    if magic != IDX_IMAGES_MAGIC:
        raise IdxFormatError(path, 0, f"bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    _, count, rows, cols = _header(raw, path, 4)
    payload = count * rows * cols
    end = 16 + payload
    if len(raw) < end:
        raise IdxFormatError(path, len(raw), f"truncated image payload: expected {end} bytes")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=payload, offset=16)
    return pixels.reshape(count, rows * cols).astype(np.float64) / 255.0


def _parse_labels(raw: bytes, path: str) -> npt.NDArray[np.int64]:
    magic = _header(raw, path, 1)[0]
    if magic == IDX_IMAGES_MAGIC:
        raise IdxFormatError(path, 0, "found an images file where labels were expected (swapped files?)")
    if magic != IDX_LABELS_MAGIC:
        raise IdxFormatError(path, 0, f"bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    _, count = _header(raw, path, 2)
    end = 8 + count
    if len(raw) < end:
        raise IdxFormatError(path, len(raw), f"truncated label payload: expected {end} bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=8).astype(np.int64)


def load_idx(images_path: PathLike, labels_path: PathLike) -> Dataset:
    """Load an IDX image/label pair (optionally gzipped) into a Dataset."""
    images = _parse_images(_read_bytes(images_path), str(images_path))
    labels = _parse_labels(_read_bytes(labels_path), str(labels_path))
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            str(labels_path), 4,
            f"count mismatch: {images.shape[0]} images but {labels.shape[0]} labels",
        )
    classes = int(labels.max()) + 1 if labels.size else 1
    logger.info("Loaded %d samples (%d features, %d classes) from %s",
                images.shape[0], images.shape[1], classes, images_path)
    return Dataset(images, labels, name=Path(images_path).name, classes=classes)


# ── Subsets and synthetic data ───────────────────────────────────────


def subset(ds: Dataset, count: int, seed: int, balanced: bool = False) -> Dataset:
    """Seeded sample without replacement, returned in the parent's order.

    In balanced mode exactly ``count / classes`` samples are taken per class.
    """
    if not 1 <= count <= ds.size:
        raise ValueError(f"subset count must lie in [1, {ds.size}], got {count}")
    rng = np.random.default_rng(seed)
    if balanced:
        if count % ds.classes:
            raise ValueError(f"balanced subset needs count divisible by {ds.classes}, got {count}")
        per_class = count // ds.classes
        chosen = []
        for c in range(ds.classes):
            members = np.flatnonzero(ds.labels == c)
            if members.size < per_class:
                raise ValueError(f"class {c} has {members.size} samples, need {per_class}")
            chosen.append(rng.choice(members, size=per_class, replace=False))
        idx = np.sort(np.concatenate(chosen))
    else:
        idx = np.sort(rng.choice(ds.size, size=count, replace=False))
    tag = "balanced " if balanced else ""
    return Dataset(
        ds.inputs[idx], ds.labels[idx],
        name=f"{ds.name}[{tag}{count}@{seed}]", classes=ds.classes,
    )


def make_blobs(n_per_class: int, classes: int, d_in: int, separation: float, seed: int) -> Dataset:
    """Unit-variance Gaussian clusters whose means sit ``separation`` apart.

    With ``classes <= d_in`` the means are scaled basis vectors, so every pair
    is exactly ``separation`` apart; otherwise they are random directions at
    radius ``separation``. A single global affine map then puts all inputs in
    [0, 1], which preserves the geometry. Sample order is shuffled so that
    contiguous mini-batches mix classes.
    """
    if min(n_per_class, classes, d_in) < 1 or separation <= 0:
        raise ValueError("make_blobs arguments must be positive")
    rng = np.random.default_rng(seed)
    if classes <= d_in:
        means = np.zeros((classes, d_in))
        means[np.arange(classes), np.arange(classes)] = separation / np.sqrt(2.0)
    else:
        dirs = rng.standard_normal((classes, d_in))
        means = separation * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    labels = np.repeat(np.arange(classes), n_per_class)
    points = means[labels] + rng.standard_normal((labels.size, d_in))
    order = rng.permutation(labels.size)
    points, labels = points[order], labels[order]
    lo, hi = points.min(), points.max()
    points = (points - lo) / (hi - lo) if hi > lo else np.zeros_like(points)
    return Dataset(points, labels, name=f"blobs[{classes}x{n_per_class}@{seed}]", classes=classes)
