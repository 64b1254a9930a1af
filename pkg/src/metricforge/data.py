"""Labeled embedding datasets: EMB1/CSV serialization, validation, video-level splits.

The on-disk binary format "EMB1" (little-endian):

    magic   4 bytes  0x45 0x4D 0x42 0x31 ("EMB1")
    version u16      1
    dim     u16      embedding dimension
    count   u64      number of records
    records count ×  (label u8, video_id u32, frame_id u32, dim × f32)

The CSV twin uses header ``label,video_id,frame_id,e0,...,e{dim-1}`` with floats
printed at 9 significant digits, which round-trips float32 exactly.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import DataError, FormatError, ValidationError
from .util import atomic_write, fmt_float

MAGIC = b"EMB1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHQ")

REAL = 0
FAKE = 1

_U32_MAX = 2**32 - 1


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype(
        [("label", "u1"), ("video_id", "<u4"), ("frame_id", "<u4"), ("vector", "<f4", (dim,))]
    )


@dataclass(frozen=True, eq=False)
class EmbeddingRecord:
    """One labeled frame embedding; label 0 = real, 1 = fake."""

    label: int
    video_id: int
    frame_id: int
    vector: np.ndarray

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingRecord):
            return NotImplemented
        return (
            self.label == other.label
            and self.video_id == other.video_id
            and self.frame_id == other.frame_id
            and np.array_equal(self.vector, other.vector)
        )


class EmbeddingDataset:
    """Columnar store of embedding records sharing one dimension.

    Immutable after construction; safe for shared read access.
    """

    def __init__(self, dim: int, labels, video_ids, frame_ids, vectors):
        dim = int(dim)
        if dim < 1:
            raise ValueError(f"dim must be positive, got {dim}")
        labels = np.asarray(labels)
        video_ids = np.asarray(video_ids)
        frame_ids = np.asarray(frame_ids)
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim == 1 and vectors.size == 0:
            vectors = vectors.reshape(0, dim)
        if vectors.ndim != 2 or vectors.shape[1] != dim:
            raise ValueError(f"vectors must have shape (n, {dim}), got {vectors.shape}")
        n = vectors.shape[0]
        if not (labels.shape == video_ids.shape == frame_ids.shape == (n,)):
            raise ValueError("labels, video_ids, frame_ids and vectors must agree in length")
        for name, arr in (("video_id", video_ids), ("frame_id", frame_ids)):
            if arr.size and (arr.min() < 0 or arr.max() > _U32_MAX):
                raise ValueError(f"{name} values must fit in an unsigned 32-bit integer")
        self.dim = dim
        self.labels = labels.astype(np.uint8)
        self.video_ids = video_ids.astype(np.uint32)
        self.frame_ids = frame_ids.astype(np.uint32)
        self.vectors = vectors
        for arr in (self.labels, self.video_ids, self.frame_ids, self.vectors):
            arr.setflags(write=False)

    @classmethod
    def from_records(cls, dim: int, records: Iterable[EmbeddingRecord]) -> "EmbeddingDataset":
        records = list(records)
        for i, rec in enumerate(records):
            if len(rec.vector) != dim:
                raise ValueError(f"record {i} has vector length {len(rec.vector)}, expected {dim}")
        return cls(
            dim,
            [r.label for r in records],
            [r.video_id for r in records],
            [r.frame_id for r in records],
            np.array([np.asarray(r.vector, dtype=np.float32) for r in records], dtype=np.float32).reshape(
                len(records), dim
            ),
        )

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def record(self, i: int) -> EmbeddingRecord:
        return EmbeddingRecord(
            int(self.labels[i]), int(self.video_ids[i]), int(self.frame_ids[i]), self.vectors[i]
        )

    def records(self) -> Iterator[EmbeddingRecord]:
        return (self.record(i) for i in range(len(self)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingDataset):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.video_ids, other.video_ids)
            and np.array_equal(self.frame_ids, other.frame_ids)
            and np.array_equal(self.vectors, other.vectors)
        )

    def __repr__(self) -> str:
        return f"EmbeddingDataset(dim={self.dim}, records={len(self)})"


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate(dataset: EmbeddingDataset) -> ValidationReport:
    """Check every dataset invariant; violations are returned, never raised."""
    report = ValidationReport()
    bad_labels = np.flatnonzero(dataset.labels > 1)
    for i in bad_labels:
        report.violations.append(f"record {i}: label {dataset.labels[i]} not in {{0, 1}}")
    finite = np.isfinite(dataset.vectors).all(axis=1)
    for i in np.flatnonzero(~finite):
        report.violations.append(f"record {i}: vector contains a non-finite component")
    keys = dataset.video_ids.astype(np.uint64) << np.uint64(32) | dataset.frame_ids.astype(np.uint64)
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    dup_mask = np.flatnonzero(sorted_keys[1:] == sorted_keys[:-1])
    for j in dup_mask:
        a, b = order[j], order[j + 1]
        report.violations.append(
            f"records {a} and {b} share (video_id, frame_id) = "
            f"({dataset.video_ids[a]}, {dataset.frame_ids[a]})"
        )
    return report


def _require_valid(dataset: EmbeddingDataset) -> None:
    report = validate(dataset)
    if not report.ok:
        raise ValidationError("; ".join(report.violations))


def _open_for(source, mode: str):
    """Return (stream, needs_close) for a path or an already-open stream."""
    if hasattr(source, "read") or hasattr(source, "write"):
        return source, False
    return open(source, mode), True


def write_embeddings(dataset: EmbeddingDataset, sink, format: str = "binary") -> None:
    """Serialize a valid dataset to a path or stream; binary output is byte-deterministic."""
    if format not in ("binary", "csv"):
        raise ValueError(f"unknown format {format!r}")
    _require_valid(dataset)
    if format == "binary":
        if dataset.dim > 0xFFFF:
            raise FormatError(f"dim {dataset.dim} does not fit the u16 header field")
        payload = _to_bytes(dataset)
        if hasattr(sink, "write"):
            sink.write(payload)
        else:
            with atomic_write(sink, binary=True) as fh:
                fh.write(payload)
    else:
        if hasattr(sink, "write"):
            _write_csv(dataset, sink)
        else:
            with atomic_write(sink) as fh:
                _write_csv(dataset, fh)


def _to_bytes(dataset: EmbeddingDataset) -> bytes:
    arr = np.empty(len(dataset), dtype=_record_dtype(dataset.dim))
    arr["label"] = dataset.labels
    arr["video_id"] = dataset.video_ids
    arr["frame_id"] = dataset.frame_ids
    arr["vector"] = dataset.vectors
    return _HEADER.pack(MAGIC, FORMAT_VERSION, dataset.dim, len(dataset)) + arr.tobytes()


def _write_csv(dataset: EmbeddingDataset, fh) -> None:
    header = "label,video_id,frame_id," + ",".join(f"e{i}" for i in range(dataset.dim))
    fh.write(header + "\n")
    for i in range(len(dataset)):
        coords = ",".join(fmt_float(v) for v in dataset.vectors[i])
        fh.write(f"{dataset.labels[i]},{dataset.video_ids[i]},{dataset.frame_ids[i]},{coords}\n")


def read_embeddings(source, format: str = "binary") -> EmbeddingDataset:
    """Parse a dataset from a path or stream, enforcing every invariant."""
    if format not in ("binary", "csv"):
        raise ValueError(f"unknown format {format!r}")
    if format == "binary":
        stream, close = _open_for(source, "rb")
        try:
            data = stream.read()
        finally:
            if close:
                stream.close()
        dataset = _from_bytes(data)
    else:
        stream, close = _open_for(source, "r")
        try:
            if hasattr(stream, "mode") and "b" in getattr(stream, "mode", ""):
                stream = io.TextIOWrapper(stream)
            text = stream.read()
        finally:
            if close:
                stream.close()
        dataset = _from_csv(text)
    _require_valid(dataset)
    return dataset


def _from_bytes(data: bytes) -> EmbeddingDataset:
    if len(data) == 0:
        raise FormatError("empty stream")
    if len(data) < _HEADER.size:
        raise FormatError(f"header requires {_HEADER.size} bytes, got {len(data)}")
    magic, version, dim, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}")
    if dim < 1:
        raise FormatError("dim field must be positive")
    dtype = _record_dtype(dim)
    expected = _HEADER.size + count * dtype.itemsize
    if len(data) != expected:
        raise FormatError(
            f"corrupt record section: expected {expected} bytes for {count} records "
            f"of dim {dim}, got {len(data)}"
        )
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=_HEADER.size)
    return EmbeddingDataset(
        dim,
        arr["label"].copy(),
        arr["video_id"].copy(),
        arr["frame_id"].copy(),
        arr["vector"].copy().reshape(count, dim),
    )


def _from_csv(text: str) -> EmbeddingDataset:
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty stream")
    fields = lines[0].split(",")
    if fields[:3] != ["label", "video_id", "frame_id"] or len(fields) < 4:
        raise FormatError(f"bad CSV header {lines[0]!r}")
    dim = len(fields) - 3
    if fields[3:] != [f"e{i}" for i in range(dim)]:
        raise FormatError(f"bad CSV header {lines[0]!r}")
    n = len(lines) - 1
    labels = np.empty(n, dtype=np.int64)
    video_ids = np.empty(n, dtype=np.int64)
    frame_ids = np.empty(n, dtype=np.int64)
    vectors = np.empty((n, dim), dtype=np.float32)
    for i, line in enumerate(lines[1:]):
        parts = line.split(",")
        if len(parts) != dim + 3:
            raise FormatError(f"row {i}: expected {dim + 3} fields, got {len(parts)}")
        try:
            labels[i] = int(parts[0])
            video_ids[i] = int(parts[1])
            frame_ids[i] = int(parts[2])
            vectors[i] = [float(p) for p in parts[3:]]
        except ValueError as exc:
            raise FormatError(f"row {i}: {exc}") from None
    if n and (labels.min() < 0 or labels.max() > 255):
        raise FormatError("label out of byte range")
    return EmbeddingDataset(dim, labels, video_ids, frame_ids, vectors)


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    """Video-exclusive index partition: no video contributes to both sides."""

    train_indices: np.ndarray
    test_indices: np.ndarray

    def __eq__(self, other) -> bool:
        if not isinstance(other, DatasetSplit):
            return NotImplemented
        return np.array_equal(self.train_indices, other.train_indices) and np.array_equal(
            self.test_indices, other.test_indices
        )


def split_by_video(dataset: EmbeddingDataset, test_fraction: float, seed: int) -> DatasetSplit:
    """Partition records by video so no video straddles the train/test boundary.

    Test video count is round(test_fraction * n_videos), clamped to [1, n_videos - 1].
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    videos = np.unique(dataset.video_ids)
    if videos.size < 2:
        raise DataError(f"need at least 2 distinct videos to split, got {videos.size}")
    n_test = int(round(test_fraction * videos.size))
    n_test = min(max(n_test, 1), videos.size - 1)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(videos)
    test_videos = perm[:n_test]
    test_mask = np.isin(dataset.video_ids, test_videos)
    return DatasetSplit(
        train_indices=np.flatnonzero(~test_mask),
        test_indices=np.flatnonzero(test_mask),
    )
