"""Named f32 tensor collections with canonical file I/O.

The on-disk layout is the common safetensors container: a little-endian u64
header length, a JSON header mapping tensor names to dtype/shape/offsets
(plus an optional ``__metadata__`` string map), then the raw row-major
little-endian f32 payload with no padding. Writing is canonical (sorted
names, fixed JSON separators) so identical maps produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EmptyInput,
    IoError,
    MalformedHeader,
    NonFiniteResult,
    NonFiniteValue,
    OffsetOverlap,
    RankTooLow,
    ShapeMismatch,
    TruncatedPayload,
    UnsupportedDtype,
)

TASK_VECTOR = "task"
DIFFERENCE_VECTOR = "diff"


def _as_f32(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr, dtype="<f4")


class TensorMap:
    """Immutable ordered map of layer name -> dense f32 tensor.

    Iteration order is always the sorted order of names.
    """

    def __init__(self, entries: dict[str, np.ndarray], metadata: dict[str, str] | None = None):
        items = {}
        for name in sorted(entries):
            if not name:
                raise ShapeMismatch("empty layer name")
            arr = _as_f32(entries[name])
            if arr.ndim < 1:
                raise ShapeMismatch(f"layer {name!r} has rank 0")
            if not np.isfinite(arr).all():
                raise NonFiniteValue(f"layer {name!r} contains NaN/Inf")
            arr.flags.writeable = False
            items[name] = arr
        self._entries = items
        self.metadata = dict(metadata or {})

    def names(self) -> list[str]:
        return list(self._entries)

    def __iter__(self):
        return iter(self._entries.items())

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: tuple(v.shape) for k, v in self._entries.items()}

    def element_count(self) -> int:
        return sum(int(v.size) for v in self._entries.values())

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorMap):
            return NotImplemented
        if self.names() != other.names() or self.metadata != other.metadata:
            return False
        for name, arr in self:
            o = other[name]
            if arr.shape != o.shape or arr.tobytes() != o.tobytes():
                return False
        return True

    def same_layout(self, other: "TensorMap") -> bool:
        return self.shapes() == other.shapes()


@dataclass
class DeltaMap:
    """A TensorMap that is a per-layer difference against some base model."""

    tensors: TensorMap
    kind: str = TASK_VECTOR  # TASK_VECTOR (vs pretrained) or DIFFERENCE_VECTOR (vs merged)

    def __post_init__(self):
        if self.kind not in (TASK_VECTOR, DIFFERENCE_VECTOR):
            raise ShapeMismatch(f"unknown delta kind {self.kind!r}")


@dataclass(frozen=True)
class ShapeMeta:
    """Original shape of a tensor flattened to 2-D, so the fold is invertible."""

    original_shape: tuple[int, ...]


def serialize_tensor_map(tmap: TensorMap) -> bytes:
    header: dict[str, object] = {}
    if tmap.metadata:
        header["__metadata__"] = {k: tmap.metadata[k] for k in sorted(tmap.metadata)}
    offset = 0
    payload = []
    for name, arr in tmap:
        data = arr.tobytes()
        header[name] = {
            "dtype": "F32",
            "shape": list(arr.shape),
            "data_offsets": [offset, offset + len(data)],
        }
        payload.append(data)
        offset += len(data)
    head = json.dumps(header, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return struct.pack("<Q", len(head)) + head + b"".join(payload)


def save_tensor_map(tmap: TensorMap, path: str | Path) -> None:
    try:
        Path(path).write_bytes(serialize_tensor_map(tmap))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def deserialize_tensor_map(blob: bytes) -> TensorMap:
    if len(blob) < 8:
        raise MalformedHeader("file shorter than the 8-byte length prefix")
    (head_len,) = struct.unpack_from("<Q", blob, 0)
    if head_len > len(blob) - 8:
        raise MalformedHeader(f"header length {head_len} exceeds file size")
    try:
        header = json.loads(blob[8:8 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeader(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise MalformedHeader("header is not a JSON object")

    metadata = header.pop("__metadata__", {})
    if not isinstance(metadata, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()
    ):
        raise MalformedHeader("__metadata__ must be a string map")

    payload = blob[8 + head_len:]
    entries: dict[str, np.ndarray] = {}
    spans: list[tuple[int, int, str]] = []
    for name, info in header.items():
        if not isinstance(info, dict) or not {"dtype", "shape", "data_offsets"} <= set(info):
            raise MalformedHeader(f"tensor entry {name!r} missing dtype/shape/data_offsets")
        if info["dtype"] != "F32":
            raise UnsupportedDtype(f"tensor {name!r} has dtype {info['dtype']!r}, only F32 is supported")
        shape = info["shape"]
        if (
            not isinstance(shape, list)
            or len(shape) < 1
            or not all(isinstance(d, int) and d > 0 for d in shape)
        ):
            raise MalformedHeader(f"tensor {name!r} has invalid shape {shape!r}")
        begin, end = info["data_offsets"]
        if not (isinstance(begin, int) and isinstance(end, int)) or begin < 0 or end < begin:
            raise MalformedHeader(f"tensor {name!r} has invalid offsets [{begin}, {end}]")
        nbytes = 4 * int(np.prod(shape))
        if end - begin != nbytes:
            raise MalformedHeader(
                f"tensor {name!r}: offsets span {end - begin} bytes, shape needs {nbytes}"
            )
        if end > len(payload):
            raise TruncatedPayload(f"tensor {name!r} extends past end of file")
        spans.append((begin, end, name))
        arr = np.frombuffer(payload[begin:end], dtype="<f4").reshape(shape)
        entries[name] = arr

    spans.sort()
    for (b0, e0, n0), (b1, e1, n1) in zip(spans, spans[1:]):
        if b1 < e0:
            raise OffsetOverlap(f"tensors {n0!r} and {n1!r} overlap in the payload")

    return TensorMap(entries, metadata)


def load_tensor_map(path: str | Path) -> TensorMap:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return deserialize_tensor_map(blob)


def content_fingerprint(tmap: TensorMap) -> int:
    """64-bit content hash of the canonical serialization."""
    digest = hashlib.sha256(serialize_tensor_map(tmap)).digest()
    return int.from_bytes(digest[:8], "big")


def linear_combine(terms: list[tuple[float, TensorMap]]) -> TensorMap:
    """Per-element weighted sum, accumulated in f64 and stored as f32."""
    if not terms:
        raise EmptyInput("linear_combine needs at least one term")
    _, first = terms[0]
    for _, other in terms[1:]:
        if not first.same_layout(other):
            raise ShapeMismatch("maps passed to linear_combine differ in names or shapes")
    out = {}
    for name, _ in first:
        acc = np.zeros(first[name].shape, dtype=np.float64)
        for coeff, tmap in terms:
            acc += float(coeff) * tmap[name].astype(np.float64)
        if not np.isfinite(acc).all():
            raise NonFiniteResult(f"combination overflowed at layer {name!r}")
        out[name] = acc.astype(np.float32)
    return TensorMap(out)


def as_matrix(tensor: np.ndarray) -> tuple[np.ndarray, ShapeMeta]:
    """Fold a rank>=2 tensor to 2-D: trailing dims collapse into columns."""
    if tensor.ndim < 2:
        raise RankTooLow(f"rank {tensor.ndim} tensor cannot be viewed as a matrix")
    meta = ShapeMeta(tuple(tensor.shape))
    return tensor.reshape(tensor.shape[0], -1), meta


def from_matrix(matrix: np.ndarray, meta: ShapeMeta) -> np.ndarray:
    return matrix.reshape(meta.original_shape)
