"""Bit-exact archive serialization (DTSA format) and storage accounting.

File layout: magic ``DTSA`` | u16 version | u16 flags | u32 manifest length |
canonical JSON manifest | payload | u32 CRC32 of the payload. The manifest
lists every layer with its byte ranges into the payload; bitplanes are packed
LSB-first in row-major element order and zero-padded to whole bytes.

Storage accounting is analytic (closed form from the shapes), reported two
ways: the 2-bit-per-element cost of the merged sign/magnitude planes as
actually stored, and the hypothetical cost if the three group masks were
kept as separate 1-bit planes.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .codec import (
    DtsArchive,
    GroupCodes,
    KIND_MAT2D,
    KIND_VEC1D,
    LayerRecord,
    ScaleSet,
)
from .errors import (
    BadMagic,
    ChecksumMismatch,
    InvalidConfig,
    IoError,
    ManifestJsonError,
    OffsetOutOfRange,
    ShapeMismatch,
    UnsupportedVersion,
)
from .lowrank import CodecConfig, CodecMode, rank_for_ratio
from .tensor_store import TensorMap

MAGIC = b"DTSA"
VERSION = 1

_MAT2D_SEGMENTS = ("u_sign", "u_mag", "v_sign", "v_mag", "sigma", "u_scales", "v_scales")
_VEC1D_SEGMENTS = ("sign", "mag", "scales")


def _record_segments(rec: LayerRecord) -> list[tuple[str, bytes]]:
    if rec.kind == KIND_MAT2D:
        return [
            ("u_sign", rec.u_codes.sign_bits),
            ("u_mag", rec.u_codes.mag_bits),
            ("v_sign", rec.v_codes.sign_bits),
            ("v_mag", rec.v_codes.mag_bits),
            ("sigma", rec.sigma.astype("<f4").tobytes()),
            ("u_scales", rec.u_scales.as_array().tobytes()),
            ("v_scales", rec.v_scales.as_array().tobytes()),
        ]
    return [
        ("sign", rec.codes.sign_bits),
        ("mag", rec.codes.mag_bits),
        ("scales", rec.scales.as_array().tobytes()),
    ]


def serialize_archive(archive: DtsArchive) -> bytes:
    payload_parts: list[bytes] = []
    layers = []
    offset = 0
    for rec in archive.records:
        rec.validate()
        segments = {}
        for seg_name, blob in _record_segments(rec):
            segments[seg_name] = [offset, offset + len(blob)]
            payload_parts.append(blob)
            offset += len(blob)
        entry: dict[str, object] = {
            "kind": rec.kind,
            "mode": rec.mode.value,
            "name": rec.name,
            "original_shape": list(rec.original_shape),
            "segments": segments,
        }
        if rec.kind == KIND_MAT2D:
            entry.update({"m": rec.m, "n": rec.n, "k": rec.k})
        layers.append(entry)

    manifest = {
        "base_fingerprint": f"{archive.base_fingerprint:016x}",
        "base_kind": archive.base_kind,
        "config": {"mode": archive.config.mode.value, "r": archive.config.r},
        "layers": layers,
        "task_name": archive.task_name,
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    payload = b"".join(payload_parts)
    return (
        MAGIC
        + struct.pack("<HHI", VERSION, 0, len(head))
        + head
        + payload
        + struct.pack("<I", zlib.crc32(payload))
    )


def write_archive(archive: DtsArchive, path) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(serialize_archive(archive))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _segment(payload: bytes, spans, name: str, expect_len: int) -> bytes:
    span = spans.get(name)
    if (
        not isinstance(span, list)
        or len(span) != 2
        or not all(isinstance(x, int) for x in span)
        or span[0] < 0
        or span[1] < span[0]
    ):
        raise ManifestJsonError(f"segment {name!r} has invalid byte range {span!r}")
    begin, end = span
    if end > len(payload):
        raise OffsetOutOfRange(f"segment {name!r} extends past the payload")
    if end - begin != expect_len:
        raise ManifestJsonError(f"segment {name!r} is {end - begin} bytes, expected {expect_len}")
    return payload[begin:end]


def deserialize_archive(blob: bytes) -> DtsArchive:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagic("not a DTSA archive")
    if len(blob) < 12:
        raise OffsetOutOfRange("file too short for the fixed header")
    version, _flags, head_len = struct.unpack_from("<HHI", blob, 4)
    if version != VERSION:
        raise UnsupportedVersion(f"archive version {version}, this reader supports {VERSION}")
    if 12 + head_len + 4 > len(blob):
        raise OffsetOutOfRange("manifest extends past end of file")
    try:
        manifest = json.loads(blob[12:12 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestJsonError(f"manifest is not valid JSON: {exc}") from exc

    try:
        fingerprint = int(manifest["base_fingerprint"], 16)
        base_kind = manifest["base_kind"]
        config = CodecConfig(r=float(manifest["config"]["r"]), mode=CodecMode(manifest["config"]["mode"]))
        layers = manifest["layers"]
        task_name = manifest["task_name"]
        if not isinstance(layers, list) or not isinstance(task_name, str):
            raise TypeError("bad manifest field types")
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestJsonError(f"manifest schema violation: {exc}") from exc

    payload_len = 0
    for entry in layers:
        for span in entry.get("segments", {}).values():
            if isinstance(span, list) and len(span) == 2 and isinstance(span[1], int):
                payload_len = max(payload_len, span[1])
    expected_size = 12 + head_len + payload_len + 4
    if len(blob) != expected_size:
        raise OffsetOutOfRange(
            f"file is {len(blob)} bytes, manifest implies exactly {expected_size}"
        )
    payload = blob[12 + head_len:12 + head_len + payload_len]
    (crc_stored,) = struct.unpack_from("<I", blob, expected_size - 4)
    if zlib.crc32(payload) != crc_stored:
        raise ChecksumMismatch("payload CRC32 does not match")

    records = []
    for entry in layers:
        try:
            kind = entry["kind"]
            name = entry["name"]
            shape = tuple(int(d) for d in entry["original_shape"])
            mode = CodecMode(entry["mode"])
            spans = entry["segments"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestJsonError(f"layer entry schema violation: {exc}") from exc
        count = int(np.prod(shape)) if shape else 0
        if kind == KIND_MAT2D:
            try:
                m, n, k = int(entry["m"]), int(entry["n"]), int(entry["k"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ManifestJsonError(f"layer {name!r} missing m/n/k: {exc}") from exc
            plane_u = (m * k + 7) // 8
            plane_v = (k * n + 7) // 8
            rec = LayerRecord(
                name=name,
                kind=kind,
                original_shape=shape,
                mode=mode,
                m=m,
                n=n,
                k=k,
                u_codes=GroupCodes(m * k, _segment(payload, spans, "u_sign", plane_u),
                                   _segment(payload, spans, "u_mag", plane_u)),
                v_codes=GroupCodes(k * n, _segment(payload, spans, "v_sign", plane_v),
                                   _segment(payload, spans, "v_mag", plane_v)),
                sigma=np.frombuffer(_segment(payload, spans, "sigma", 4 * k), dtype="<f4").copy(),
                u_scales=ScaleSet.from_array(
                    np.frombuffer(_segment(payload, spans, "u_scales", 16), dtype="<f4")),
                v_scales=ScaleSet.from_array(
                    np.frombuffer(_segment(payload, spans, "v_scales", 16), dtype="<f4")),
            )
        elif kind == KIND_VEC1D:
            plane = (count + 7) // 8
            rec = LayerRecord(
                name=name,
                kind=kind,
                original_shape=shape,
                mode=mode,
                codes=GroupCodes(count, _segment(payload, spans, "sign", plane),
                                 _segment(payload, spans, "mag", plane)),
                scales=ScaleSet.from_array(
                    np.frombuffer(_segment(payload, spans, "scales", 16), dtype="<f4")),
            )
        else:
            raise ManifestJsonError(f"layer {name!r} has unknown kind {kind!r}")
        rec.validate()
        records.append(rec)

    return DtsArchive(
        task_name=task_name,
        base_kind=base_kind,
        base_fingerprint=fingerprint,
        records=records,
        config=config,
    )


def read_archive(path) -> DtsArchive:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return deserialize_archive(blob)


# --- analytic storage accounting ---

def _fold_2d(shape) -> tuple[int, int]:
    m = shape[0]
    n = 1
    for d in shape[1:]:
        n *= d
    return m, n


def layer_storage_bytes(shape, r: float, bits_per_element: int = 2) -> int:
    """Closed-form compressed size of one layer at sparsity ratio r.

    rank >= 2: two factor bitplane sets + k exact singular values + 8 scales;
    rank 1: one bitplane set + 4 scales.
    """
    shape = tuple(shape)
    if len(shape) == 1:
        count = shape[0]
        return -(-bits_per_element * count // 8) + 16
    m, n = _fold_2d(shape)
    k = rank_for_ratio(m, n, r)
    plane_u = -(-bits_per_element * m * k // 8)
    plane_v = -(-bits_per_element * k * n // 8)
    return plane_u + plane_v + 4 * k + 32


def record_storage_bytes(rec: LayerRecord, bits_per_element: int = 2) -> int:
    if rec.kind == KIND_VEC1D:
        return -(-bits_per_element * rec.element_count() // 8) + 16
    plane_u = -(-bits_per_element * rec.m * rec.k // 8)
    plane_v = -(-bits_per_element * rec.k * rec.n // 8)
    return plane_u + plane_v + 4 * rec.k + 32


@dataclass
class StorageReport:
    archive_bytes: int
    full_model_bytes: int
    amr_2bit: float
    amr_paper_3mask: float
    per_layer: list[tuple[str, int, float]]

    def to_json_dict(self) -> dict:
        return {
            "archive_bytes": self.archive_bytes,
            "full_model_bytes": self.full_model_bytes,
            "amr_2bit": self.amr_2bit,
            "amr_3mask": self.amr_paper_3mask,
            "per_layer": [
                {"name": name, "bytes": b, "fraction": frac} for name, b, frac in self.per_layer
            ],
        }


def storage_report(archive: DtsArchive, base: TensorMap) -> StorageReport:
    base_shapes = base.shapes()
    rec_shapes = {rec.name: rec.original_shape for rec in archive.records}
    if rec_shapes != base_shapes:
        raise ShapeMismatch("archive layer inventory does not match the base model")

    per_layer_bytes = {rec.name: record_storage_bytes(rec, 2) for rec in archive.records}
    total = sum(per_layer_bytes.values())
    total_3mask = sum(record_storage_bytes(rec, 3) for rec in archive.records)
    full = 4 * base.element_count()
    per_layer = [
        (rec.name, per_layer_bytes[rec.name], per_layer_bytes[rec.name] / total if total else 0.0)
        for rec in archive.records
    ]
    return StorageReport(
        archive_bytes=total,
        full_model_bytes=full,
        amr_2bit=total / full,
        amr_paper_3mask=total_3mask / full,
        per_layer=per_layer,
    )


def analytic_amr(shapes: dict[str, tuple[int, ...]], r: float, bits_per_element: int = 2) -> float:
    total = sum(layer_storage_bytes(shape, r, bits_per_element) for shape in shapes.values())
    full = 4 * sum(int(np.prod(shape)) for shape in shapes.values())
    return total / full


def choose_budget_ratio(shapes: dict[str, tuple[int, ...]], budget: float = 0.01) -> float:
    """Largest sparsity ratio (on a 1e-3 grid) whose analytic storage stays
    within the budget fraction of the full model."""
    if budget <= 0:
        raise InvalidConfig(f"storage budget must be positive, got {budget}")
    lo, hi = 1e-9, 1.0
    if analytic_amr(shapes, hi) <= budget:
        return 1.0
    if analytic_amr(shapes, 0.001) > budget:
        raise InvalidConfig(
            f"budget {budget} is below the floor cost of rank-1 factors for this model"
        )
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if analytic_amr(shapes, mid) <= budget:
            lo = mid
        else:
            hi = mid
    r = max(0.001, int(lo * 1000) / 1000.0)
    return r
