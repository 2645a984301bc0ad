"""Four-group sign/median quantizer for weight deltas.

Encoding a layer delta:

1. rank >= 2 tensors are folded to a matrix and truncated-SVD'd; rank-1
   tensors skip the factorization and are quantized directly.
2. Each factor (or the raw vector) is split by sign, then each side is split
   again at the median of its strictly-positive / strictly-negative entries,
   giving four groups: positive-large, positive-small, negative-small
   (which absorbs exact zeros), negative-large.
3. Every group is replaced by a single RMS magnitude; decode maps each
   element's 2-bit group code back to the signed group magnitude.

Singular values are kept exactly (f32). The two bitplanes (sign, magnitude)
plus four scales per factor are all that is stored.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BaseMismatch,
    CorruptRecord,
    EmptyInput,
    MissingLayer,
    NonFiniteInput,
)
from .lowrank import CodecConfig, CodecMode, rank_for_ratio, truncated_svd
from .tensor_store import (
    DIFFERENCE_VECTOR,
    DeltaMap,
    TensorMap,
    as_matrix,
    content_fingerprint,
)

KIND_VEC1D = "vec1d"
KIND_MAT2D = "mat2d"

BASE_PRETRAINED = "pretrained"
BASE_MERGED = "merged"


def _pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(bits.astype(np.uint8), bitorder="little").tobytes()


def _unpack_bits(raw: bytes, count: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8), count=count, bitorder="little").astype(bool)


@dataclass
class GroupCodes:
    """Two LSB-first bitplanes identifying each element's group.

    sign bit: 1 = strictly positive. magnitude bit: on the positive side
    1 = above the positive median; on the non-positive side 1 = above the
    negative median (the "small" group, which includes exact zeros).
    """

    length: int
    sign_bits: bytes
    mag_bits: bytes

    @classmethod
    def from_masks(cls, sign: np.ndarray, mag: np.ndarray) -> "GroupCodes":
        return cls(length=int(sign.size), sign_bits=_pack_bits(sign), mag_bits=_pack_bits(mag))

    def sign_mask(self) -> np.ndarray:
        return _unpack_bits(self.sign_bits, self.length)

    def mag_mask(self) -> np.ndarray:
        return _unpack_bits(self.mag_bits, self.length)

    def validate(self) -> None:
        expect = (self.length + 7) // 8
        if len(self.sign_bits) != expect or len(self.mag_bits) != expect:
            raise CorruptRecord(
                f"bitplane is {len(self.sign_bits)}/{len(self.mag_bits)} bytes, "
                f"{self.length} bits need {expect}"
            )
        pad = expect * 8 - self.length
        if pad:
            tail_mask = (0xFF << (8 - pad)) & 0xFF
            if (self.sign_bits[-1] & tail_mask) or (self.mag_bits[-1] & tail_mask):
                raise CorruptRecord("trailing pad bits must be zero")


@dataclass(frozen=True)
class ScaleSet:
    """Per-group RMS magnitudes, stored at f32 precision."""

    s_pos_large: float
    s_pos_small: float
    s_neg_small: float
    s_neg_large: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.s_pos_large, self.s_pos_small, self.s_neg_small, self.s_neg_large],
            dtype="<f4",
        )

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ScaleSet":
        a = np.asarray(arr, dtype="<f4")
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


def _rms(values: np.ndarray) -> float:
    """RMS of a group's values, 0 for an empty group; rounded to f32."""
    if values.size == 0:
        return 0.0
    return float(np.float32(np.sqrt(np.mean(np.square(values)))))


def threshold_codes(values: np.ndarray, mode: CodecMode = CodecMode.FOUR_GROUP) -> tuple[GroupCodes, ScaleSet]:
    flat = np.asarray(values, dtype=np.float32).ravel()
    if flat.size == 0:
        raise EmptyInput("cannot threshold an empty array")
    if not np.isfinite(flat).all():
        raise NonFiniteInput("values contain NaN/Inf")

    v = flat.astype(np.float64)
    pos = v > 0.0

    if mode == CodecMode.TWO_GROUP:
        mag = np.zeros(v.size, dtype=bool)
        s_pos = _rms(v[pos])
        s_neg = _rms(v[~pos])
        return GroupCodes.from_masks(pos, mag), ScaleSet(s_pos, s_pos, s_neg, s_neg)

    strict_neg = v < 0.0
    lam1 = float(np.median(v[pos])) if pos.any() else np.inf
    lam2 = float(np.median(v[strict_neg])) if strict_neg.any() else -np.inf

    pos_large = pos & (v > lam1)
    pos_small = pos & ~pos_large
    neg_small = ~pos & (v > lam2)  # includes exact zeros
    neg_large = ~pos & ~neg_small

    mag = pos_large | neg_small
    if mode == CodecMode.NO_SCALING:
        scales = ScaleSet(1.0, 1.0, 1.0, 1.0)
    else:
        scales = ScaleSet(
            _rms(v[pos_large]), _rms(v[pos_small]), _rms(v[neg_small]), _rms(v[neg_large])
        )
    return GroupCodes.from_masks(pos, mag), scales


def apply_codes(codes: GroupCodes, scales: ScaleSet) -> np.ndarray:
    """Decode every element to its signed group magnitude (<= 4 distinct values)."""
    # index = 2*sign + mag; negated zero scales normalize to +0.0
    lut = np.array(
        [
            -scales.s_neg_large if scales.s_neg_large else 0.0,
            -scales.s_neg_small if scales.s_neg_small else 0.0,
            scales.s_pos_small,
            scales.s_pos_large,
        ],
        dtype=np.float32,
    )
    idx = codes.sign_mask().astype(np.int8) * 2 + codes.mag_mask().astype(np.int8)
    return lut[idx]


@dataclass
class LayerRecord:
    """Compressed form of one layer's delta."""

    name: str
    kind: str
    original_shape: tuple[int, ...]
    mode: CodecMode
    # mat2d fields
    m: int = 0
    n: int = 0
    k: int = 0
    u_codes: GroupCodes | None = None
    v_codes: GroupCodes | None = None
    sigma: np.ndarray | None = None  # k singular values, f32, exact
    u_scales: ScaleSet | None = None
    v_scales: ScaleSet | None = None
    # vec1d fields
    codes: GroupCodes | None = None
    scales: ScaleSet | None = None

    def element_count(self) -> int:
        out = 1
        for d in self.original_shape:
            out *= d
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, LayerRecord):
            return NotImplemented
        if (self.name, self.kind, self.original_shape, self.mode) != (
            other.name, other.kind, other.original_shape, other.mode
        ):
            return False
        if self.kind == KIND_MAT2D:
            return (
                (self.m, self.n, self.k) == (other.m, other.n, other.k)
                and self.u_codes == other.u_codes
                and self.v_codes == other.v_codes
                and np.array_equal(self.sigma, other.sigma)
                and self.u_scales == other.u_scales
                and self.v_scales == other.v_scales
            )
        return self.codes == other.codes and self.scales == other.scales

    def validate(self) -> None:
        count = self.element_count()
        if self.kind == KIND_MAT2D:
            if len(self.original_shape) < 2 or self.original_shape[0] != self.m:
                raise CorruptRecord(f"layer {self.name!r}: shape/matrix row mismatch")
            if self.m * self.n != count:
                raise CorruptRecord(f"layer {self.name!r}: m*n != element count")
            if not (1 <= self.k <= min(self.m, self.n)):
                raise CorruptRecord(f"layer {self.name!r}: rank {self.k} out of range")
            if self.u_codes is None or self.u_codes.length != self.m * self.k:
                raise CorruptRecord(f"layer {self.name!r}: left codes length != m*k")
            if self.v_codes is None or self.v_codes.length != self.k * self.n:
                raise CorruptRecord(f"layer {self.name!r}: right codes length != k*n")
            if self.sigma is None or self.sigma.size != self.k:
                raise CorruptRecord(f"layer {self.name!r}: sigma length != k")
            self.u_codes.validate()
            self.v_codes.validate()
        elif self.kind == KIND_VEC1D:
            if self.codes is None or self.codes.length != count:
                raise CorruptRecord(f"layer {self.name!r}: codes length != element count")
            self.codes.validate()
        else:
            raise CorruptRecord(f"layer {self.name!r}: unknown kind {self.kind!r}")


@dataclass
class DtsArchive:
    """All compressed layer deltas of one task plus the base-model binding."""

    task_name: str
    base_kind: str
    base_fingerprint: int
    records: list[LayerRecord] = field(default_factory=list)
    config: CodecConfig = field(default_factory=CodecConfig)

    def record_map(self) -> dict[str, LayerRecord]:
        return {rec.name: rec for rec in self.records}

    def __eq__(self, other) -> bool:
        if not isinstance(other, DtsArchive):
            return NotImplemented
        return (
            self.task_name == other.task_name
            and self.base_kind == other.base_kind
            and self.base_fingerprint == other.base_fingerprint
            and self.config == other.config
            and self.records == other.records
        )


def encode_layer(name: str, delta: np.ndarray, config: CodecConfig) -> LayerRecord:
    arr = np.asarray(delta, dtype=np.float32)
    if not np.isfinite(arr).all():
        raise NonFiniteInput(f"layer {name!r} contains NaN/Inf")
    if arr.ndim == 1:
        codes, scales = threshold_codes(arr, config.mode)
        return LayerRecord(
            name=name,
            kind=KIND_VEC1D,
            original_shape=tuple(arr.shape),
            mode=config.mode,
            codes=codes,
            scales=scales,
        )
    matrix, meta = as_matrix(arr)
    m, n = matrix.shape
    k = rank_for_ratio(m, n, config.r)
    factors = truncated_svd(matrix.astype(np.float64), k)
    u_codes, u_scales = threshold_codes(factors.U.astype(np.float32).ravel(), config.mode)
    v_codes, v_scales = threshold_codes(factors.Vt.astype(np.float32).ravel(), config.mode)
    return LayerRecord(
        name=name,
        kind=KIND_MAT2D,
        original_shape=meta.original_shape,
        mode=config.mode,
        m=m,
        n=n,
        k=k,
        u_codes=u_codes,
        v_codes=v_codes,
        sigma=factors.sigma.astype("<f4"),
        u_scales=u_scales,
        v_scales=v_scales,
    )


def decode_layer(record: LayerRecord) -> np.ndarray:
    record.validate()
    if record.kind == KIND_VEC1D:
        return apply_codes(record.codes, record.scales).reshape(record.original_shape)
    u_hat = apply_codes(record.u_codes, record.u_scales).astype(np.float64).reshape(record.m, record.k)
    v_hat = apply_codes(record.v_codes, record.v_scales).astype(np.float64).reshape(record.k, record.n)
    out = (u_hat * record.sigma.astype(np.float64)) @ v_hat
    return out.astype(np.float32).reshape(record.original_shape)


def encode_task(
    task_name: str,
    delta_map: DeltaMap,
    base_fingerprint: int,
    config: CodecConfig,
) -> DtsArchive:
    tensors = delta_map.tensors
    if len(tensors) == 0:
        raise EmptyInput("delta map has no layers")
    records = [encode_layer(name, arr, config) for name, arr in tensors]
    base_kind = BASE_MERGED if delta_map.kind == DIFFERENCE_VECTOR else BASE_PRETRAINED
    return DtsArchive(
        task_name=task_name,
        base_kind=base_kind,
        base_fingerprint=base_fingerprint,
        records=records,
        config=config,
    )


def decode_delta(archive: DtsArchive) -> dict[str, np.ndarray]:
    return {rec.name: decode_layer(rec) for rec in archive.records}


def reconstruct_model(base: TensorMap, archive: DtsArchive) -> TensorMap:
    """base + decoded delta, layer by layer."""
    if content_fingerprint(base) != archive.base_fingerprint:
        raise BaseMismatch(
            "archive was built against a different base model (fingerprint mismatch)"
        )
    recs = archive.record_map()
    for name in base.names():
        if name not in recs:
            raise MissingLayer(f"archive lacks a record for layer {name!r}")
    for name in recs:
        if name not in base:
            raise MissingLayer(f"archive has record {name!r} not present in the base model")
    out = {}
    for name, arr in base:
        rec = recs[name]
        if rec.original_shape != tuple(arr.shape):
            raise BaseMismatch(
                f"layer {name!r}: archive shape {rec.original_shape} vs base {tuple(arr.shape)}"
            )
        delta = decode_layer(rec).astype(np.float64)
        out[name] = (arr.astype(np.float64) + delta).astype(np.float32)
    return TensorMap(out, dict(base.metadata))
