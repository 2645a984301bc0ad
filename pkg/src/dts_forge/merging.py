"""Base merging strategies and delta construction.

Weight averaging produces the merged base used by difference-vector
encoding; task arithmetic is the classic scaled-sum alternative. The
two-group binarizer is the coarse baseline the four-group codec is
measured against.
"""

from __future__ import annotations

from dataclasses import dataclass

from .codec import DtsArchive, encode_task
from .errors import EmptyInput, InvalidConfig
from .lowrank import CodecConfig, CodecMode
from .tensor_store import (
    DIFFERENCE_VECTOR,
    TASK_VECTOR,
    DeltaMap,
    TensorMap,
    linear_combine,
)

STRATEGY_WEIGHT_AVERAGE = "wa"
STRATEGY_TASK_ARITHMETIC = "ta"


@dataclass(frozen=True)
class MergeSpec:
    strategy: str = STRATEGY_WEIGHT_AVERAGE
    lam: float = 0.4

    def __post_init__(self):
        if self.strategy not in (STRATEGY_WEIGHT_AVERAGE, STRATEGY_TASK_ARITHMETIC):
            raise InvalidConfig(f"unknown merge strategy {self.strategy!r}")
        if self.strategy == STRATEGY_TASK_ARITHMETIC and not self.lam > 0:
            raise InvalidConfig(f"task-arithmetic coefficient must be > 0, got {self.lam}")


def weight_average(models: list[TensorMap]) -> TensorMap:
    if not models:
        raise EmptyInput("cannot average zero models")
    w = 1.0 / len(models)
    return linear_combine([(w, m) for m in models])


def task_vector(finetuned: TensorMap, base: TensorMap) -> DeltaMap:
    return DeltaMap(linear_combine([(1.0, finetuned), (-1.0, base)]), kind=TASK_VECTOR)


def task_arithmetic_merge(base: TensorMap, deltas: list[DeltaMap], lam: float) -> TensorMap:
    if not deltas:
        raise EmptyInput("task arithmetic needs at least one delta")
    terms = [(1.0, base)] + [(lam, d.tensors) for d in deltas]
    return linear_combine(terms)


def difference_vectors(models: list[TensorMap], merged: TensorMap) -> list[DeltaMap]:
    return [
        DeltaMap(linear_combine([(1.0, m), (-1.0, merged)]), kind=DIFFERENCE_VECTOR)
        for m in models
    ]


def binarize_baseline(task_name: str, delta: DeltaMap, base_fingerprint: int, r: float) -> DtsArchive:
    """Sign-only two-group variant: same SVD pipeline, one RMS per sign."""
    config = CodecConfig(r=r, mode=CodecMode.TWO_GROUP)
    return encode_task(task_name, delta, base_fingerprint, config)
