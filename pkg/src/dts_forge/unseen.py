"""Data-free fusion of compressed deltas for a task with no checkpoint.

Fusion weights come from cosine similarity between the target task's
characteristic embedding and each seen task's embedding. Negative cosines
are clamped to zero before normalizing; if every similarity clamps to zero
the weights fall back to uniform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import DtsArchive, decode_delta
from .errors import (
    BaseMismatch,
    DimensionMismatch,
    EmptyInput,
    IoError,
    ManifestJsonError,
    WeightTaskMismatch,
    ZeroNormEmbedding,
)
from .tensor_store import TensorMap, content_fingerprint


@dataclass
class TaskEmbedding:
    task_name: str
    vector: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        if vec.ndim != 1 or not np.isfinite(vec).all():
            raise ZeroNormEmbedding(f"embedding for {self.task_name!r} must be a finite 1-D vector")
        if np.linalg.norm(vec) == 0.0:
            raise ZeroNormEmbedding(f"embedding for {self.task_name!r} has zero norm")
        self.vector = vec


@dataclass
class MergeWeights:
    weights: list[tuple[str, float]]

    def as_dict(self) -> dict[str, float]:
        return dict(self.weights)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def similarity_weights(target: TaskEmbedding, seen: list[TaskEmbedding]) -> MergeWeights:
    if not seen:
        raise EmptyInput("no seen-task embeddings")
    dim = target.vector.size
    for emb in seen:
        if emb.vector.size != dim:
            raise DimensionMismatch(
                f"embedding for {emb.task_name!r} has dimension {emb.vector.size}, target has {dim}"
            )
    sims = np.array([max(0.0, _cosine(target.vector, emb.vector)) for emb in seen])
    total = sims.sum()
    if total == 0.0:
        gammas = np.full(len(seen), 1.0 / len(seen))
    else:
        gammas = sims / total
    return MergeWeights([(emb.task_name, float(g)) for emb, g in zip(seen, gammas)])


def merge_for_unseen(base: TensorMap, archives: list[DtsArchive], weights: MergeWeights) -> TensorMap:
    if not archives:
        raise EmptyInput("no archives to fuse")
    wmap = weights.as_dict()
    names = sorted(a.task_name for a in archives)
    if sorted(wmap) != names:
        raise WeightTaskMismatch(
            f"weights cover {sorted(wmap)}, archives cover {names}"
        )
    fp = content_fingerprint(base)
    for archive in archives:
        if archive.base_fingerprint != fp:
            raise BaseMismatch(f"archive {archive.task_name!r} was built against a different base")

    acc = {name: arr.astype(np.float64) for name, arr in base}
    for archive in archives:
        gamma = wmap[archive.task_name]
        for name, delta in decode_delta(archive).items():
            acc[name] = acc[name] + gamma * delta.astype(np.float64)
    return TensorMap({name: arr.astype(np.float32) for name, arr in acc.items()}, dict(base.metadata))


def load_embeddings(path) -> tuple[TaskEmbedding, list[TaskEmbedding]]:
    """Read the embeddings JSON: {"dimension": D, "tasks": {name: [...]}, "target": [...]}."""
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestJsonError(f"embeddings file is not valid JSON: {exc}") from exc
    try:
        dim = int(doc["dimension"])
        tasks = doc["tasks"]
        target_vec = doc["target"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestJsonError(f"embeddings schema violation: {exc}") from exc
    if not isinstance(tasks, dict) or not tasks:
        raise ManifestJsonError("embeddings file lists no tasks")
    seen = []
    for name in sorted(tasks):
        vec = np.asarray(tasks[name], dtype=np.float64)
        if vec.size != dim:
            raise DimensionMismatch(f"task {name!r} embedding has {vec.size} entries, expected {dim}")
        seen.append(TaskEmbedding(name, vec))
    target_arr = np.asarray(target_vec, dtype=np.float64)
    if target_arr.size != dim:
        raise DimensionMismatch(f"target embedding has {target_arr.size} entries, expected {dim}")
    return TaskEmbedding("__target__", target_arr), seen
