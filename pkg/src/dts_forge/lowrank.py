"""Deterministic truncated SVD and rank selection from a sparsity ratio."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConvergenceFailure, InvalidRatio, NonFiniteInput


class CodecMode(str, Enum):
    FOUR_GROUP = "four"
    TWO_GROUP = "two"
    NO_SCALING = "noscale"


@dataclass(frozen=True)
class CodecConfig:
    r: float = 0.3
    mode: CodecMode = CodecMode.FOUR_GROUP

    def __post_init__(self):
        validate_ratio(self.r)


def validate_ratio(r: float) -> None:
    if not (0.0 < r <= 1.0):
        raise InvalidRatio(f"sparsity ratio must be in (0, 1], got {r}")


def rank_for_ratio(m: int, n: int, r: float) -> int:
    """k = max(1, ceil(r * min(m, n))), never exceeding min(m, n)."""
    validate_ratio(r)
    full = min(m, n)
    k = max(1, int(np.ceil(r * full)))
    return min(k, full)


@dataclass
class SvdFactors:
    """Top-k factors; sigma is non-increasing and the sign of each U column
    is fixed so its largest-magnitude entry is positive."""

    U: np.ndarray   # m x k
    sigma: np.ndarray  # k
    Vt: np.ndarray  # k x n


def truncated_svd(matrix: np.ndarray, k: int) -> SvdFactors:
    m, n = matrix.shape
    if not np.isfinite(matrix).all():
        raise NonFiniteInput("matrix contains NaN/Inf")
    if not (1 <= k <= min(m, n)):
        raise InvalidRatio(f"rank {k} out of range for a {m}x{n} matrix")
    try:
        u, s, vt = np.linalg.svd(matrix.astype(np.float64), full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    u, s, vt = u[:, :k].copy(), s[:k].copy(), vt[:k, :].copy()
    # fix the sign ambiguity column by column
    for j in range(k):
        col = u[:, j]
        lead = col[np.argmax(np.abs(col))]
        if lead < 0:
            u[:, j] = -col
            vt[j, :] = -vt[j, :]
    return SvdFactors(U=u, sigma=s, Vt=vt)


def compose(factors: SvdFactors) -> np.ndarray:
    return (factors.U * factors.sigma) @ factors.Vt
