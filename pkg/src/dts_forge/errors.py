"""Exception hierarchy.

Every failure mode has its own class whose ``code`` is the stable,
machine-readable name surfaced by the CLI in ``--json`` mode.
``exit_code`` distinguishes usage errors (1) from data/format errors (2).
"""

from __future__ import annotations


class DtsForgeError(Exception):
    code = "DtsForgeError"
    exit_code = 2


# --- usage-class errors (bad arguments / configuration) ---

class InvalidRatio(DtsForgeError):
    code = "InvalidRatio"
    exit_code = 1


class InvalidConfig(DtsForgeError):
    code = "InvalidConfig"
    exit_code = 1


class EmptyInput(DtsForgeError):
    code = "EmptyInput"
    exit_code = 1


# --- tensor container ---

class MalformedHeader(DtsForgeError):
    code = "MalformedHeader"


class UnsupportedDtype(DtsForgeError):
    code = "UnsupportedDtype"


class OffsetOverlap(DtsForgeError):
    code = "OffsetOverlap"


class TruncatedPayload(DtsForgeError):
    code = "TruncatedPayload"


class NonFiniteValue(DtsForgeError):
    code = "NonFiniteValue"


class IoError(DtsForgeError):
    code = "IoError"


class ShapeMismatch(DtsForgeError):
    code = "ShapeMismatch"


class NonFiniteResult(DtsForgeError):
    code = "NonFiniteResult"


class RankTooLow(DtsForgeError):
    code = "RankTooLow"


# --- factorization ---

class NonFiniteInput(DtsForgeError):
    code = "NonFiniteInput"


class ConvergenceFailure(DtsForgeError):
    code = "ConvergenceFailure"


# --- codec / archives ---

class CorruptRecord(DtsForgeError):
    code = "CorruptRecord"


class BaseMismatch(DtsForgeError):
    code = "BaseMismatch"


class MissingLayer(DtsForgeError):
    code = "MissingLayer"


class BadMagic(DtsForgeError):
    code = "BadMagic"


class UnsupportedVersion(DtsForgeError):
    code = "UnsupportedVersion"


class ManifestJsonError(DtsForgeError):
    code = "ManifestJsonError"


class OffsetOutOfRange(DtsForgeError):
    code = "OffsetOutOfRange"


class ChecksumMismatch(DtsForgeError):
    code = "ChecksumMismatch"


# --- embeddings / fusion ---

class DimensionMismatch(DtsForgeError):
    code = "DimensionMismatch"


class ZeroNormEmbedding(DtsForgeError):
    code = "ZeroNormEmbedding"


class WeightTaskMismatch(DtsForgeError):
    code = "WeightTaskMismatch"


# --- benchmark ---

class NonFiniteLoss(DtsForgeError):
    code = "NonFiniteLoss"
