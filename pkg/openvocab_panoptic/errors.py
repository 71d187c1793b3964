"""Exception hierarchy shared by every module of the engine."""

from typing import Iterable, List


class OvrError(Exception):
    """Base class for all engine errors."""


# -------------------
# Numeric / shape errors
# -------------------
class ShapeError(OvrError, ValueError):
    pass


class RangeError(OvrError, ValueError):
    pass


class ZeroNormError(ShapeError):
    def __init__(self, row: int):
        self.row = row
        super().__init__(f"row {row} has zero Euclidean norm")


class EmptyMaskError(OvrError, ValueError):
    pass


class DegenerateFeatureError(OvrError, ValueError):
    pass


class DegenerateEnsembleError(OvrError, ValueError):
    pass


class EmptyVocabularyError(OvrError, ValueError):
    pass


class TargetError(OvrError, ValueError):
    pass


# -------------------
# Tensor container errors
# -------------------
class TensorFormatError(OvrError, ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class BadMagicError(TensorFormatError):
    pass


class VersionError(TensorFormatError):
    pass


class RankError(TensorFormatError):
    pass


class UnknownDtypeError(TensorFormatError):
    pass


class TruncatedError(TensorFormatError):
    pass


# -------------------
# Panoptic file errors
# -------------------
class PanopticFormatError(OvrError, ValueError):
    pass


class OrphanSegmentError(PanopticFormatError):
    def __init__(self, ids: Iterable[int]):
        self.ids: List[int] = sorted(int(i) for i in ids)
        super().__init__(f"raster ids missing from sidecar: {self.ids}")


class DuplicateSegmentError(PanopticFormatError):
    def __init__(self, ids: Iterable[int]):
        self.ids: List[int] = sorted(int(i) for i in ids)
        super().__init__(f"duplicate segment ids in sidecar: {self.ids}")


# -------------------
# Pipeline errors
# -------------------
class PackingError(OvrError, ValueError):
    pass


class ManifestError(OvrError):
    pass


class MissingFileError(ManifestError):
    def __init__(self, path):
        self.path = path
        super().__init__(f"file not found: {path}")


class VocabularyMismatchError(OvrError, ValueError):
    def __init__(self, names: Iterable[str]):
        self.names: List[str] = list(names)
        super().__init__(f"vocabularies differ at: {self.names}")
