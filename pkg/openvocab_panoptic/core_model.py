"""Domain types shared by every stage of the engine.

Array-backed types are frozen dataclasses holding float64 (or integer) numpy
arrays that are marked read-only on construction. Void is always the LAST
entry of a logit or probability vector.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.special import softmax

from openvocab_panoptic.errors import RangeError, ShapeError, ZeroNormError

UNIT_NORM_TOL = 1e-6
SIMPLEX_TOL = 1e-6


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


# -------------------
# Records
# -------------------
class Category(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    seen: bool = True
    thing: bool = True


class SegmentRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: int
    category: int
    thing: bool


@dataclass(frozen=True)
class Violation:
    indices: Tuple[int, ...]
    reason: str

    def __str__(self) -> str:
        return f"{list(self.indices)}: {self.reason}"


# -------------------
# FeatureMap
# -------------------
@dataclass(frozen=True)
class FeatureMap:
    """Dense H x W x E image features."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 3 or min(values.shape) < 1:
            raise ShapeError(f"feature map must be H x W x E with every dim >= 1, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise RangeError("feature map contains non-finite values")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]


# -------------------
# VocabularyEmbedding
# -------------------
@dataclass(frozen=True)
class VocabularyEmbedding:
    """Text embeddings, one row per category.

    Construction only checks shapes; `validate_vocabulary` reports the
    remaining invariants so a broken file can be described completely.
    """

    categories: Tuple[Category, ...]
    embeddings: np.ndarray

    def __post_init__(self):
        cats = tuple(self.categories)
        emb = np.array(self.embeddings, dtype=np.float64)
        if emb.ndim != 2:
            raise ShapeError(f"embeddings must be N_cls x E, got shape {emb.shape}")
        if emb.shape[0] != len(cats):
            raise ShapeError(f"{len(cats)} categories but {emb.shape[0]} embedding rows")
        object.__setattr__(self, "categories", cats)
        object.__setattr__(self, "embeddings", _frozen(emb))

    def __len__(self) -> int:
        return len(self.categories)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def names(self) -> List[str]:
        return [c.name for c in self.categories]

    @property
    def seen(self) -> np.ndarray:
        return np.array([c.seen for c in self.categories], dtype=bool)

    @property
    def thing(self) -> np.ndarray:
        return np.array([c.thing for c in self.categories], dtype=bool)


def validate_vocabulary(v: VocabularyEmbedding) -> List[Violation]:
    report: List[Violation] = []
    if len(v) < 1:
        report.append(Violation((), "vocabulary is empty"))
        return report
    finite = np.all(np.isfinite(v.embeddings), axis=1)
    norms = np.linalg.norm(v.embeddings, axis=1)
    for i in range(len(v)):
        if not finite[i]:
            report.append(Violation((i,), "embedding row has non-finite values"))
        elif abs(norms[i] - 1.0) > UNIT_NORM_TOL:
            report.append(Violation((i,), f"embedding row norm {norms[i]:.6g} is not 1"))
    seen_at: Dict[str, List[int]] = {}
    for i, c in enumerate(v.categories):
        seen_at.setdefault(c.name, []).append(i)
    for name, idx in seen_at.items():
        if len(idx) > 1:
            report.append(Violation(tuple(idx), f"duplicate category name {name!r}"))
    return report


def normalize_rows(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {m.shape}")
    norms = np.linalg.norm(m, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ZeroNormError(int(zero[0]))
    return m / norms[:, None]


# -------------------
# ProposalSet
# -------------------
@dataclass(frozen=True)
class ProposalSet:
    """N mask proposals: mask logits N x H x W, training logits N x (N_train + 1)."""

    masks: np.ndarray
    train_logits: np.ndarray

    def __post_init__(self):
        masks = np.array(self.masks, dtype=np.float64)
        logits = np.array(self.train_logits, dtype=np.float64)
        if masks.ndim != 3:
            raise ShapeError(f"masks must be N x H x W, got shape {masks.shape}")
        if logits.ndim != 2 or logits.shape[1] < 1:
            raise ShapeError(f"train logits must be N x (N_train + 1), got shape {logits.shape}")
        if masks.shape[0] != logits.shape[0]:
            raise ShapeError(f"{masks.shape[0]} masks but {logits.shape[0]} logit rows")
        if not (np.all(np.isfinite(masks)) and np.all(np.isfinite(logits))):
            raise RangeError("proposal logits must be finite")
        object.__setattr__(self, "masks", _frozen(masks))
        object.__setattr__(self, "train_logits", _frozen(logits))

    @classmethod
    def empty(cls, height: int, width: int, n_train: int) -> "ProposalSet":
        return cls(np.zeros((0, height, width)), np.zeros((0, n_train + 1)))

    @property
    def count(self) -> int:
        return self.masks.shape[0]

    @property
    def height(self) -> int:
        return self.masks.shape[1]

    @property
    def width(self) -> int:
        return self.masks.shape[2]

    @property
    def n_train(self) -> int:
        return self.train_logits.shape[1] - 1

    @property
    def void_index(self) -> int:
        return self.n_train

    def train_probs(self) -> np.ndarray:
        return softmax(self.train_logits, axis=1)

    def subset(self, order: Sequence[int]) -> "ProposalSet":
        order = np.asarray(order, dtype=np.int64)
        return ProposalSet(self.masks[order], self.train_logits[order])


# -------------------
# ClassDistribution
# -------------------
@dataclass(frozen=True)
class ClassDistribution:
    """Probability over N_cls categories plus void (last)."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size < 2:
            raise ShapeError(f"class distribution needs N_cls + 1 >= 2 entries, got shape {p.shape}")
        if np.any(p < -SIMPLEX_TOL) or np.any(p > 1.0 + SIMPLEX_TOL):
            raise RangeError("class distribution entries must lie in [0, 1]")
        if abs(p.sum() - 1.0) > SIMPLEX_TOL:
            raise RangeError(f"class distribution sums to {p.sum():.9g}, not 1")
        object.__setattr__(self, "probs", _frozen(p))

    @property
    def n_cls(self) -> int:
        return self.probs.size - 1

    @property
    def void(self) -> float:
        return float(self.probs[-1])


def stack_distributions(dists: Sequence[ClassDistribution], n_cls: Optional[int] = None) -> np.ndarray:
    """N x (N_cls + 1) matrix; `n_cls` is needed only to shape an empty stack."""
    if len(dists) == 0:
        if n_cls is None:
            raise ShapeError("n_cls is required to stack zero distributions")
        return np.zeros((0, n_cls + 1))
    widths = {d.probs.size for d in dists}
    if len(widths) != 1 or (n_cls is not None and widths != {n_cls + 1}):
        raise ShapeError(f"class distributions disagree on width: {sorted(widths)}")
    return np.stack([d.probs for d in dists])


# -------------------
# PanopticMap
# -------------------
@dataclass(frozen=True)
class PanopticMap:
    """Per-pixel segment ids (0 = void) plus one record per segment."""

    segment_ids: np.ndarray
    segments: Tuple[SegmentRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        ids = np.array(self.segment_ids)
        if ids.ndim != 2 or min(ids.shape) < 1:
            raise ShapeError(f"segment id raster must be H x W, got shape {ids.shape}")
        if not np.issubdtype(ids.dtype, np.integer):
            raise ShapeError(f"segment ids must be integers, got {ids.dtype}")
        object.__setattr__(self, "segment_ids", _frozen(ids.astype(np.int64)))
        object.__setattr__(self, "segments", tuple(self.segments))

    @classmethod
    def void(cls, height: int, width: int) -> "PanopticMap":
        return cls(np.zeros((height, width), dtype=np.int64), ())

    @property
    def height(self) -> int:
        return self.segment_ids.shape[0]

    @property
    def width(self) -> int:
        return self.segment_ids.shape[1]

    def segment(self, segment_id: int) -> SegmentRecord:
        for s in self.segments:
            if s.id == segment_id:
                return s
        raise KeyError(segment_id)

    def mask(self, segment_id: int) -> np.ndarray:
        return self.segment_ids == segment_id

    def semantic(self, void_label: int = -1) -> np.ndarray:
        """Category per pixel, `void_label` where the id is 0."""
        lut = {0: void_label}
        lut.update({s.id: s.category for s in self.segments})
        out = np.full(self.segment_ids.shape, void_label, dtype=np.int64)
        for sid, cat in lut.items():
            out[self.segment_ids == sid] = cat
        return out


def validate_panoptic(m: PanopticMap, n_cls: Optional[int] = None) -> List[Violation]:
    report: List[Violation] = []
    if np.any(m.segment_ids < 0):
        report.append(Violation((), "negative segment ids in raster"))
    ids = [s.id for s in m.segments]
    counts: Dict[int, int] = {}
    for sid in ids:
        counts[sid] = counts.get(sid, 0) + 1
    dupes = sorted(sid for sid, c in counts.items() if c > 1)
    if dupes:
        report.append(Violation(tuple(dupes), "duplicate segment ids"))
    present, areas = np.unique(m.segment_ids, return_counts=True)
    area_of = dict(zip(present.tolist(), areas.tolist()))
    orphans = sorted(int(p) for p in present if p > 0 and p not in counts)
    if orphans:
        report.append(Violation(tuple(orphans), "raster ids without a segment record"))
    for s in m.segments:
        if s.id <= 0:
            report.append(Violation((s.id,), "segment id must be positive"))
        elif area_of.get(s.id, 0) < 1:
            report.append(Violation((s.id,), "segment has no pixels"))
        if n_cls is not None and not 0 <= s.category < n_cls:
            report.append(Violation((s.id,), f"category {s.category} outside vocabulary of {n_cls}"))
    return report
