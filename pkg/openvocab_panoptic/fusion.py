"""Mask-transformer style inference: panoptic fusion and semantic aggregation."""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.special import expit

from openvocab_panoptic.config import FusionConfig
from openvocab_panoptic.core_model import (
    ClassDistribution,
    PanopticMap,
    SegmentRecord,
    VocabularyEmbedding,
    stack_distributions,
)
from openvocab_panoptic.errors import ShapeError
from openvocab_panoptic.log import get_logger

logger = get_logger(__name__)

Distributions = Union[Sequence[ClassDistribution], np.ndarray]


def _as_matrix(dists: Distributions, n_cls: Optional[int]) -> np.ndarray:
    if isinstance(dists, np.ndarray):
        d = np.asarray(dists, dtype=np.float64)
        if d.ndim != 2 or (n_cls is not None and d.shape[1] != n_cls + 1):
            raise ShapeError(f"distribution matrix has shape {d.shape}")
        return d
    return stack_distributions(list(dists), n_cls)


def _check_masks(masks: np.ndarray, dists: np.ndarray) -> np.ndarray:
    masks = np.asarray(masks, dtype=np.float64)
    if masks.ndim != 3:
        raise ShapeError(f"masks must be N x H x W, got shape {masks.shape}")
    if masks.shape[0] != dists.shape[0]:
        raise ShapeError(f"{masks.shape[0]} masks but {dists.shape[0]} class distributions")
    return masks


# -------------------
# Panoptic inference
# -------------------
def select_survivors(dists: np.ndarray, score_threshold: float) -> List[int]:
    """Indices of proposals that are not void and score above threshold, sorted by
    score descending then index ascending."""
    if dists.shape[0] == 0:
        return []
    void = dists.shape[1] - 1
    labels = dists[:, :-1].argmax(axis=1)
    scores = dists[np.arange(dists.shape[0]), labels]
    keep = (scores >= score_threshold) & (dists.argmax(axis=1) != void)
    idx = np.flatnonzero(keep)
    return [int(i) for i in idx[np.argsort(-scores[idx], kind="stable")]]


def panoptic_inference(
    masks: np.ndarray,
    dists: Distributions,
    vocab: VocabularyEmbedding,
    cfg: FusionConfig = FusionConfig(),
) -> PanopticMap:
    d = _as_matrix(dists, len(vocab))
    masks = _check_masks(masks, d)
    height, width = masks.shape[1:]
    order = select_survivors(d, cfg.score_threshold)
    if not order:
        logger.debug("[FUSION] no surviving proposals, all-void map")
        return PanopticMap.void(height, width)

    labels = d[order, :-1].argmax(axis=1)
    scores = d[order, labels]
    probs = expit(masks[order])
    binary = probs > cfg.binarize_threshold
    weighted = np.where(binary, scores[:, None, None] * probs, -1.0)
    owner = weighted.argmax(axis=0)
    owner[~binary.any(axis=0)] = -1

    thing = vocab.thing
    segment_ids = np.zeros((height, width), dtype=np.int64)
    segments: List[SegmentRecord] = []
    stuff_ids: Dict[int, int] = {}
    next_id = 1
    for k in range(len(order)):
        assigned = owner == k
        area = int(assigned.sum())
        original = int(binary[k].sum())
        if area == 0 or original == 0 or area / original < cfg.overlap_keep_ratio:
            logger.debug(f"[FUSION] proposal {order[k]} dropped (area {area}/{original})")
            continue
        category = int(labels[k])
        is_thing = bool(thing[category])
        if cfg.merge_stuff and not is_thing and category in stuff_ids:
            segment_ids[assigned] = stuff_ids[category]
            continue
        segment_ids[assigned] = next_id
        segments.append(SegmentRecord(id=next_id, category=category, thing=is_thing))
        if not is_thing:
            stuff_ids[category] = next_id
        next_id += 1
    logger.debug(f"[FUSION] {len(order)} survivors -> {len(segments)} segments")
    return PanopticMap(segment_ids, tuple(segments))


# -------------------
# Semantic inference
# -------------------
@dataclass(frozen=True)
class SemanticResult:
    categories: np.ndarray
    scores: np.ndarray
    # true when no masks contributed and `categories` is all 0 by definition
    empty: bool


def semantic_inference(masks: np.ndarray, dists: Distributions, n_cls: Optional[int] = None) -> SemanticResult:
    """score(u, v, c) = sum_i sigmoid(mask_i(u, v)) * dist_i(c); nothing is discarded."""
    d = _as_matrix(dists, n_cls)
    masks = _check_masks(masks, d)
    scores = np.einsum("nhw,nc->hwc", expit(masks), d[:, :-1])
    empty = masks.shape[0] == 0
    categories = np.zeros(masks.shape[1:], dtype=np.int64) if empty else scores.argmax(axis=-1)
    return SemanticResult(categories, scores, empty)
