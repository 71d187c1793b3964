"""Per-mask open-vocabulary classification.

mask pooling -> vocabulary probabilities -> seen/unseen geometric ensemble ->
objectness-gated class distribution (void last).
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from openvocab_panoptic.config import EnsembleConfig
from openvocab_panoptic.core_model import ClassDistribution, FeatureMap, VocabularyEmbedding
from openvocab_panoptic.errors import (
    DegenerateEnsembleError,
    DegenerateFeatureError,
    EmptyMaskError,
    RangeError,
    ShapeError,
)


@dataclass(frozen=True)
class PooledFeature:
    values: np.ndarray
    source_mask_area: int


def mask_pool(f: FeatureMap, mask: np.ndarray) -> PooledFeature:
    """Mean feature over the active pixels of a binary mask."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (f.height, f.width):
        raise ShapeError(f"mask shape {mask.shape} does not match feature map {(f.height, f.width)}")
    area = int(mask.sum())
    if area == 0:
        raise EmptyMaskError("cannot pool over an empty mask")
    return PooledFeature(f.values[mask].sum(axis=0) / area, area)


def clip_class_probs(pooled: PooledFeature, vocab: VocabularyEmbedding, logit_scale: float = 100.0) -> np.ndarray:
    values = np.asarray(pooled.values, dtype=np.float64)
    if values.shape != (vocab.dim,):
        raise ShapeError(f"pooled feature dim {values.shape} does not match embedding dim {vocab.dim}")
    norm = np.linalg.norm(values)
    if norm == 0.0 or not np.isfinite(norm):
        raise DegenerateFeatureError("pooled feature has zero norm")
    return softmax(logit_scale * (vocab.embeddings @ (values / norm)))


def ensemble_probs(p_in: np.ndarray, p_clip: np.ndarray, seen: np.ndarray, cfg: EnsembleConfig) -> np.ndarray:
    """Geometric ensemble: p_in^(1-w) * p_clip^w, w = alpha_seen or beta_unseen per category."""
    p_in = np.asarray(p_in, dtype=np.float64)
    p_clip = np.asarray(p_clip, dtype=np.float64)
    seen = np.asarray(seen, dtype=bool)
    if not (p_in.shape == p_clip.shape == seen.shape) or p_in.ndim != 1:
        raise ShapeError(f"ensemble inputs disagree: {p_in.shape}, {p_clip.shape}, {seen.shape}")
    w = np.where(seen, cfg.alpha_seen, cfg.beta_unseen)
    joint = np.power(p_in, 1.0 - w) * np.power(p_clip, w)
    total = joint.sum()
    if not total > 0.0:
        raise DegenerateEnsembleError("all ensemble products are zero")
    return joint / total


def compose_class_distribution(p_ens: np.ndarray, p_obj: float) -> ClassDistribution:
    """[p_ens * p_obj, 1 - p_obj]"""
    if not 0.0 <= p_obj <= 1.0:
        raise RangeError(f"p_obj {p_obj} outside [0, 1]")
    p_ens = np.asarray(p_ens, dtype=np.float64)
    return ClassDistribution(np.append(p_ens * p_obj, 1.0 - p_obj))


def objectness_from_logits(train_logits: np.ndarray) -> float:
    """1 - p_void, summed over the non-void entries for precision near zero."""
    p = softmax(np.asarray(train_logits, dtype=np.float64))
    return float(np.clip(p[:-1].sum(), 0.0, 1.0))


def in_vocabulary_probs(train_logits: np.ndarray) -> np.ndarray:
    """Softmax over the non-void training logits."""
    return softmax(np.asarray(train_logits, dtype=np.float64)[:-1])
