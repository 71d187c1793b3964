"""Training objective: mask-to-text cross entropy plus the mask-transformer losses.

Every loss returns (value, gradient w.r.t. its logits). The two-stage
fine-tuning schedule (first the mask-to-text alignment with the CLIP backbone
frozen except its final projection and normalization layers, then the mask
head) is a property of the trainer; this module only provides the values and
gradients it would consume.

    total = alpha_cls * l_cls + l_m2f_cls + w_mask * l_m2f_mask + w_dice * l_m2f_dice
"""
from typing import Callable, Optional, Tuple

import numpy as np
from pydantic import BaseModel
from scipy.special import expit, log_softmax, softmax

from openvocab_panoptic.config import LossConfig
from openvocab_panoptic.core_model import PanopticMap, ProposalSet, VocabularyEmbedding
from openvocab_panoptic.errors import ShapeError, TargetError
from openvocab_panoptic.match_metrics import hungarian, match_cost

DICE_SMOOTH = 1.0

ValueGrad = Tuple[float, np.ndarray]


class LossBreakdown(BaseModel):
    l_cls: float
    l_m2f_cls: float
    l_m2f_mask: float
    l_m2f_dice: float
    total: float
    n_matched: int


# -------------------
# Elementary losses
# -------------------
def cross_entropy_cls(logits: np.ndarray, targets: np.ndarray, weights: Optional[np.ndarray] = None) -> ValueGrad:
    """(Weighted) mean of -log softmax(logits)[target]."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} vs targets {targets.shape}")
    m, k = logits.shape
    if m == 0:
        return 0.0, np.zeros_like(logits)
    if targets.min() < 0 or targets.max() >= k:
        raise TargetError(f"target index outside [0, {k})")
    w = np.ones(m) if weights is None else np.asarray(weights, dtype=np.float64)
    norm = w.sum()
    if norm <= 0.0:
        return 0.0, np.zeros_like(logits)
    rows = np.arange(m)
    nll = -log_softmax(logits, axis=1)[rows, targets]
    grad = softmax(logits, axis=1)
    grad[rows, targets] -= 1.0
    return float((w * nll).sum() / norm), grad * (w / norm)[:, None]


def dice_loss(pred_logits: np.ndarray, gt: np.ndarray) -> ValueGrad:
    """1 - (2 sum(s g) + 1) / (sum s + sum g + 1), s = sigmoid(pred)."""
    x = np.asarray(pred_logits, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if x.shape != g.shape:
        raise ShapeError(f"prediction {x.shape} vs target {g.shape}")
    s = expit(x)
    numer = 2.0 * (s * g).sum() + DICE_SMOOTH
    denom = s.sum() + g.sum() + DICE_SMOOTH
    d_s = -(2.0 * g * denom - numer) / denom**2
    return float(1.0 - numer / denom), d_s * s * (1.0 - s)


def mask_bce_loss(pred_logits: np.ndarray, gt: np.ndarray) -> ValueGrad:
    """Mean per-pixel binary cross entropy, stable logit form."""
    x = np.asarray(pred_logits, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if x.shape != g.shape:
        raise ShapeError(f"prediction {x.shape} vs target {g.shape}")
    if x.size == 0:
        return 0.0, np.zeros_like(x)
    value = (np.logaddexp(0.0, x) - x * g).mean()
    return float(value), (expit(x) - g) / x.size


# -------------------
# Finite-difference oracles
# -------------------
def numerical_gradient(func: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + eps
        f_plus = func(x)
        x[idx] = orig - eps
        f_minus = func(x)
        x[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def gradient_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    diff = np.linalg.norm(np.ravel(analytic) - np.ravel(numeric))
    scale = max(np.linalg.norm(np.ravel(analytic)), np.linalg.norm(np.ravel(numeric)), floor)
    return float(diff / scale)


# -------------------
# Compound loss
# -------------------
def _sample_points(n_pixels: int, cfg: LossConfig) -> np.ndarray:
    if cfg.point_sample_count == "dense" or cfg.point_sample_count >= n_pixels:
        return np.arange(n_pixels)
    rng = np.random.default_rng(cfg.point_sample_seed)
    return np.sort(rng.choice(n_pixels, size=cfg.point_sample_count, replace=False))


def combined_loss(
    proposals: ProposalSet,
    clip_logits: np.ndarray,
    gt: PanopticMap,
    vocab: VocabularyEmbedding,
    cfg: LossConfig = LossConfig(),
) -> LossBreakdown:
    n_cls = len(vocab)
    clip_logits = np.asarray(clip_logits, dtype=np.float64)
    if proposals.n_train != n_cls:
        raise ShapeError(f"training logits cover {proposals.n_train} categories, vocabulary has {n_cls}")
    if clip_logits.shape != (proposals.count, n_cls):
        raise ShapeError(f"clip logits {clip_logits.shape}, expected {(proposals.count, n_cls)}")
    if proposals.count and (proposals.height, proposals.width) != gt.segment_ids.shape:
        raise ShapeError(f"proposal masks {(proposals.height, proposals.width)} vs gt {gt.segment_ids.shape}")

    assignment = hungarian(match_cost(proposals.masks, proposals.train_probs(), gt, cfg))
    rows, cols = assignment.rows, assignment.cols
    gt_cats = np.array([s.category for s in gt.segments], dtype=np.int64)

    l_cls, _ = cross_entropy_cls(clip_logits[rows], gt_cats[cols])

    targets = np.full(proposals.count, proposals.void_index, dtype=np.int64)
    targets[rows] = gt_cats[cols]
    weights = np.where(targets == proposals.void_index, cfg.void_weight, 1.0)
    l_m2f_cls, _ = cross_entropy_cls(proposals.train_logits, targets, weights)

    l_mask = l_dice = 0.0
    if rows.size:
        points = _sample_points(gt.segment_ids.size, cfg)
        flat_gt = gt.segment_ids.reshape(-1)[points]
        flat_masks = proposals.masks.reshape(proposals.count, -1)[:, points]
        for r, c in zip(rows, cols):
            target = (flat_gt == gt.segments[c].id).astype(np.float64)
            l_mask += mask_bce_loss(flat_masks[r], target)[0]
            l_dice += dice_loss(flat_masks[r], target)[0]
        l_mask /= rows.size
        l_dice /= rows.size

    total = cfg.alpha_cls * l_cls + l_m2f_cls + cfg.w_mask * l_mask + cfg.w_dice * l_dice
    return LossBreakdown(l_cls=l_cls, l_m2f_cls=l_m2f_cls, l_m2f_mask=l_mask, l_m2f_dice=l_dice,
                         total=total, n_matched=int(rows.size))
