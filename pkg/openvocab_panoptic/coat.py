"""CLIP-conditioned objectness adjustment (COAT).

A proposal the mask head wants to reject (low p_obj) is rescued in proportion
to how confidently the vision-language classifier recognises it:

    p_obj' = 1 - (1 - gamma * p_cer) * (1 - p_obj)

evaluated as p_obj + gamma * p_cer * (1 - p_obj) so that gamma = 0 is an exact
identity. The boost is bounded by gamma * p_cer; p_obj' itself is not.
"""
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.special import expit

from openvocab_panoptic.classify import clip_class_probs, mask_pool, objectness_from_logits
from openvocab_panoptic.config import CoatConfig, EnsembleConfig
from openvocab_panoptic.core_model import FeatureMap, ProposalSet, VocabularyEmbedding
from openvocab_panoptic.errors import EmptyVocabularyError, RangeError, ShapeError
from openvocab_panoptic.log import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class CoatDecision:
    p_obj_before: float
    p_cer: float
    p_obj_after: float
    gamma: float


@dataclass(frozen=True)
class ProposalAdjustment:
    decision: CoatDecision
    p_clip: np.ndarray
    # 0 when the binarized mask was empty and COAT was skipped
    mask_area: int

    @property
    def p_obj_after(self) -> float:
        return self.decision.p_obj_after


def certainty(p_clip: np.ndarray) -> float:
    p_clip = np.asarray(p_clip, dtype=np.float64)
    if p_clip.size == 0:
        raise EmptyVocabularyError("certainty of an empty distribution")
    return float(p_clip.max())


def _check_unit(name: str, x) -> None:
    if not np.all((np.asarray(x) >= 0.0) & (np.asarray(x) <= 1.0)):
        raise RangeError(f"{name} outside [0, 1]")


def boosted_objectness(p_obj, p_cer, gamma):
    """Vectorised form of adjust_objectness; broadcasts over numpy inputs."""
    p_obj = np.asarray(p_obj, dtype=np.float64)
    after = p_obj + np.asarray(gamma, dtype=np.float64) * np.asarray(p_cer, dtype=np.float64) * (1.0 - p_obj)
    return np.minimum(after, 1.0)


def adjust_objectness(p_obj: float, p_cer: float, gamma: float) -> CoatDecision:
    _check_unit("p_obj", p_obj)
    _check_unit("p_cer", p_cer)
    _check_unit("gamma", gamma)
    after = float(boosted_objectness(p_obj, p_cer, gamma))
    return CoatDecision(float(p_obj), float(p_cer), after, float(gamma))


def apply_coat(
    proposals: ProposalSet,
    f: FeatureMap,
    vocab: VocabularyEmbedding,
    coat_cfg: CoatConfig,
    ens_cfg: EnsembleConfig,
    binarize_threshold: float = 0.5,
) -> List[ProposalAdjustment]:
    """Per proposal: pool -> p_clip -> p_cer -> adjusted objectness.

    Empty binarized masks keep their p_obj and get a uniform p_clip. A disabled
    config still computes p_clip (classification needs it) but records gamma 0.
    """
    if proposals.count and (proposals.height, proposals.width) != (f.height, f.width):
        raise ShapeError(f"proposal masks {(proposals.height, proposals.width)} vs features {(f.height, f.width)}")
    if f.dim != vocab.dim:
        raise ShapeError(f"feature dim {f.dim} vs embedding dim {vocab.dim}")
    gamma = coat_cfg.gamma if coat_cfg.enabled else 0.0
    n_cls = len(vocab)
    binary = expit(proposals.masks) > binarize_threshold

    out: List[ProposalAdjustment] = []
    for i in range(proposals.count):
        p_obj = objectness_from_logits(proposals.train_logits[i])
        area = int(binary[i].sum())
        if area == 0:
            p_clip = np.full(n_cls, 1.0 / n_cls)
            decision = CoatDecision(p_obj, 1.0 / n_cls, p_obj, 0.0)
            logger.debug(f"[COAT] proposal {i}: empty mask, p_obj kept at {p_obj:.4f}")
        else:
            p_clip = clip_class_probs(mask_pool(f, binary[i]), vocab, ens_cfg.logit_scale)
            decision = adjust_objectness(p_obj, certainty(p_clip), gamma)
            logger.debug(f"[COAT] proposal {i}: p_obj {p_obj:.4f} -> {decision.p_obj_after:.4f} (p_cer={decision.p_cer:.4f})")
        out.append(ProposalAdjustment(decision, p_clip, area))
    return out
