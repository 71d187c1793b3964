"""Single-image inference: COAT -> ensemble -> gated distributions -> fusion."""
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from openvocab_panoptic.classify import compose_class_distribution, ensemble_probs, in_vocabulary_probs
from openvocab_panoptic.coat import CoatDecision, apply_coat
from openvocab_panoptic.config import CoatConfig, EnsembleConfig, FusionConfig
from openvocab_panoptic.core_model import (
    ClassDistribution,
    FeatureMap,
    PanopticMap,
    ProposalSet,
    VocabularyEmbedding,
)
from openvocab_panoptic.errors import ShapeError
from openvocab_panoptic.fusion import SemanticResult, panoptic_inference, semantic_inference
from openvocab_panoptic.log import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class ImagePrediction:
    panoptic: PanopticMap
    semantic: SemanticResult
    distributions: Tuple[ClassDistribution, ...]
    decisions: Tuple[CoatDecision, ...]


def classify_proposals(
    proposals: ProposalSet,
    f: FeatureMap,
    vocab: VocabularyEmbedding,
    coat_cfg: CoatConfig = CoatConfig(),
    ens_cfg: EnsembleConfig = EnsembleConfig(),
    binarize_threshold: float = 0.5,
) -> Tuple[List[ClassDistribution], List[CoatDecision]]:
    """The in-vocabulary logits must be aligned with the evaluation vocabulary (N_train == N_cls)."""
    if proposals.n_train != len(vocab):
        raise ShapeError(f"training logits cover {proposals.n_train} categories, vocabulary has {len(vocab)}")
    adjustments = apply_coat(proposals, f, vocab, coat_cfg, ens_cfg, binarize_threshold)
    seen = vocab.seen
    dists = []
    for i, adj in enumerate(adjustments):
        p_in = in_vocabulary_probs(proposals.train_logits[i])
        p_ens = ensemble_probs(p_in, adj.p_clip, seen, ens_cfg)
        dists.append(compose_class_distribution(p_ens, adj.p_obj_after))
    return dists, [a.decision for a in adjustments]


def infer_image(
    proposals: ProposalSet,
    f: FeatureMap,
    vocab: VocabularyEmbedding,
    coat_cfg: CoatConfig = CoatConfig(),
    ens_cfg: EnsembleConfig = EnsembleConfig(),
    fusion_cfg: FusionConfig = FusionConfig(),
) -> ImagePrediction:
    dists, decisions = classify_proposals(proposals, f, vocab, coat_cfg, ens_cfg, fusion_cfg.binarize_threshold)
    d = np.stack([x.probs for x in dists]) if dists else np.zeros((0, len(vocab) + 1))
    masks = proposals.masks if proposals.count else np.zeros((0, f.height, f.width))
    panoptic = panoptic_inference(masks, d, vocab, fusion_cfg)
    semantic = semantic_inference(masks, d, len(vocab))
    return ImagePrediction(panoptic, semantic, tuple(dists), tuple(decisions))
