import numpy as np
import pytest

from conftest import make_vocab
from openvocab_panoptic.config import CoatConfig, EnsembleConfig, FusionConfig, SceneSpec
from openvocab_panoptic.core_model import FeatureMap, ProposalSet
from openvocab_panoptic.errors import ShapeError
from openvocab_panoptic.match_metrics import panoptic_quality
from openvocab_panoptic.pipeline import classify_proposals, infer_image
from openvocab_panoptic.synth import generate_scene

CLIP_ALONE = EnsembleConfig(alpha_seen=1.0, beta_unseen=1.0)


def noisy_spec(seed):
    return SceneSpec(seed=seed, height=48, width=48, n_segments=6, vocab_size=10,
                     feature_noise=2.0, logit_noise=1.0, objectness_bias={"seen": 0.0, "unseen": 4.0})


def pq_for(scene, coat, ensemble):
    pred = infer_image(scene.proposals, scene.features, scene.vocab, coat, ensemble)
    return panoptic_quality(pred.panoptic, scene.gt, scene.vocab).overall.pq


def test_distributions_are_gated_simplices():
    scene = generate_scene(SceneSpec(seed=3, feature_noise=0.5, logit_noise=0.5))
    dists, decisions = classify_proposals(scene.proposals, scene.features, scene.vocab)
    assert len(dists) == len(decisions) == scene.proposals.count
    for d, dec in zip(dists, decisions):
        assert d.probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert d.void == pytest.approx(1.0 - dec.p_obj_after, abs=1e-12)


def test_training_vocabulary_must_align():
    vocab = make_vocab(3, dim=4)
    proposals = ProposalSet(np.zeros((1, 2, 2)), np.zeros((1, 5)))
    with pytest.raises(ShapeError):
        classify_proposals(proposals, FeatureMap(np.ones((2, 2, 4))), vocab)


def test_no_proposals_gives_void_and_flagged_semantic():
    vocab = make_vocab(3, dim=4)
    pred = infer_image(ProposalSet.empty(3, 3, 3), FeatureMap(np.ones((3, 3, 4))), vocab)
    assert pred.panoptic.segments == ()
    assert pred.semantic.empty


def test_disabled_coat_equals_gamma_zero():
    scene = generate_scene(SceneSpec(seed=17, objectness_bias={"seen": 0.0, "unseen": 4.0}))
    off = infer_image(scene.proposals, scene.features, scene.vocab, CoatConfig(enabled=False))
    zero = infer_image(scene.proposals, scene.features, scene.vocab, CoatConfig(gamma=0.0))
    np.testing.assert_array_equal(off.panoptic.segment_ids, zero.panoptic.segment_ids)
    assert off.panoptic.segments == zero.panoptic.segments
    np.testing.assert_array_equal(off.semantic.scores, zero.semantic.scores)


def test_score_threshold_above_one_leaves_semantic_alone():
    scene = generate_scene(SceneSpec(seed=2, feature_noise=0.5))
    base = infer_image(scene.proposals, scene.features, scene.vocab)
    blocked = infer_image(scene.proposals, scene.features, scene.vocab,
                          fusion_cfg=FusionConfig(score_threshold=1.1))
    assert blocked.panoptic.segments == ()
    np.testing.assert_array_equal(base.semantic.scores, blocked.semantic.scores)
    np.testing.assert_array_equal(base.semantic.categories, blocked.semantic.categories)


def test_ensemble_and_coat_ablation_ordering():
    wins = {"ensemble_vs_clip": 0, "coat_ensemble": 0, "coat_clip": 0}
    for seed in range(20):
        scene = generate_scene(noisy_spec(seed))
        on, off = CoatConfig(gamma=0.5), CoatConfig(enabled=False)
        ens_on, ens_off = pq_for(scene, on, EnsembleConfig()), pq_for(scene, off, EnsembleConfig())
        clip_on, clip_off = pq_for(scene, on, CLIP_ALONE), pq_for(scene, off, CLIP_ALONE)
        wins["ensemble_vs_clip"] += ens_on >= clip_on
        wins["coat_ensemble"] += ens_on >= ens_off
        wins["coat_clip"] += clip_on >= clip_off
    assert all(w >= 16 for w in wins.values()), wins
