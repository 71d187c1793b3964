"""Deterministic synthetic scenes and oracle mask proposals.

Randomness comes from numpy's counter-based Philox generator keyed by a
SeedSequence: [seed, 0, attempt] for the vocabulary, [seed, 1, scene_index]
for the scene. Every output is a pure function of the SceneSpec.

Scene model: each ground-truth segment is a grid cell (or a Voronoi cell);
features inside a segment are its category embedding plus gaussian noise;
proposals are the gt masks as +/- mask_logit logits, and their in-vocabulary
logits favour the correct category with a void logit that can be biased per
seen/unseen category.
"""
import math
from dataclasses import dataclass

import numpy as np

from openvocab_panoptic.config import SceneSpec
from openvocab_panoptic.core_model import (
    Category,
    FeatureMap,
    PanopticMap,
    ProposalSet,
    SegmentRecord,
    VocabularyEmbedding,
    normalize_rows,
)
from openvocab_panoptic.errors import PackingError
from openvocab_panoptic.log import get_logger

logger = get_logger(__name__)

VOCAB_STREAM = 0
SCENE_STREAM = 1
MAX_EMBEDDING_COSINE = 0.9
MAX_VOCAB_ATTEMPTS = 100
ORACLE_MASK_LOGIT = 50.0


@dataclass(frozen=True)
class Scene:
    gt: PanopticMap
    features: FeatureMap
    proposals: ProposalSet
    vocab: VocabularyEmbedding


def philox(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


def generate_vocabulary(spec: SceneSpec) -> VocabularyEmbedding:
    """Random unit embeddings, regenerated until no two rows are nearly collinear."""
    v, e = spec.vocab_size, spec.embedding_dim
    for attempt in range(MAX_VOCAB_ATTEMPTS):
        rng = philox(spec.seed, VOCAB_STREAM, attempt)
        emb = normalize_rows(rng.standard_normal((v, e)))
        cos = emb @ emb.T
        np.fill_diagonal(cos, -1.0)
        if v == 1 or cos.max() < MAX_EMBEDDING_COSINE:
            break
    else:
        raise PackingError(f"no separable vocabulary of {v} categories in {e} dimensions")
    order = rng.permutation(v)
    seen = np.zeros(v, dtype=bool)
    seen[order[: int(round(spec.seen_fraction * v))]] = True
    thing = rng.random(v) < 0.5
    categories = tuple(
        Category(name=f"category_{i:03d}", seen=bool(seen[i]), thing=bool(thing[i])) for i in range(v)
    )
    return VocabularyEmbedding(categories, emb)


def _rectangles(spec: SceneSpec) -> np.ndarray:
    n, h, w = spec.n_segments, spec.height, spec.width
    ids = np.zeros((h, w), dtype=np.int64)
    if n == 0:
        return ids
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    ch, cw = h // rows, w // cols
    if ch < 1 or cw < 1:
        raise PackingError(f"cannot pack {n} rectangles into {h}x{w}")
    for k in range(n):
        r, c = divmod(k, cols)
        ids[r * ch:(r + 1) * ch, c * cw:(c + 1) * cw] = k + 1
    return ids


def _voronoi(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    n, h, w = spec.n_segments, spec.height, spec.width
    if n == 0:
        return np.zeros((h, w), dtype=np.int64)
    if n > h * w:
        raise PackingError(f"cannot place {n} Voronoi sites in {h}x{w}")
    sites = rng.choice(h * w, size=n, replace=False)
    sy, sx = np.divmod(sites, w)
    yy, xx = np.mgrid[0:h, 0:w]
    dist = (yy[None] - sy[:, None, None]) ** 2 + (xx[None] - sx[:, None, None]) ** 2
    return dist.argmin(axis=0).astype(np.int64) + 1


def _assign_categories(spec: SceneSpec, vocab: VocabularyEmbedding, rng: np.random.Generator) -> np.ndarray:
    n, v = spec.n_segments, len(vocab)
    cats = rng.permutation(v)[: min(n, v)]
    if n > v:
        things = np.flatnonzero(vocab.thing)
        if things.size == 0:
            raise PackingError(f"{n} segments but only {v} stuff categories")
        # stuff categories stay unique per scene; extra segments are thing instances
        cats = np.concatenate([cats, rng.choice(things, size=n - v)])
    return cats.astype(np.int64)


def generate_scene(spec: SceneSpec, vocab: VocabularyEmbedding = None) -> Scene:
    vocab = vocab if vocab is not None else generate_vocabulary(spec)
    rng = philox(spec.seed, SCENE_STREAM, spec.scene_index)
    h, w, n, v = spec.height, spec.width, spec.n_segments, len(vocab)

    ids = _voronoi(spec, rng) if spec.layout == "voronoi" else _rectangles(spec)
    cats = _assign_categories(spec, vocab, rng)
    segments = tuple(
        SegmentRecord(id=k + 1, category=int(cats[k]), thing=bool(vocab.thing[cats[k]])) for k in range(n)
    )
    gt = PanopticMap(ids, segments)

    noise = rng.standard_normal((h, w, vocab.dim))
    cat_map = np.zeros((h, w), dtype=np.int64)
    for k in range(n):
        cat_map[ids == k + 1] = cats[k]
    labeled = (ids > 0)[..., None]
    values = np.where(labeled, vocab.embeddings[cat_map] + spec.feature_noise * noise, noise)

    mask_noise = rng.standard_normal((n, h, w))
    logit_noise = rng.standard_normal((n, v + 1))
    masks = np.empty((n, h, w))
    logits = spec.logit_noise * logit_noise
    for k in range(n):
        masks[k] = np.where(ids == k + 1, spec.mask_logit, -spec.mask_logit) + spec.mask_noise * mask_noise[k]
        c = cats[k]
        logits[k, c] += spec.class_signal
        logits[k, v] += spec.class_signal + spec.void_logit_offset + spec.bias_for(bool(vocab.seen[c]))

    logger.debug(f"[SYNTH] scene seed={spec.seed} index={spec.scene_index}: {n} segments, {h}x{w}")
    return Scene(gt, FeatureMap(values), ProposalSet(masks, logits), vocab)


def oracle_masks(gt: PanopticMap, n_cls: int) -> ProposalSet:
    """One saturated proposal per gt segment in id order, with uniform training logits."""
    segments = sorted(gt.segments, key=lambda s: s.id)
    if not segments:
        return ProposalSet.empty(gt.height, gt.width, n_cls)
    masks = np.stack([np.where(gt.mask(s.id), ORACLE_MASK_LOGIT, -ORACLE_MASK_LOGIT) for s in segments])
    return ProposalSet(masks, np.zeros((len(segments), n_cls + 1)))
