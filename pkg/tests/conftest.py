from pathlib import Path

import numpy as np
import pytest

from openvocab_panoptic.config import SynthFile
from openvocab_panoptic.core_model import Category, PanopticMap, SegmentRecord, VocabularyEmbedding, normalize_rows
from openvocab_panoptic.runner import synthesize_fixture

MISLEADING_DIR = Path(__file__).parent / "fixtures" / "misleading"
MISLEADING_MANIFEST = MISLEADING_DIR / "manifest.yaml"


def make_vocab(n_cls, dim=None, seen=None, thing=None, seed=0):
    """Random unit embeddings with names c0, c1, ..."""
    rng = np.random.default_rng(seed)
    dim = dim or max(n_cls, 2)
    seen = [True] * n_cls if seen is None else seen
    thing = [True] * n_cls if thing is None else thing
    cats = tuple(Category(name=f"c{i}", seen=seen[i], thing=thing[i]) for i in range(n_cls))
    return VocabularyEmbedding(cats, normalize_rows(rng.standard_normal((n_cls, dim))))


def blocky_panoptic(rng, height=16, width=16, grid=4, n_cls=5, void_rate=0.2):
    """Panoptic map from an upsampled random grid of cells; each cell its own segment or void."""
    cells = np.arange(1, grid * grid + 1).reshape(grid, grid)
    cells[rng.random((grid, grid)) < void_rate] = 0
    ids = np.kron(cells, np.ones((height // grid, width // grid), dtype=np.int64))
    segments = tuple(
        SegmentRecord(id=int(s), category=int(rng.integers(n_cls)), thing=True)
        for s in np.unique(ids) if s > 0
    )
    return PanopticMap(ids, segments)


def perturb_panoptic(rng, pmap, flip_rate=0.15, recat_rate=0.2, n_cls=5):
    """Copy of pmap with some pixels moved to other present ids and some categories changed."""
    ids = pmap.segment_ids.copy()
    present = np.unique(ids)
    flip = rng.random(ids.shape) < flip_rate
    ids[flip] = rng.choice(present, size=int(flip.sum()))
    remaining = set(np.unique(ids).tolist()) - {0}
    segments = []
    for s in pmap.segments:
        if s.id not in remaining:
            continue
        cat = int(rng.integers(n_cls)) if rng.random() < recat_rate else s.category
        segments.append(SegmentRecord(id=s.id, category=cat, thing=s.thing))
    return PanopticMap(ids, tuple(segments))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def perfect_manifest(tmp_path):
    return synthesize_fixture(SynthFile(seed=7, height=32, width=32, n_segments=4, vocab_size=6), tmp_path / "perfect")


@pytest.fixture
def biased_manifest(tmp_path):
    spec = SynthFile(seed=11, height=32, width=32, n_segments=6, vocab_size=10,
                     objectness_bias={"seen": 0.0, "unseen": 4.0})
    return synthesize_fixture(spec, tmp_path / "biased")


def misleading_scene():
    """In-memory contents of fixtures/misleading: vocabulary, gt, features, masks and training logits."""
    categories = (Category(name="c0"), Category(name="c1", seen=False), Category(name="c2"))
    ids = np.repeat(np.repeat(np.array([[1, 2, 3]]), 4, axis=1), 4, axis=0)
    gt = PanopticMap(ids, tuple(SegmentRecord(id=k, category=k - 1, thing=True) for k in (1, 2, 3)))
    features = np.zeros((4, 12, 3))
    features[ids != 2, 0] = 1.0
    features[ids == 2, 1] = 1.0
    masks = np.stack([np.where(ids == k, 50.0, -50.0) for k in (1, 2, 3)])
    logits = np.array([
        [20.0, 0.0, 0.0, 0.0],
        [0.0, 20.0, 0.0, 19.8],  # objectness ~0.55
        [0.0, 0.0, 0.0, 4.0],    # objectness ~0.05
    ])
    return VocabularyEmbedding(categories, np.eye(3)), gt, features, masks, logits
