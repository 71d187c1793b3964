"""Assignment and evaluation: Hungarian matching, matching cost, PQ/SQ/RQ and mIoU."""
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel
from scipy.optimize import linear_sum_assignment
from scipy.special import expit

from openvocab_panoptic.config import LossConfig
from openvocab_panoptic.core_model import Category, PanopticMap, VocabularyEmbedding
from openvocab_panoptic.errors import RangeError, ShapeError, VocabularyMismatchError
from openvocab_panoptic.log import get_logger

logger = get_logger(__name__)

OFFSET = 1 << 24
VOID = 0
MATCH_IOU = 0.5

AverageOver = Literal["populated", "vocabulary"]


# -------------------
# Assignment
# -------------------
@dataclass(frozen=True)
class Assignment:
    pairs: Tuple[Tuple[int, int], ...]
    total_cost: float

    @property
    def rows(self) -> np.ndarray:
        return np.array([r for r, _ in self.pairs], dtype=np.int64)

    @property
    def cols(self) -> np.ndarray:
        return np.array([c for _, c in self.pairs], dtype=np.int64)


def hungarian(cost: np.ndarray) -> Assignment:
    """Minimum-cost injective assignment of size min(n, m)."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ShapeError(f"cost must be a matrix, got shape {cost.shape}")
    if cost.size == 0:
        return Assignment((), 0.0)
    if not np.all(np.isfinite(cost)):
        raise RangeError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(cost)
    pairs = tuple((int(r), int(c)) for r, c in zip(rows, cols))
    return Assignment(pairs, float(cost[rows, cols].sum()))


def _segment_masks(gt: PanopticMap) -> np.ndarray:
    flat = gt.segment_ids.reshape(-1)
    return np.stack([flat == s.id for s in gt.segments]).astype(np.float64) if gt.segments \
        else np.zeros((0, flat.size))


def match_cost(
    pred_masks: np.ndarray,
    pred_probs: np.ndarray,
    gt: PanopticMap,
    cfg: LossConfig = LossConfig(),
) -> np.ndarray:
    """n_pred x n_gt cost: w_cls (1 - p(category)) + w_dice dice + w_mask mean BCE."""
    pred_masks = np.asarray(pred_masks, dtype=np.float64)
    pred_probs = np.asarray(pred_probs, dtype=np.float64)
    n = pred_masks.shape[0]
    if pred_masks.shape[1:] != gt.segment_ids.shape or pred_probs.shape[0] != n:
        raise ShapeError(f"masks {pred_masks.shape}, probs {pred_probs.shape}, gt {gt.segment_ids.shape}")
    x = pred_masks.reshape(n, -1)
    g = _segment_masks(gt)
    cats = np.array([s.category for s in gt.segments], dtype=np.int64)
    if n == 0 or g.shape[0] == 0:
        return np.zeros((n, g.shape[0]))

    cost_cls = 1.0 - pred_probs[:, cats]
    s = expit(x)
    numer = 2.0 * s @ g.T + 1.0
    denom = s.sum(axis=1)[:, None] + g.sum(axis=1)[None, :] + 1.0
    cost_dice = 1.0 - numer / denom
    cost_bce = (np.logaddexp(0.0, x).sum(axis=1)[:, None] - x @ g.T) / x.shape[1]
    return cfg.w_cls * cost_cls + cfg.w_dice * cost_dice + cfg.w_mask * cost_bce


# -------------------
# Panoptic quality
# -------------------
@dataclass
class CategoryStat:
    iou_sum: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __iadd__(self, other: "CategoryStat") -> "CategoryStat":
        self.iou_sum += other.iou_sum
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        return self


@dataclass
class PqStats:
    """Per-category accumulators; additive across images."""

    per_category: Dict[int, CategoryStat] = field(default_factory=lambda: defaultdict(CategoryStat))

    def __getitem__(self, category: int) -> CategoryStat:
        return self.per_category[category]

    def __iadd__(self, other: "PqStats") -> "PqStats":
        for c, stat in other.per_category.items():
            self.per_category[c] += stat
        return self


def pq_stats(pred: PanopticMap, gt: PanopticMap, n_cls: Optional[int] = None) -> PqStats:
    if pred.segment_ids.shape != gt.segment_ids.shape:
        raise ShapeError(f"prediction {pred.segment_ids.shape} vs ground truth {gt.segment_ids.shape}")
    if n_cls is not None:
        bad = [s.category for s in (*pred.segments, *gt.segments) if not 0 <= s.category < n_cls]
        if bad:
            raise VocabularyMismatchError([f"category index {c}" for c in sorted(set(bad))])

    gt_segs = {s.id: s for s in gt.segments}
    pred_segs = {s.id: s for s in pred.segments}
    gt_area = dict(zip(*np.unique(gt.segment_ids, return_counts=True)))
    pred_area = dict(zip(*np.unique(pred.segment_ids, return_counts=True)))
    joint = gt.segment_ids.astype(np.int64) * OFFSET + pred.segment_ids.astype(np.int64)
    labels, counts = np.unique(joint, return_counts=True)
    intersections = {(int(l // OFFSET), int(l % OFFSET)): int(c) for l, c in zip(labels, counts)}

    stats = PqStats()
    gt_matched, pred_matched = set(), set()
    for (gid, pid), inter in intersections.items():
        if gid == VOID or pid == VOID:
            continue
        if gt_segs[gid].category != pred_segs[pid].category:
            continue
        union = pred_area[pid] + gt_area[gid] - inter - intersections.get((VOID, pid), 0)
        iou = inter / union
        if iou > MATCH_IOU:
            stat = stats[gt_segs[gid].category]
            stat.tp += 1
            stat.iou_sum += iou
            gt_matched.add(gid)
            pred_matched.add(pid)

    for gid, seg in gt_segs.items():
        if gid not in gt_matched:
            stats[seg.category].fn += 1
    for pid, seg in pred_segs.items():
        if pid in pred_matched:
            continue
        # mostly on unlabeled ground truth: not counted
        if intersections.get((VOID, pid), 0) / pred_area[pid] > 0.5:
            continue
        stats[seg.category].fp += 1
    return stats


class CategoryPq(BaseModel):
    category: int
    name: str
    seen: bool
    thing: bool
    iou_sum: float
    tp: int
    fp: int
    fn: int
    pq: float
    sq: float
    rq: float

    @property
    def populated(self) -> bool:
        return self.tp + self.fp + self.fn > 0

    @property
    def weight(self) -> int:
        return self.tp + self.fn


class PqAggregate(BaseModel):
    pq: float = 0.0
    sq: float = 0.0
    rq: float = 0.0
    pq_weighted: float = 0.0
    sq_weighted: float = 0.0
    rq_weighted: float = 0.0
    n: int = 0
    weight: int = 0


class PqReport(BaseModel):
    per_category: List[CategoryPq]
    overall: PqAggregate
    seen: PqAggregate
    unseen: PqAggregate
    things: PqAggregate
    stuff: PqAggregate
    average_over: AverageOver = "populated"


def _category_pq(stat: CategoryStat) -> Tuple[float, float, float]:
    if stat.tp == 0:
        return 0.0, 0.0, 0.0
    sq = stat.iou_sum / stat.tp
    rq = stat.tp / (stat.tp + 0.5 * stat.fp + 0.5 * stat.fn)
    return sq * rq, sq, rq


def aggregate(rows: List[CategoryPq]) -> PqAggregate:
    if not rows:
        return PqAggregate()
    pq = np.array([r.pq for r in rows])
    sq = np.array([r.sq for r in rows])
    rq = np.array([r.rq for r in rows])
    w = np.array([r.weight for r in rows], dtype=np.float64)
    total = w.sum()

    def wmean(v: np.ndarray) -> float:
        return float((v * w).sum() / total) if total > 0 else 0.0

    return PqAggregate(
        pq=float(pq.mean()), sq=float(sq.mean()), rq=float(rq.mean()),
        pq_weighted=wmean(pq), sq_weighted=wmean(sq), rq_weighted=wmean(rq),
        n=len(rows), weight=int(total),
    )


def build_report(stats: PqStats, categories: Sequence[Category], average_over: AverageOver = "populated") -> PqReport:
    rows: List[CategoryPq] = []
    for c, cat in enumerate(categories):
        stat = stats.per_category.get(c, CategoryStat())
        pq, sq, rq = _category_pq(stat)
        rows.append(CategoryPq(
            category=c, name=cat.name, seen=cat.seen, thing=cat.thing,
            iou_sum=stat.iou_sum, tp=stat.tp, fp=stat.fp, fn=stat.fn, pq=pq, sq=sq, rq=rq,
        ))
    pool = [r for r in rows if r.populated] if average_over == "populated" else rows
    return PqReport(
        per_category=rows,
        overall=aggregate(pool),
        seen=aggregate([r for r in pool if r.seen]),
        unseen=aggregate([r for r in pool if not r.seen]),
        things=aggregate([r for r in pool if r.thing]),
        stuff=aggregate([r for r in pool if not r.thing]),
        average_over=average_over,
    )


def panoptic_quality(pred: PanopticMap, gt: PanopticMap, vocab: VocabularyEmbedding,
                     average_over: AverageOver = "populated") -> PqReport:
    return build_report(pq_stats(pred, gt, len(vocab)), vocab.categories, average_over)


class PqDelta(BaseModel):
    category: int
    name: str
    seen: bool
    pq_a: float
    pq_b: float
    delta: float


class PqDifference(BaseModel):
    seen: List[PqDelta]
    unseen: List[PqDelta]
    mean_delta_seen: float
    mean_delta_unseen: float


def pq_difference(a: PqReport, b: PqReport, top_k: int = 10) -> PqDifference:
    """Categories with the largest |pq_b - pq_a|, split by seen flag."""
    names_a = [r.name for r in a.per_category]
    names_b = [r.name for r in b.per_category]
    if names_a != names_b:
        raise VocabularyMismatchError(
            [f"{x}!={y}" for x, y in zip(names_a, names_b) if x != y] or ["vocabulary length"])
    deltas = [
        PqDelta(category=ra.category, name=ra.name, seen=ra.seen, pq_a=ra.pq, pq_b=rb.pq, delta=rb.pq - ra.pq)
        for ra, rb in zip(a.per_category, b.per_category)
        if ra.populated or rb.populated
    ]

    def top(seen: bool) -> List[PqDelta]:
        group = [d for d in deltas if d.seen == seen]
        return sorted(group, key=lambda d: (-abs(d.delta), d.category))[:top_k]

    def mean(seen: bool) -> float:
        group = [d.delta for d in deltas if d.seen == seen]
        return float(np.mean(group)) if group else 0.0

    return PqDifference(seen=top(True), unseen=top(False), mean_delta_seen=mean(True), mean_delta_unseen=mean(False))


# -------------------
# mIoU
# -------------------
class MiouReport(BaseModel):
    # None where the category is absent from both maps
    per_category: List[Optional[float]]
    miou: float


def miou(pred: np.ndarray, gt: np.ndarray, gt_void: np.ndarray, n_cls: int) -> MiouReport:
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    gt_void = np.asarray(gt_void, dtype=bool)
    if not (pred.shape == gt.shape == gt_void.shape):
        raise ShapeError(f"pred {pred.shape}, gt {gt.shape}, void {gt_void.shape}")
    valid = ~gt_void
    p, g = pred[valid], gt[valid]
    if p.size and (p.min() < 0 or p.max() >= n_cls or g.min() < 0 or g.max() >= n_cls):
        raise RangeError("category labels outside the vocabulary")
    conf = np.bincount(g * n_cls + p, minlength=n_cls * n_cls).reshape(n_cls, n_cls)
    inter = np.diag(conf).astype(np.float64)
    union = conf.sum(axis=0) + conf.sum(axis=1) - inter
    in_gt = conf.sum(axis=1) > 0
    per = [float(inter[c] / union[c]) if union[c] > 0 else None for c in range(n_cls)]
    mean = float(np.mean(inter[in_gt] / union[in_gt])) if in_gt.any() else 0.0
    return MiouReport(per_category=per, miou=mean)
