"""Manifest-level operations shared by the CLI and the HTTP service."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import pandas as pd
from pydantic import BaseModel

from openvocab_panoptic.config import (
    ImageEntry,
    PanopticFiles,
    RunManifest,
    SynthFile,
    VocabularyFiles,
    apply_overrides,
    dump_manifest,
)
from openvocab_panoptic.core_model import FeatureMap, PanopticMap, ProposalSet, VocabularyEmbedding
from openvocab_panoptic.errors import ManifestError, ShapeError, VocabularyMismatchError
from openvocab_panoptic.log import get_logger
from openvocab_panoptic.match_metrics import (
    MiouReport,
    PqReport,
    PqStats,
    build_report,
    miou,
    pq_stats,
)
from openvocab_panoptic.pipeline import ImagePrediction, infer_image
from openvocab_panoptic.synth import generate_scene, generate_vocabulary, oracle_masks
from openvocab_panoptic.tensor_io import (
    DType,
    read_categories,
    read_panoptic,
    read_tensor,
    read_vocabulary,
    write_panoptic,
    write_tensor,
    write_vocabulary,
)

logger = get_logger(__name__)

DEFAULT_GAMMAS = [round(0.1 * i, 1) for i in range(11)]
SWEEP_COLUMNS = ["gamma", "pq", "sq", "rq", "pq_seen", "pq_unseen"]
REPORT_FILE = "pq_report.json"


@dataclass(frozen=True)
class ImageResult:
    name: str
    prediction: ImagePrediction
    stats: Optional[PqStats]


@dataclass(frozen=True)
class RunResult:
    vocab: VocabularyEmbedding
    images: List[ImageResult]
    report: Optional[PqReport]


class EvalReport(BaseModel):
    panoptic: PqReport
    miou: Optional[MiouReport] = None


# -------------------
# Loading
# -------------------
def load_image_inputs(image: ImageEntry, vocab: VocabularyEmbedding) -> Tuple[FeatureMap, ProposalSet]:
    feats = read_tensor(image.features)
    masks = read_tensor(image.masks)
    logits = read_tensor(image.logits)
    if len(feats.dims) != 3 or feats.dims[2] != vocab.dim:
        raise ShapeError(f"{image.features}: dims {feats.dims}, expected H x W x {vocab.dim}")
    h, w = feats.dims[:2]
    if len(masks.dims) != 3 or masks.dims[1:] != (h, w):
        raise ShapeError(f"{image.masks}: dims {masks.dims}, expected N x {h} x {w}")
    if len(logits.dims) != 2 or logits.dims != (masks.dims[0], len(vocab) + 1):
        raise ShapeError(f"{image.logits}: dims {logits.dims}, expected {masks.dims[0]} x {len(vocab) + 1}")
    return FeatureMap(feats.values), ProposalSet(masks.values, logits.values)


def load_manifest_vocabulary(manifest: RunManifest) -> VocabularyEmbedding:
    return read_vocabulary(manifest.vocabulary.embeddings, manifest.vocabulary.metadata)


def _check_gt_vocabulary(path: Path, categories, vocab: VocabularyEmbedding) -> None:
    names = [c.name for c in categories]
    if names and names != vocab.names:
        diff = sorted(set(names) ^ set(vocab.names)) or ["category order"]
        raise VocabularyMismatchError([f"{path}: {d}" for d in diff])


# -------------------
# Run
# -------------------
def _run_image(manifest: RunManifest, vocab: VocabularyEmbedding, image: ImageEntry,
               proposal_source: str = "manifest") -> ImageResult:
    features, proposals = load_image_inputs(image, vocab)
    gt: Optional[PanopticMap] = None
    if image.gt is not None:
        gt, categories = read_panoptic(image.gt.raster, image.gt.sidecar)
        _check_gt_vocabulary(image.gt.sidecar, categories, vocab)
        if gt.segment_ids.shape != (features.height, features.width):
            raise ShapeError(f"{image.gt.raster}: {gt.segment_ids.shape} vs features {(features.height, features.width)}")
    if proposal_source == "oracle":
        if gt is None:
            raise ManifestError(f"{image.name}: oracle evaluation needs ground truth")
        proposals = oracle_masks(gt, len(vocab))
    prediction = infer_image(proposals, features, vocab, manifest.coat, manifest.ensemble, manifest.fusion)
    stats = pq_stats(prediction.panoptic, gt, len(vocab)) if gt is not None else None
    logger.info(f"[RUN] {image.name}: {proposals.count} proposals -> {len(prediction.panoptic.segments)} segments")
    return ImageResult(image.name, prediction, stats)


def run_manifest(manifest: RunManifest, jobs: int = 1, proposal_source: str = "manifest") -> RunResult:
    """Per-image inference in parallel; results and PQ stats reduced in manifest order."""
    vocab = load_manifest_vocabulary(manifest)
    worker = partial(_run_image, manifest, vocab, proposal_source=proposal_source)
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        images = list(pool.map(worker, manifest.images))
    report = None
    if images and all(r.stats is not None for r in images):
        total = PqStats()
        for r in images:
            total += r.stats
        report = build_report(total, vocab.categories)
    return RunResult(vocab, images, report)


def write_predictions(result: RunResult, output_dir: Path) -> List[Path]:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for r in result.images:
        raster, sidecar = output_dir / f"{r.name}.png", output_dir / f"{r.name}.json"
        semantic = output_dir / f"{r.name}_semantic.ovrt"
        write_panoptic(r.prediction.panoptic, result.vocab.categories, raster, sidecar)
        write_tensor(semantic, r.prediction.semantic.categories, DType.UINT32)
        written += [raster, sidecar, semantic]
    if result.report is not None:
        report_path = output_dir / REPORT_FILE
        report_path.write_text(result.report.model_dump_json(indent=2), encoding="utf-8")
        written.append(report_path)
    logger.info(f"[RUN] wrote {len(written)} files to {output_dir}")
    return written


def oracle_evaluate(manifest: RunManifest, jobs: int = 1) -> PqReport:
    """Replace every image's proposals with perfect gt masks and classify by CLIP alone.

    The mask head is out of the loop, so the ensemble weights are pinned to 1
    for seen and unseen categories whatever the manifest says.
    """
    if not manifest.has_gt:
        raise ManifestError("oracle evaluation needs ground truth for every image")
    clip_only = apply_overrides(manifest, {"ensemble": {"alpha_seen": 1.0, "beta_unseen": 1.0}})
    return run_manifest(clip_only, jobs, proposal_source="oracle").report


# -------------------
# Gamma sweep
# -------------------
def sweep_gamma(manifest: RunManifest, gammas: Sequence[float], jobs: int = 1) -> pd.DataFrame:
    if not manifest.has_gt:
        raise ManifestError("gamma sweep needs ground truth for every image")
    rows = []
    for gamma in gammas:
        run = run_manifest(apply_overrides(manifest, {"coat": {"gamma": gamma, "enabled": True}}), jobs)
        rep = run.report
        rows.append([gamma, rep.overall.pq, rep.overall.sq, rep.overall.rq, rep.seen.pq, rep.unseen.pq])
        logger.info(f"[SWEEP] gamma={gamma}: PQ={rep.overall.pq:.4f}")
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def sweep_to_csv(table: pd.DataFrame) -> str:
    return table.to_csv(index=False, float_format="%.6f", lineterminator="\n")


# -------------------
# Evaluation of files on disk
# -------------------
def evaluate_files(pred: PanopticFiles, gt: PanopticFiles, semantic: Optional[Path] = None,
                   vocabulary: Optional[Path] = None) -> EvalReport:
    pred_map, pred_cats = read_panoptic(pred.raster, pred.sidecar)
    gt_map, gt_cats = read_panoptic(gt.raster, gt.sidecar)
    categories = read_categories(vocabulary) if vocabulary is not None else gt_cats
    for source, cats in ((pred.sidecar, pred_cats), (gt.sidecar, gt_cats)):
        names = [c.name for c in cats]
        ref = [c.name for c in categories]
        if names != ref:
            diff = [f"{a}!={b}" for a, b in zip(names, ref) if a != b] or [f"{len(names)} vs {len(ref)} names"]
            raise VocabularyMismatchError([f"{source}: {d}" for d in diff])
    report = build_report(pq_stats(pred_map, gt_map, len(categories)), categories)
    semantic_report = None
    if semantic is not None:
        sem = read_tensor(semantic)
        if sem.dims != gt_map.segment_ids.shape:
            raise ShapeError(f"{semantic}: dims {sem.dims} vs ground truth {gt_map.segment_ids.shape}")
        semantic_report = miou(sem.values, gt_map.semantic(), gt_map.segment_ids == 0, len(categories))
    logger.info(f"[EVAL] {pred.raster}: PQ={report.overall.pq:.4f}")
    return EvalReport(panoptic=report, miou=semantic_report)


# -------------------
# Fixtures
# -------------------
def synthesize_fixture(spec: SynthFile, output_dir: Path) -> Path:
    """Write n_images scenes sharing one vocabulary plus a manifest; returns the manifest path."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    vocab = generate_vocabulary(spec)
    write_vocabulary(vocab, output_dir / "vocab.ovrt", output_dir / "vocab.json")
    images = []
    for i in range(spec.n_images):
        name = f"scene_{i:03d}"
        scene = generate_scene(spec.model_copy(update={"scene_index": spec.scene_index + i}), vocab)
        write_tensor(output_dir / f"{name}_features.ovrt", scene.features.values, DType.FLOAT64)
        write_tensor(output_dir / f"{name}_masks.ovrt", scene.proposals.masks, DType.FLOAT64)
        write_tensor(output_dir / f"{name}_logits.ovrt", scene.proposals.train_logits, DType.FLOAT64)
        write_panoptic(scene.gt, vocab.categories, output_dir / f"{name}_gt.png", output_dir / f"{name}_gt.json")
        images.append(ImageEntry(
            name=name,
            features=Path(f"{name}_features.ovrt"),
            masks=Path(f"{name}_masks.ovrt"),
            logits=Path(f"{name}_logits.ovrt"),
            gt=PanopticFiles(raster=Path(f"{name}_gt.png"), sidecar=Path(f"{name}_gt.json")),
        ))
    manifest = RunManifest(
        vocabulary=VocabularyFiles(embeddings=Path("vocab.ovrt"), metadata=Path("vocab.json")),
        images=images,
    )
    path = output_dir / "manifest.yaml"
    dump_manifest(manifest, path)
    logger.info(f"[SYNTH] {spec.n_images} scenes written to {output_dir}")
    return path
