"""Run configuration: per-stage configs, synthetic scene specs and the run manifest.

All models are frozen pydantic models. Files are YAML; relative paths inside a
manifest resolve against the manifest's own directory.
"""
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, PositiveInt

from openvocab_panoptic.errors import ManifestError, MissingFileError
from openvocab_panoptic.log import get_logger

logger = get_logger(__name__)

# -------------------
# Stage configs
# -------------------
class CoatConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    gamma: float = Field(0.5, ge=0.0, le=1.0)
    enabled: bool = True


class EnsembleConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha_seen: float = Field(0.4, ge=0.0, le=1.0)
    beta_unseen: float = Field(0.8, ge=0.0, le=1.0)
    logit_scale: float = Field(100.0, gt=0.0)


class FusionConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    # upper bound 1.1 lets callers force an all-void panoptic output
    score_threshold: float = Field(0.8, ge=0.0, le=1.1)
    overlap_keep_ratio: float = Field(0.8, ge=0.0, le=1.0)
    binarize_threshold: float = Field(0.5, ge=0.0, le=1.0)
    merge_stuff: bool = True


class LossConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha_cls: float = Field(0.1, ge=0.0)
    w_cls: float = Field(2.0, ge=0.0)
    w_mask: float = Field(5.0, ge=0.0)
    w_dice: float = Field(5.0, ge=0.0)
    void_weight: float = Field(0.1, ge=0.0)
    point_sample_count: Union[PositiveInt, Literal["dense"]] = "dense"
    point_sample_seed: int = 0


# -------------------
# Synthetic scenes
# -------------------
class SceneSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    height: int = Field(64, ge=1)
    width: int = Field(64, ge=1)
    n_segments: int = Field(6, ge=0)
    vocab_size: int = Field(10, ge=1)
    seen_fraction: float = Field(0.5, ge=0.0, le=1.0)
    feature_noise: float = Field(0.0, ge=0.0)
    objectness_bias: Dict[Literal["seen", "unseen"], float] = Field(
        default_factory=lambda: {"seen": 0.0, "unseen": 0.0}
    )
    seed: int = Field(0, ge=0, lt=2**64)
    scene_index: int = Field(0, ge=0)
    embedding_dim: int = Field(16, ge=1)
    # correct-category boost on the in-vocabulary logits
    class_signal: float = 8.0
    # void logit relative to the correct-category logit, before bias
    void_logit_offset: float = -4.6
    logit_noise: float = Field(0.0, ge=0.0)
    mask_logit: float = Field(10.0, gt=0.0)
    mask_noise: float = Field(0.0, ge=0.0)
    layout: Literal["rectangles", "voronoi"] = "rectangles"

    def bias_for(self, seen: bool) -> float:
        return float(self.objectness_bias.get("seen" if seen else "unseen", 0.0))


class SynthFile(SceneSpec):
    n_images: int = Field(1, ge=1)


# -------------------
# Manifest
# -------------------
class PanopticFiles(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    raster: Path
    sidecar: Path


class VocabularyFiles(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    embeddings: Path
    metadata: Path


class ImageEntry(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    features: Path
    masks: Path
    logits: Path
    gt: Optional[PanopticFiles] = None


class RunManifest(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    vocabulary: VocabularyFiles
    images: List[ImageEntry]
    coat: CoatConfig = CoatConfig()
    ensemble: EnsembleConfig = EnsembleConfig()
    fusion: FusionConfig = FusionConfig()
    loss: LossConfig = LossConfig()

    @property
    def has_gt(self) -> bool:
        return bool(self.images) and all(img.gt is not None for img in self.images)

    def all_paths(self) -> List[Path]:
        paths = [self.vocabulary.embeddings, self.vocabulary.metadata]
        for img in self.images:
            paths += [img.features, img.masks, img.logits]
            if img.gt is not None:
                paths += [img.gt.raster, img.gt.sidecar]
        return paths


def _resolve(base: Path, p: Path) -> Path:
    return p if p.is_absolute() else (base / p)


def resolve_manifest(manifest: RunManifest, base_dir: Path) -> RunManifest:
    vocab = VocabularyFiles(
        embeddings=_resolve(base_dir, manifest.vocabulary.embeddings),
        metadata=_resolve(base_dir, manifest.vocabulary.metadata),
    )
    images = []
    for img in manifest.images:
        gt = None
        if img.gt is not None:
            gt = PanopticFiles(raster=_resolve(base_dir, img.gt.raster), sidecar=_resolve(base_dir, img.gt.sidecar))
        images.append(img.model_copy(update={
            "features": _resolve(base_dir, img.features),
            "masks": _resolve(base_dir, img.masks),
            "logits": _resolve(base_dir, img.logits),
            "gt": gt,
        }))
    return manifest.model_copy(update={"vocabulary": vocab, "images": images})


def load_yaml(path: Path) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(path)
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ManifestError(f"{path}: expected a mapping at top level")
    return data


def load_manifest(path: Path) -> RunManifest:
    """Parse, resolve and existence-check a run manifest."""
    path = Path(path)
    manifest = resolve_manifest(RunManifest.model_validate(load_yaml(path)), path.parent)
    for p in manifest.all_paths():
        if not p.exists():
            raise MissingFileError(p)
    logger.info(f"[MANIFEST] {path}: {len(manifest.images)} images, gt={manifest.has_gt}")
    return manifest


def dump_manifest(manifest: RunManifest, path: Path) -> None:
    data = manifest.model_dump(mode="json")
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(data, fh, sort_keys=False)


def apply_overrides(manifest: RunManifest, overrides: Dict[str, Dict[str, Any]]) -> RunManifest:
    """Overlay {section: {field: value}} onto the manifest configs, revalidating each section."""
    update = {}
    for section, values in overrides.items():
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            continue
        current = getattr(manifest, section)
        update[section] = type(current).model_validate({**current.model_dump(), **values})
    return manifest.model_copy(update=update) if update else manifest
