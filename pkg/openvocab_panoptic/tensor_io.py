"""On-disk formats: the OVRT tensor container and COCO-style panoptic files.

OVRT layout (little-endian throughout):

    offset 0   magic    4 bytes  b"OVRT"
    offset 4   version  u16      1
    offset 6   rank     u8       1..4
    offset 7   dims     rank x u32
    then       dtype    u8       0 = float32, 1 = float64, 2 = uint32
    then       payload  prod(dims) values, row-major

Panoptic files are an 8-bit RGB PNG with id = R + 256*G + 65536*B and a JSON
sidecar {"segments": [{"id", "category", "thing"}], "vocabulary": [{"name", "seen", "thing"}]}.
"""
import json
import math
import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from openvocab_panoptic.core_model import (
    Category,
    PanopticMap,
    SegmentRecord,
    VocabularyEmbedding,
    normalize_rows,
)
from openvocab_panoptic.errors import (
    BadMagicError,
    DuplicateSegmentError,
    OrphanSegmentError,
    PanopticFormatError,
    RangeError,
    RankError,
    ShapeError,
    TruncatedError,
    UnknownDtypeError,
    VersionError,
)
from openvocab_panoptic.log import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]

MAGIC = b"OVRT"
VERSION = 1
MAX_RANK = 4
MAX_SEGMENT_ID = 1 << 24


class DType(IntEnum):
    FLOAT32 = 0
    FLOAT64 = 1
    UINT32 = 2


_WIRE = {DType.FLOAT32: np.dtype("<f4"), DType.FLOAT64: np.dtype("<f8"), DType.UINT32: np.dtype("<u4")}


@dataclass(frozen=True)
class Tensor:
    """Decoded tensor; float payloads are widened to float64."""

    dims: Tuple[int, ...]
    dtype: DType
    values: np.ndarray


# -------------------
# OVRT container
# -------------------
def write_tensor(path: PathLike, values: np.ndarray, dtype: DType = DType.FLOAT32) -> None:
    dtype = DType(dtype)
    values = np.asarray(values)
    if not 1 <= values.ndim <= MAX_RANK:
        raise RankError(f"rank {values.ndim} outside [1, {MAX_RANK}]", 6)
    if dtype == DType.UINT32:
        if values.size and (values.min() < 0 or values.max() >= 2**32):
            raise RangeError("uint32 tensor values out of range")
    elif not np.all(np.isfinite(values)):
        raise RangeError("tensor values must be finite")
    header = MAGIC + struct.pack("<HB", VERSION, values.ndim)
    header += struct.pack(f"<{values.ndim}I", *values.shape) + struct.pack("<B", int(dtype))
    payload = np.ascontiguousarray(values, dtype=_WIRE[dtype]).tobytes()
    with open(path, "wb") as fh:
        fh.write(header + payload)
    logger.debug(f"[TENSOR WRITE] {path}: dims={values.shape} dtype={dtype.name}")


def decode_tensor(buf: bytes) -> Tensor:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError("bad magic, expected b'OVRT'", 0)
    if len(buf) < 7:
        raise TruncatedError("header truncated", len(buf))
    version, rank = struct.unpack_from("<HB", buf, 4)
    if version != VERSION:
        raise VersionError(f"unsupported version {version}", 4)
    if not 1 <= rank <= MAX_RANK:
        raise RankError(f"rank {rank} outside [1, {MAX_RANK}]", 6)
    dtype_at = 7 + 4 * rank
    if len(buf) < dtype_at + 1:
        raise TruncatedError("header truncated", len(buf))
    dims = struct.unpack_from(f"<{rank}I", buf, 7)
    tag = buf[dtype_at]
    try:
        dtype = DType(tag)
    except ValueError:
        raise UnknownDtypeError(f"unknown dtype tag {tag}", dtype_at) from None
    start = dtype_at + 1
    # python ints: a crafted header must not wrap around
    expected = math.prod(dims) * _WIRE[dtype].itemsize
    actual = len(buf) - start
    if actual < expected:
        raise TruncatedError(f"payload has {actual} bytes, header needs {expected}", len(buf))
    if actual > expected:
        raise TruncatedError(f"{actual - expected} trailing bytes after payload", start + expected)
    wide = np.float64 if dtype != DType.UINT32 else np.uint32
    if expected == 0:
        return Tensor(tuple(int(d) for d in dims), dtype, np.zeros(dims, dtype=wide))
    raw = np.frombuffer(buf, dtype=_WIRE[dtype], count=expected // _WIRE[dtype].itemsize, offset=start)
    return Tensor(tuple(int(d) for d in dims), dtype, raw.astype(wide).reshape(dims))


def read_tensor(path: PathLike) -> Tensor:
    with open(path, "rb") as fh:
        buf = fh.read()
    t = decode_tensor(buf)
    logger.debug(f"[TENSOR LOAD] {path}: dims={t.dims} dtype={t.dtype.name}")
    return t


# -------------------
# Segment id packing
# -------------------
def encode_segment_id(segment_id: int) -> Tuple[int, int, int]:
    segment_id = int(segment_id)
    if not 0 <= segment_id < MAX_SEGMENT_ID:
        raise RangeError(f"segment id {segment_id} outside [0, 2^24)")
    return segment_id & 0xFF, (segment_id >> 8) & 0xFF, (segment_id >> 16) & 0xFF


def decode_segment_id(rgb: Sequence[int]) -> int:
    r, g, b = (int(c) for c in rgb)
    return r + 256 * g + 65536 * b


def ids_to_rgb(ids: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= MAX_SEGMENT_ID):
        raise RangeError("segment ids outside [0, 2^24)")
    rgb = np.stack([ids & 0xFF, (ids >> 8) & 0xFF, (ids >> 16) & 0xFF], axis=-1)
    return rgb.astype(np.uint8)


def rgb_to_ids(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.int64)
    return rgb[..., 0] + 256 * rgb[..., 1] + 65536 * rgb[..., 2]


# -------------------
# Panoptic files
# -------------------
def _category_json(c: Category) -> Dict[str, Any]:
    return {"name": c.name, "seen": c.seen, "thing": c.thing}


def write_panoptic(pmap: PanopticMap, categories: Sequence[Category], raster_path: PathLike, sidecar_path: PathLike) -> None:
    Image.fromarray(ids_to_rgb(pmap.segment_ids)).save(raster_path, format="PNG")
    sidecar = {
        "segments": [{"id": s.id, "category": s.category, "thing": s.thing} for s in pmap.segments],
        "vocabulary": [_category_json(c) for c in categories],
    }
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)
    logger.debug(f"[PANOPTIC WRITE] {raster_path}: {len(pmap.segments)} segments")


def _load_json(path: PathLike) -> Dict[str, Any]:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        data = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise PanopticFormatError(f"{path}: not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise PanopticFormatError(f"{path}: expected a JSON object at top level")
    return data


def _parse_categories(path: PathLike, entries: Any) -> List[Category]:
    try:
        return [Category(**c) for c in entries]
    except (TypeError, ValueError) as e:
        raise PanopticFormatError(f"{path}: malformed vocabulary entry: {e}") from e


def read_panoptic(raster_path: PathLike, sidecar_path: PathLike) -> Tuple[PanopticMap, List[Category]]:
    try:
        with Image.open(raster_path) as img:
            if img.mode != "RGB":
                raise PanopticFormatError(f"{raster_path}: expected an RGB PNG, got mode {img.mode}")
            ids = rgb_to_ids(np.asarray(img))
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, OSError) as e:
        raise PanopticFormatError(f"{raster_path}: not a readable image: {e}") from e
    sidecar = _load_json(sidecar_path)
    try:
        segments = [SegmentRecord(id=int(s["id"]), category=int(s["category"]), thing=bool(s["thing"]))
                    for s in sidecar.get("segments", [])]
    except (KeyError, TypeError, ValueError) as e:
        raise PanopticFormatError(f"{sidecar_path}: malformed sidecar: {e}") from e
    categories = _parse_categories(sidecar_path, sidecar.get("vocabulary", []))

    listed = [s.id for s in segments]
    dupes = {sid for sid in listed if listed.count(sid) > 1}
    if dupes:
        raise DuplicateSegmentError(dupes)
    present = set(np.unique(ids).tolist()) - {0}
    orphans = present - set(listed)
    if orphans:
        raise OrphanSegmentError(orphans)
    empty = sorted(set(listed) - present)
    if empty:
        raise PanopticFormatError(f"{sidecar_path}: segments without pixels: {empty}")
    logger.debug(f"[PANOPTIC LOAD] {raster_path}: {ids.shape}, {len(segments)} segments")
    return PanopticMap(ids, tuple(segments)), categories


# -------------------
# Vocabulary files
# -------------------
def write_vocabulary(vocab: VocabularyEmbedding, embeddings_path: PathLike, metadata_path: PathLike,
                     dtype: DType = DType.FLOAT64) -> None:
    write_tensor(embeddings_path, vocab.embeddings, dtype)
    with open(metadata_path, "w", encoding="utf-8") as fh:
        json.dump({"vocabulary": [_category_json(c) for c in vocab.categories]}, fh, indent=2)


def read_categories(metadata_path: PathLike) -> List[Category]:
    meta = _load_json(metadata_path)
    if "vocabulary" not in meta:
        raise PanopticFormatError(f"{metadata_path}: no 'vocabulary' list")
    return _parse_categories(metadata_path, meta["vocabulary"])


def read_vocabulary(embeddings_path: PathLike, metadata_path: PathLike) -> VocabularyEmbedding:
    """Load embeddings and metadata; rows are normalized to unit length here."""
    t = read_tensor(embeddings_path)
    if len(t.dims) != 2:
        raise ShapeError(f"{embeddings_path}: embeddings must be rank 2, got dims {t.dims}")
    categories = read_categories(metadata_path)
    if len(categories) != t.dims[0]:
        raise ShapeError(f"{metadata_path}: {len(categories)} categories but {embeddings_path} has {t.dims[0]} rows")
    return VocabularyEmbedding(tuple(categories), normalize_rows(t.values))
