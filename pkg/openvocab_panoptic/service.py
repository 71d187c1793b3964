# service.py
"""HTTP front end over the same runner calls as the CLI."""
from pathlib import Path
from typing import Any, Dict, List, Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field, ValidationError

from openvocab_panoptic import runner
from openvocab_panoptic.config import PanopticFiles, apply_overrides, load_manifest
from openvocab_panoptic.errors import MissingFileError, OvrError
from openvocab_panoptic.log import get_logger
from openvocab_panoptic.match_metrics import PqReport

logger = get_logger(__name__)

app = FastAPI(title="Open-vocabulary panoptic inference")


class RunRequest(BaseModel):
    manifest: Path
    overrides: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    output_dir: Optional[Path] = None
    jobs: int = Field(1, ge=1)


class ImageSummary(BaseModel):
    name: str
    segments: int


class RunResponse(BaseModel):
    images: List[ImageSummary]
    report: Optional[PqReport] = None
    written: List[str] = Field(default_factory=list)


class SweepRequest(BaseModel):
    manifest: Path
    gammas: List[float] = Field(default_factory=lambda: list(runner.DEFAULT_GAMMAS))
    overrides: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    jobs: int = Field(1, ge=1)


class EvalRequest(BaseModel):
    pred: PanopticFiles
    gt: PanopticFiles
    semantic: Optional[Path] = None
    vocabulary: Optional[Path] = None


# -------------------
# Error mapping
# -------------------
def _error(request: Request, status: int, msg: str) -> JSONResponse:
    logger.warning(f"[SERVICE ERROR] {request.url.path}: {msg}")
    return JSONResponse(status_code=status, content={"detail": {"error": msg}})


@app.exception_handler(OvrError)
async def ovr_error_handler(request: Request, exc: OvrError):
    return _error(request, 404 if isinstance(exc, MissingFileError) else 400, str(exc))


@app.exception_handler(FileNotFoundError)
async def missing_file_handler(request: Request, exc: FileNotFoundError):
    return _error(request, 404, f"file not found: {exc.filename or exc}")


@app.exception_handler(OSError)
async def os_error_handler(request: Request, exc: OSError):
    return _error(request, 400, f"{exc.strerror or exc}: {exc.filename}" if exc.filename else str(exc))


@app.exception_handler(ValidationError)
async def config_error_handler(request: Request, exc: ValidationError):
    return _error(request, 400, str(exc))


# -------------------
# API endpoints
# -------------------
@app.get("/health")
def health():
    return {"ok": True}


@app.post("/run", response_model=RunResponse)
def run(req: RunRequest):
    logger.info(f"[SERVICE] run manifest={req.manifest} overrides={req.overrides}")
    manifest = _overridden(req.manifest, req.overrides)
    result = runner.run_manifest(manifest, req.jobs)
    written = runner.write_predictions(result, req.output_dir) if req.output_dir is not None else []
    return RunResponse(
        images=[ImageSummary(name=r.name, segments=len(r.prediction.panoptic.segments)) for r in result.images],
        report=result.report,
        written=[str(p) for p in written],
    )


@app.post("/sweep-gamma")
def sweep_gamma(req: SweepRequest):
    logger.info(f"[SERVICE] sweep manifest={req.manifest} gammas={req.gammas}")
    table = runner.sweep_gamma(_overridden(req.manifest, req.overrides), req.gammas, req.jobs)
    return {"rows": table.to_dict(orient="records")}


@app.post("/eval", response_model=runner.EvalReport)
def evaluate(req: EvalRequest):
    logger.info(f"[SERVICE] eval pred={req.pred.raster} gt={req.gt.raster}")
    return runner.evaluate_files(req.pred, req.gt, req.semantic, req.vocabulary)


def _overridden(manifest_path: Path, overrides: Dict[str, Dict[str, Any]]):
    unknown = set(overrides) - {"coat", "ensemble", "fusion", "loss"}
    if unknown:
        raise HTTPException(status_code=400, detail={"error": f"unknown override sections: {sorted(unknown)}"})
    return apply_overrides(load_manifest(manifest_path), overrides)
