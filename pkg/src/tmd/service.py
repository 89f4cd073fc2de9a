"""HTTP front door.

Endpoints (JSON bodies unless noted):
    POST /v1/generate/library   {material_id, defect_id, seed?}
    POST /v1/generate/prompt    {text, seed?}
    POST /v1/generate/inpaint   multipart: image, mask?, instruction, seed?
    GET  /v1/artifacts/{id}     -> png (request id or content digest)
    GET  /v1/library            -> defect library JSON
    GET  /v1/metrics            -> latency/token/cost summary
    POST /v1/sus/score          {responses: [...]} -> aggregate report
    GET  /healthz

Errors use one envelope: {"error": {"stage", "code", "message"}}; malformed
JSON is a 400 naming the parse position, validation problems are 422,
backend failures 502, timeouts 504.  Generation endpoints share one global
concurrency gate (config.max_concurrency).
"""

from __future__ import annotations

import asyncio
import socket
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, File, Form, Query, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel
from starlette.concurrency import run_in_threadpool

from .config import AppConfig, build_registry
from .errors import TmdError
from .metering import MeterStore, RateCard, estimate_cost, latency_report, token_report
from .model import (
    CreativePrompt,
    DefectLibrary,
    ImageInpaint,
    LibrarySelect,
    default_library,
    load_library,
)
from .pipeline import ArtifactNotFound, ArtifactStore, Pipeline, StageFailure
from .processor import CorruptFile, StandardizationTarget, decode_png
from .sus import InvalidScore, SUSResponse, aggregate_sus
from .tuner import OfflineTemplateTuner, RemoteChatTuner

__all__ = ["create_app", "build_pipeline", "serve", "AddressInUse"]


class AddressInUse(TmdError):
    code = "AddressInUse"


def _error_response(status: int, stage: str, code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"error": {"stage": stage, "code": code, "message": message}},
    )


class LibraryBody(BaseModel):
    material_id: str
    defect_id: str
    seed: Optional[int] = None
    request_id: str = ""


class PromptBody(BaseModel):
    text: str
    seed: Optional[int] = None
    request_id: str = ""


class SusResponseBody(BaseModel):
    item_scores: list[int]
    scenario: int
    platform: str
    expertise: str


class SusScoreBody(BaseModel):
    responses: list[SusResponseBody]
    by: list[str] = ["scenario"]


def build_pipeline(config: AppConfig) -> Pipeline:
    """Assemble the pipeline and its stores from a config."""
    library = load_library(config.library_path) if config.library_path else default_library()
    if config.tuner_mode == "remote":
        import os

        token = os.environ.get(config.tuner_auth_env, "") if config.tuner_auth_env else ""
        tuner = RemoteChatTuner(
            base_url=config.tuner_url,
            model=config.tuner_model,
            auth_token=token or None,
        )
    else:
        tuner = OfflineTemplateTuner(library)
    rate_card = (
        RateCard.load(config.rate_card_path) if config.rate_card_path else RateCard.default()
    )
    return Pipeline(
        library=library,
        tuner=tuner,
        registry=build_registry(config),
        rate_card=rate_card,
        artifacts=ArtifactStore(config.artifact_dir),
        meters=MeterStore(config.meter_path),
        target=StandardizationTarget(size=config.target_size),
        default_seed=config.default_seed,
        seed_policy=config.seed_policy,
    )


def _binarize_mask(raster: np.ndarray) -> np.ndarray:
    # Accept grayscale-or-RGBA client masks; anything >= 128 counts as painted.
    channel = raster[:, :, 0] if raster.ndim == 3 else raster
    return (channel >= 128).astype(np.uint8)


def create_app(config: Optional[AppConfig] = None, pipeline: Optional[Pipeline] = None) -> FastAPI:
    config = config or AppConfig()
    pipeline = pipeline or build_pipeline(config)
    app = FastAPI(title="tmd", docs_url=None, redoc_url=None)
    gate = asyncio.Semaphore(config.max_concurrency)

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        errors = exc.errors()
        for err in errors:
            if err.get("type") == "json_invalid":
                position = ".".join(str(p) for p in err.get("loc", ())[1:]) or "0"
                detail = err.get("ctx", {}).get("error", "invalid JSON")
                return _error_response(
                    400, "validate", "MalformedJson", f"{detail} (at byte offset {position})"
                )
        first = errors[0] if errors else {}
        loc = ".".join(str(p) for p in first.get("loc", ()))
        return _error_response(
            422, "validate", "SchemaViolation", f"{loc}: {first.get('msg', 'invalid request')}"
        )

    @app.exception_handler(StageFailure)
    async def on_stage_failure(request: Request, exc: StageFailure):
        return JSONResponse(status_code=exc.http_status, content={"error": exc.to_dict()})

    @app.exception_handler(TmdError)
    async def on_tmd_error(request: Request, exc: TmdError):
        return _error_response(500, "internal", exc.code, exc.message)

    async def _run(request):
        async with gate:
            return await run_in_threadpool(pipeline.run, request)

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok"}

    @app.post("/v1/generate/library")
    async def generate_library(body: LibraryBody, inline: bool = Query(False)):
        req = LibrarySelect(
            request_id=body.request_id,
            material_id=body.material_id,
            defect_id=body.defect_id,
            seed=body.seed,
        )
        result = await _run(req)
        return result.to_response_dict(inline=inline)

    @app.post("/v1/generate/prompt")
    async def generate_prompt(body: PromptBody, inline: bool = Query(False)):
        req = CreativePrompt(request_id=body.request_id, text=body.text, seed=body.seed)
        result = await _run(req)
        return result.to_response_dict(inline=inline)

    @app.post("/v1/generate/inpaint")
    async def generate_inpaint(
        image: UploadFile = File(...),
        mask: Optional[UploadFile] = File(None),
        instruction: str = Form(...),
        seed: Optional[int] = Form(None),
        request_id: str = Form(""),
        inline: bool = Query(False),
    ):
        try:
            image_px, _ = decode_png(await image.read())
            mask_arr = None
            if mask is not None:
                mask_px, _ = decode_png(await mask.read())
                mask_arr = _binarize_mask(mask_px)
        except CorruptFile as exc:
            raise StageFailure("validate", exc.code, exc.message, 422) from exc
        req = ImageInpaint(
            request_id=request_id,
            image=image_px,
            instruction=instruction,
            mask=mask_arr,
            seed=seed,
        )
        result = await _run(req)
        return result.to_response_dict(inline=inline)

    @app.get("/v1/artifacts/{artifact_id}")
    async def get_artifact(artifact_id: str):
        try:
            data = pipeline.artifacts.open_bytes(artifact_id)
        except ArtifactNotFound as exc:
            return _error_response(404, "artifacts", exc.code, exc.message)
        return Response(content=data, media_type="image/png")

    @app.get("/v1/library")
    async def get_library():
        return pipeline.library.to_dict()

    @app.get("/v1/metrics")
    async def get_metrics():
        records = pipeline.meters.snapshot()
        latency = {k: v.to_dict() for k, v in latency_report(records).items()}
        tokens = {k: v.to_dict() for k, v in token_report(records).items()}
        priced = [r for r in records if r.backend_id in pipeline.rate_card.rates]
        by_scenario: dict[str, list] = {}
        for rec in priced:
            by_scenario.setdefault(rec.scenario, []).append(rec)
        cost = {
            name: estimate_cost(recs, pipeline.rate_card).to_dict()
            for name, recs in sorted(by_scenario.items())
        }
        cost["total"] = estimate_cost(priced, pipeline.rate_card).to_dict()
        return {
            "n_records": len(records),
            "latency": latency,
            "tokens": tokens,
            "cost": cost,
            "unpriced_records": len(records) - len(priced),
        }

    @app.post("/v1/sus/score")
    async def sus_score(body: SusScoreBody):
        try:
            responses = [
                SUSResponse(
                    item_scores=tuple(r.item_scores),
                    scenario=r.scenario,
                    platform=r.platform,
                    expertise=r.expertise,
                )
                for r in body.responses
            ]
            report = aggregate_sus(responses, by=tuple(body.by))
        except (InvalidScore, ValueError) as exc:
            message = exc.message if isinstance(exc, TmdError) else str(exc)
            raise StageFailure("validate", "InvalidScore", message, 422) from exc
        return report.to_dict()

    if config.studio_dir and Path(config.studio_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/studio", StaticFiles(directory=config.studio_dir, html=True), name="studio")

    app.state.pipeline = pipeline
    app.state.config = config
    return app


def serve(config: AppConfig) -> None:
    """Run the service until interrupted.

    Raises AddressInUse if the listen address is already bound.
    """
    import uvicorn

    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind((config.listen_host, config.listen_port))
    except OSError as exc:
        raise AddressInUse(
            f"cannot bind {config.listen_host}:{config.listen_port}: {exc}"
        ) from exc
    finally:
        probe.close()

    app = create_app(config)
    uvicorn.run(app, host=config.listen_host, port=config.listen_port, log_level="warning")
