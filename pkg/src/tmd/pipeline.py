"""Request orchestration: validate -> tune -> route -> generate ->
standardize -> meter -> persist.

Every stage is timed; failures are wrapped into StageFailure carrying the
stage name, a stable error code, and an HTTP status (422 validation, 502
backend, 504 timeout).  Artifacts are persisted content-addressed (sha256
of the PNG bytes) with an append-only request index beside them.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .errors import TmdError
from .gateway import BackendRegistry, GenRequest, generate, route
from .metering import CostBreakdown, MeterRecord, MeterStore, RateCard, estimate_cost
from .model import (
    DefectLibrary,
    ImageInpaint,
    Provenance,
    ScenarioRequest,
    TextureArtifact,
    scenario_kind,
    validate_request,
)
from .processor import StandardizationTarget, encode_artifact, standardize_pixels
from .tuner import TunedPrompt, TunerBackend, tune_prompt

__all__ = [
    "StageFailure",
    "DuplicateRequestId",
    "ArtifactNotFound",
    "new_request_id",
    "ArtifactStore",
    "GenerateResult",
    "Pipeline",
]

STAGES = ("validate", "tune", "route", "generate", "standardize", "persist")

# Codes that indicate a bad request rather than a broken service.
_CLIENT_ERROR_CODES = frozenset(
    {
        "EmptyPrompt",
        "MissingImage",
        "MaskMismatch",
        "UnknownMaterial",
        "UnknownDefect",
        "NoDefectFound",
        "UntunablePrompt",
        "DuplicateRequestId",
        "InvalidScore",
        "EmptyImage",
        "CorruptFile",
    }
)


def _status_for(code: str) -> int:
    if code == "Timeout":
        return 504
    if code in ("BackendUnavailable", "NoBackendForKind"):
        return 502
    if code in _CLIENT_ERROR_CODES:
        return 422
    return 500


class StageFailure(TmdError):
    """A pipeline stage failed; carries {stage, code, message} for the wire."""

    def __init__(self, stage: str, code: str, message: str, http_status: int):
        super().__init__(message)
        self.stage = stage
        self.code = code
        self.http_status = http_status

    def to_dict(self) -> dict:
        return {"stage": self.stage, "code": self.code, "message": self.message}


class DuplicateRequestId(TmdError):
    code = "DuplicateRequestId"


class ArtifactNotFound(TmdError):
    code = "ArtifactNotFound"


_CROCKFORD = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"
_ulid_lock = threading.Lock()
_ulid_last = [0]


def new_request_id() -> str:
    """Time-ordered unique id: 48-bit ms timestamp + 80 random bits,
    Crockford base32, 26 chars, monotonic within this process."""
    with _ulid_lock:
        value = (int(time.time() * 1000) & (1 << 48) - 1) << 80
        value |= int.from_bytes(os.urandom(10), "big")
        if value <= _ulid_last[0]:
            value = _ulid_last[0] + 1
        _ulid_last[0] = value
    chars = []
    for _ in range(26):
        chars.append(_CROCKFORD[value & 0x1F])
        value >>= 5
    return "".join(reversed(chars))


class ArtifactStore:
    """Content-addressed PNG files plus an append-only request index.

    Files are named ``<sha256>.png``; the index maps request ids to digests
    so artifacts resolve by either name.  Request-id collisions (including
    with ids only reserved by in-flight requests) are rejected.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._index_path = self.root / "index.jsonl"
        self._lock = threading.Lock()
        self._by_request: dict[str, str] = {}
        self._reserved: set[str] = set()
        if self._index_path.exists():
            for line in self._index_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    entry = json.loads(line)
                    self._by_request[entry["request_id"]] = entry["digest"]

    def reserve(self, request_id: str) -> None:
        with self._lock:
            if request_id in self._by_request or request_id in self._reserved:
                raise DuplicateRequestId(f"request_id already used: {request_id}")
            self._reserved.add(request_id)

    def release(self, request_id: str) -> None:
        with self._lock:
            self._reserved.discard(request_id)

    def put(self, request_id: str, png_bytes: bytes, scenario: str) -> str:
        """Persist the bytes; returns the content digest."""
        digest = hashlib.sha256(png_bytes).hexdigest()
        path = self.root / f"{digest}.png"
        with self._lock:
            if not path.exists():
                tmp = path.with_suffix(".tmp")
                tmp.write_bytes(png_bytes)
                tmp.replace(path)
            entry = {"request_id": request_id, "digest": digest, "scenario": scenario}
            with open(self._index_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
            self._by_request[request_id] = digest
            self._reserved.discard(request_id)
        return digest

    def digest_for(self, request_id: str) -> Optional[str]:
        with self._lock:
            return self._by_request.get(request_id)

    def open_bytes(self, id_or_digest: str) -> bytes:
        """Resolve by request id first, then as a raw digest.

        Raises ArtifactNotFound for unknown ids.
        """
        digest = self.digest_for(id_or_digest) or id_or_digest
        path = self.root / f"{digest}.png"
        if "/" in id_or_digest or "\\" in id_or_digest or not path.is_file():
            raise ArtifactNotFound(f"no artifact for {id_or_digest!r}")
        return path.read_bytes()


@dataclass(frozen=True, eq=False)
class GenerateResult:
    """Everything a caller gets back from one pipeline run."""

    request_id: str
    artifact: TextureArtifact
    artifact_bytes: bytes
    artifact_digest: str
    tuned: TunedPrompt
    meter: MeterRecord
    cost: CostBreakdown

    def to_response_dict(self, inline: bool = False) -> dict:
        body = {
            "request_id": self.request_id,
            "artifact_url": f"/v1/artifacts/{self.artifact_digest}",
            "artifact_digest": self.artifact_digest,
            "original_prompt": self.tuned.original,
            "tuned_prompt": self.tuned.refined_text,
            "meter": self.meter.to_dict(),
            "cost": self.cost.to_dict(),
        }
        if inline:
            import base64

            body["artifact_b64"] = base64.b64encode(self.artifact_bytes).decode("ascii")
        return body


class Pipeline:
    """Owns the fixed stage order and all persistence side effects."""

    def __init__(
        self,
        library: DefectLibrary,
        tuner: TunerBackend,
        registry: BackendRegistry,
        rate_card: RateCard,
        artifacts: ArtifactStore,
        meters: MeterStore,
        target: StandardizationTarget = StandardizationTarget(),
        default_seed: int = 0,
        seed_policy: str = "fixed",
    ):
        self.library = library
        self.tuner = tuner
        self.registry = registry
        self.rate_card = rate_card
        self.artifacts = artifacts
        self.meters = meters
        self.target = target
        self.default_seed = default_seed
        self.seed_policy = seed_policy

    def _resolve_seed(self, seed: Optional[int]) -> int:
        if seed is not None:
            return seed
        if self.seed_policy == "random":
            return int.from_bytes(os.urandom(4), "big")
        return self.default_seed

    def run(self, request: ScenarioRequest) -> GenerateResult:
        """Execute the full pipeline for one request.

        Raises StageFailure for any stage error; the artifact and meter
        record are persisted only on success.
        """
        t_start = time.perf_counter()
        spans: dict[str, tuple[float, float]] = {}

        @contextmanager
        def stage(name: str):
            begin = (time.perf_counter() - t_start) * 1000.0
            try:
                yield
            except StageFailure:
                raise
            except TmdError as exc:
                raise StageFailure(name, exc.code, exc.message, _status_for(exc.code)) from exc
            except Exception as exc:
                raise StageFailure(name, "Internal", str(exc), 500) from exc
            spans[name] = (round(begin, 3), round((time.perf_counter() - t_start) * 1000.0, 3))

        request_id = request.request_id or new_request_id()
        try:
            with stage("validate"):
                validate_request(request)
                kind = scenario_kind(request)
                self.artifacts.reserve(request_id)

            with stage("tune"):
                tuned = tune_prompt(request, self.library, self.tuner)

            with stage("route"):
                backend_kind = route(kind)

            with stage("generate"):
                seed = self._resolve_seed(request.seed)
                if isinstance(request, ImageInpaint):
                    gen_req = GenRequest(
                        prompt=tuned.refined_text,
                        out_width=request.image.shape[1],
                        out_height=request.image.shape[0],
                        seed=seed,
                        base_image=request.image,
                        mask=request.mask,
                    )
                else:
                    gen_req = GenRequest(
                        prompt=tuned.refined_text,
                        out_width=self.target.size,
                        out_height=self.target.size,
                        seed=seed,
                    )
                raster, gen_meter = generate(
                    gen_req,
                    backend_kind,
                    self.registry,
                    request_id=request_id,
                    scenario=kind.value,
                )

            with stage("standardize"):
                pixels = standardize_pixels(raster, self.target)

            meter = MeterRecord(
                request_id=request_id,
                scenario=kind.value,
                backend_id=gen_meter.backend_id,
                prompt_tokens=tuned.prompt_tokens,
                completion_tokens=tuned.completion_tokens,
                wall_time_ms=int(round((time.perf_counter() - t_start) * 1000.0)),
                stage_spans=dict(spans),
            )
            provenance = Provenance(
                request_id=request_id,
                scenario=kind.value,
                backend_id=gen_meter.backend_id,
                original_prompt=tuned.original,
                tuned_prompt=tuned.refined_text,
                seed=seed,
                meter=meter,
            )
            artifact = TextureArtifact(pixels=pixels, provenance=provenance)

            with stage("persist"):
                png = encode_artifact(artifact)
                digest = self.artifacts.put(request_id, png, kind.value)
                self.meters.append(meter)

            cost = estimate_cost([meter], self.rate_card)
        except StageFailure:
            self.artifacts.release(request_id)
            raise
        return GenerateResult(
            request_id=request_id,
            artifact=artifact,
            artifact_bytes=png,
            artifact_digest=digest,
            tuned=tuned,
            meter=meter,
            cost=cost,
        )
