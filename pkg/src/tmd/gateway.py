"""Generation dispatch: scenario -> backend kind -> backend execution.

Routing is the fixed total mapping library/prompt -> text-to-image and
inpaint -> image-edit.  Backends implement ``generate(GenRequest)`` and come
in two flavors: a seeded procedural offline synthesizer (pure function of
the request) and a remote JSON-over-HTTP image endpoint.  For image edits
with a mask the gateway composites the backend output over the base image,
so pixels outside the mask are always bit-equal to the base.
"""

from __future__ import annotations

import base64
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional, Protocol

import httpx
import numpy as np

from .errors import BackendUnavailable, TmdError
from .metering import MeterRecord
from .model import ScenarioKind
from .processor import composite_inpaint, decode_png, encode_png, resize_bilinear
from .synth import render_texture

__all__ = [
    "BackendKind",
    "GenRequest",
    "GenResult",
    "GenBackend",
    "OfflineTextToImageBackend",
    "OfflineImageEditBackend",
    "RemoteImageBackend",
    "BackendRegistry",
    "route",
    "generate",
    "synthesize_procedural",
    "NoBackendForKind",
    "Timeout",
]

# Mixing weight of the synthesized patch over the base photo for offline edits.
EDIT_PATCH_WEIGHT = 0.55


class NoBackendForKind(TmdError):
    code = "NoBackendForKind"


class Timeout(TmdError):
    code = "Timeout"


class BackendKind(str, Enum):
    TEXT_TO_IMAGE = "text_to_image"
    IMAGE_EDIT = "image_edit"


@dataclass(frozen=True, eq=False)
class GenRequest:
    """One generation call; ``base_image`` is required iff kind is image-edit."""

    prompt: str
    out_width: int
    out_height: int
    seed: int
    base_image: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None


class GenResult(NamedTuple):
    raster: np.ndarray
    wall_time_ms: int
    backend_id: str


class GenBackend(Protocol):
    backend_id: str

    def generate(self, req: GenRequest) -> GenResult: ...


def route(kind: ScenarioKind) -> BackendKind:
    """Total scenario-to-backend mapping: 1 and 2 text-to-image, 3 image-edit."""
    if kind is ScenarioKind.INPAINT:
        return BackendKind.IMAGE_EDIT
    return BackendKind.TEXT_TO_IMAGE


def _validate_gen_request(req: GenRequest, kind: BackendKind) -> None:
    if not req.prompt.strip():
        raise ValueError("prompt must be non-empty")
    if req.out_width <= 0 or req.out_height <= 0:
        raise ValueError("output dimensions must be positive")
    if req.seed < 0:
        raise ValueError("seed must be an unsigned integer")
    if kind is BackendKind.IMAGE_EDIT:
        if req.base_image is None:
            raise ValueError("image-edit request requires a base image")
        if req.mask is not None:
            if req.mask.shape != req.base_image.shape[:2]:
                raise ValueError("mask dims must equal base image dims")
            # Masked edits stay at base resolution so compositing is exact.
            if (req.out_height, req.out_width) != req.base_image.shape[:2]:
                raise ValueError("masked edit output dims must equal base image dims")


def synthesize_procedural(req: GenRequest) -> np.ndarray:
    """The offline backend's core: seeded procedural texture for a request."""
    return render_texture(req.prompt, req.out_width, req.out_height, req.seed)


class OfflineTextToImageBackend:
    """Procedural text-to-image synthesis; deterministic per request."""

    def __init__(self, backend_id: str = "offline_t2i"):
        self.backend_id = backend_id

    def generate(self, req: GenRequest) -> GenResult:
        t0 = time.perf_counter()
        raster = synthesize_procedural(req)
        elapsed = int((time.perf_counter() - t0) * 1000)
        return GenResult(raster, elapsed, self.backend_id)


class OfflineImageEditBackend:
    """Procedural instruction edit: blends a synthesized defect patch over
    the base photo.  Masking happens in the gateway, not here."""

    def __init__(self, backend_id: str = "offline_edit"):
        self.backend_id = backend_id

    def generate(self, req: GenRequest) -> GenResult:
        t0 = time.perf_counter()
        if req.base_image is None:
            raise ValueError("image-edit backend requires a base image")
        base = req.base_image
        patch = render_texture(req.prompt, base.shape[1], base.shape[0], req.seed)
        blended = np.clip(
            np.rint((1.0 - EDIT_PATCH_WEIGHT) * base + EDIT_PATCH_WEIGHT * patch), 0, 255
        ).astype(np.uint8)
        blended[:, :, 3] = 255
        elapsed = int((time.perf_counter() - t0) * 1000)
        return GenResult(blended, elapsed, self.backend_id)


class RemoteImageBackend:
    """JSON-over-HTTP image endpoint.

    Contract: POST {prompt, image_b64?, mask_b64?, width, height, seed} ->
    {image_b64, elapsed_ms} with base64-encoded PNGs.  One retry on transport
    error or 5xx, none on 4xx; timeouts raise Timeout.
    """

    def __init__(
        self,
        backend_id: str,
        base_url: str,
        auth_token: Optional[str] = None,
        timeout_s: float = 120.0,
    ):
        self.backend_id = backend_id
        self.base_url = base_url
        self._headers = {"Authorization": f"Bearer {auth_token}"} if auth_token else {}
        self._client = httpx.Client(timeout=timeout_s)

    def generate(self, req: GenRequest) -> GenResult:
        body = {
            "prompt": req.prompt,
            "width": req.out_width,
            "height": req.out_height,
            "seed": req.seed,
        }
        if req.base_image is not None:
            body["image_b64"] = base64.b64encode(encode_png(req.base_image)).decode("ascii")
        if req.mask is not None:
            mask_rgba = np.repeat((req.mask * 255).astype(np.uint8)[:, :, None], 4, axis=2)
            mask_rgba[:, :, 3] = 255
            body["mask_b64"] = base64.b64encode(encode_png(mask_rgba)).decode("ascii")

        t0 = time.perf_counter()
        last_error: Exception | None = None
        for _ in range(2):
            try:
                resp = self._client.post(self.base_url, json=body, headers=self._headers)
            except httpx.TimeoutException as exc:
                raise Timeout(f"backend {self.backend_id} timed out: {exc}") from exc
            except httpx.HTTPError as exc:
                last_error = exc
                continue
            if 400 <= resp.status_code < 500:
                raise BackendUnavailable(
                    f"backend {self.backend_id} rejected request: HTTP {resp.status_code}"
                )
            if resp.status_code >= 500:
                last_error = BackendUnavailable(
                    f"backend {self.backend_id} HTTP {resp.status_code}"
                )
                continue
            try:
                payload = resp.json()
                raster, _ = decode_png(base64.b64decode(payload["image_b64"]))
            except Exception as exc:
                raise BackendUnavailable(
                    f"malformed response from {self.backend_id}: {exc}"
                ) from exc
            elapsed = int((time.perf_counter() - t0) * 1000)
            return GenResult(raster, elapsed, self.backend_id)
        raise BackendUnavailable(
            f"backend {self.backend_id} unreachable after retry: {last_error}"
        )


@dataclass
class BackendRegistry:
    """Read-only (after startup) binding of backend kinds to backends.

    ``max_in_flight`` of 0 means unlimited; positive values gate concurrent
    calls per backend with a semaphore.
    """

    backends: dict[BackendKind, GenBackend] = field(default_factory=dict)
    _sems: dict[str, threading.BoundedSemaphore] = field(default_factory=dict)

    def bind(self, kind: BackendKind, backend: GenBackend, max_in_flight: int = 0) -> None:
        self.backends[kind] = backend
        if max_in_flight > 0:
            self._sems[backend.backend_id] = threading.BoundedSemaphore(max_in_flight)

    def backend_for(self, kind: BackendKind) -> GenBackend:
        try:
            return self.backends[kind]
        except KeyError:
            raise NoBackendForKind(f"no backend bound for {kind.value}") from None

    def _gate(self, backend: GenBackend):
        sem = self._sems.get(backend.backend_id)
        return sem if sem is not None else _NULL_GATE


class _NullGate:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


_NULL_GATE = _NullGate()


def generate(
    req: GenRequest,
    kind: BackendKind,
    registry: BackendRegistry,
    *,
    request_id: str = "",
    scenario: str = "",
) -> tuple[np.ndarray, MeterRecord]:
    """Execute one generation through the registered backend for ``kind``.

    The returned raster always has exactly the requested dimensions; for
    masked edits, pixels where the mask is 0 are bit-equal to the base
    image.  The meter record carries the gateway-observed wall time and the
    backend id; token counts are zero here and belong to the tuning stage.

    Raises:
        NoBackendForKind: nothing bound for ``kind``.
        BackendUnavailable: backend failed after its configured retries.
        Timeout: remote backend exceeded its deadline.
    """
    _validate_gen_request(req, kind)
    backend = registry.backend_for(kind)

    t0 = time.perf_counter()
    with registry._gate(backend):
        result = backend.generate(req)
    raster = result.raster

    if raster.ndim != 3 or raster.shape[2] != 4 or raster.dtype != np.uint8:
        raise BackendUnavailable(f"backend {backend.backend_id} returned a non-RGBA raster")
    if raster.shape[:2] != (req.out_height, req.out_width):
        raster = resize_bilinear(raster, req.out_width, req.out_height)
    if kind is BackendKind.IMAGE_EDIT and req.mask is not None:
        raster = composite_inpaint(req.base_image, req.mask, raster)
    wall_ms = int(round((time.perf_counter() - t0) * 1000))

    meter = MeterRecord(
        request_id=request_id,
        scenario=scenario,
        backend_id=result.backend_id,
        prompt_tokens=0,
        completion_tokens=0,
        wall_time_ms=wall_ms,
    )
    return raster, meter
