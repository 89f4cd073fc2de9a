"""End-to-end pipeline orchestration, persistence, and failure mapping."""

import dataclasses
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from tmd.gateway import BackendKind, BackendRegistry, OfflineTextToImageBackend, RemoteImageBackend
from tmd.metering import MeterStore, RateCard
from tmd.model import CreativePrompt, ImageInpaint, LibrarySelect, default_library
from tmd.pipeline import (
    ArtifactNotFound,
    ArtifactStore,
    DuplicateRequestId,
    Pipeline,
    StageFailure,
    new_request_id,
)
from tmd.processor import decode_artifact
from tmd.service import build_pipeline
from tmd.synth import render_texture
from tmd.tuner import OfflineTemplateTuner

from conftest import make_offline_config, strip_text_chunk

PAPER_SENTENCE = (
    "A transverse crack, approximately 2 inches long, located on the head of "
    "the rail, with slight rust discoloration around the edges."
)


def _prompt_request(request_id="", seed=7, text="crack on the rail"):
    return CreativePrompt(request_id=request_id, text=text, seed=seed)


def _inpaint_request(request_id="", h=512, w=512, seed=3, with_mask=True):
    base = render_texture("clean steel rail surface", w, h, 1)
    mask = None
    if with_mask:
        mask = np.zeros((h, w), dtype=np.uint8)
        mask[h // 4 : h // 2, w // 4 : w // 2] = 1
    return ImageInpaint(request_id=request_id, image=base,
                        instruction="add rust in this area", mask=mask, seed=seed)


# --- happy path ------------------------------------------------------------


def test_prompt_scenario_end_to_end(offline_pipeline):
    result = offline_pipeline.run(_prompt_request())
    assert result.tuned.refined_text == PAPER_SENTENCE
    assert result.artifact.width == result.artifact.height == 512
    assert result.meter.scenario == "prompt"
    assert result.meter.backend_id == "offline_t2i"
    assert result.meter.prompt_tokens > 0 and result.meter.completion_tokens > 0
    assert result.cost.n == 1
    # persisted PNG is the same bytes the caller got
    assert offline_pipeline.artifacts.open_bytes(result.request_id) == result.artifact_bytes
    assert offline_pipeline.artifacts.open_bytes(result.artifact_digest) == result.artifact_bytes


def test_library_scenario_end_to_end(offline_pipeline):
    result = offline_pipeline.run(
        LibrarySelect(request_id="", material_id="rail_head", defect_id="crack", seed=7)
    )
    assert result.tuned.original == "crack on the rail"
    assert result.tuned.refined_text == PAPER_SENTENCE
    assert result.meter.scenario == "library"


def test_inpaint_scenario_preserves_pixels_outside_mask(offline_pipeline):
    req = _inpaint_request()
    result = offline_pipeline.run(req)
    assert result.meter.scenario == "inpaint"
    # 512x512 base at a 512 target: standardization is the identity, so
    # unmasked pixels survive to the final artifact bit-exactly.
    outside = req.mask == 0
    assert np.array_equal(result.artifact.pixels[outside], req.image[outside])
    assert not np.array_equal(result.artifact.pixels[~outside], req.image[~outside])


def test_inpaint_nonsquare_base_is_standardized(offline_pipeline):
    result = offline_pipeline.run(_inpaint_request(h=480, w=640, with_mask=False))
    assert result.artifact.pixels.shape == (512, 512, 4)


def test_provenance_embedded_matches_persisted_state(offline_pipeline):
    result = offline_pipeline.run(_prompt_request())
    artifact = decode_artifact(result.artifact_bytes)
    prov = artifact.provenance
    assert prov.request_id == result.request_id
    assert prov.original_prompt == "crack on the rail"
    assert prov.tuned_prompt == PAPER_SENTENCE
    assert prov.seed == 7
    # embedded meter is the persisted meter, span for span
    persisted = [r for r in offline_pipeline.meters.snapshot()
                 if r.request_id == result.request_id]
    assert len(persisted) == 1
    assert persisted[0] == prov.meter == result.meter


def test_meter_spans_cover_ordered_stages(offline_pipeline):
    result = offline_pipeline.run(_prompt_request())
    spans = result.meter.stage_spans
    assert set(spans) == {"validate", "tune", "route", "generate", "standardize"}
    order = ["validate", "tune", "route", "generate", "standardize"]
    for name in order:
        begin, end = spans[name]
        assert 0.0 <= begin <= end
    for earlier, later in zip(order, order[1:]):
        assert spans[earlier][1] <= spans[later][0]
    assert result.meter.wall_time_ms >= int(spans["standardize"][1] / 1000)


def test_to_response_dict_inline(offline_pipeline):
    import base64

    result = offline_pipeline.run(_prompt_request())
    body = result.to_response_dict(inline=True)
    assert body["artifact_url"] == f"/v1/artifacts/{result.artifact_digest}"
    assert body["tuned_prompt"] == PAPER_SENTENCE
    assert base64.b64decode(body["artifact_b64"]) == result.artifact_bytes
    assert "artifact_b64" not in result.to_response_dict()


# --- determinism -----------------------------------------------------------


def test_same_inputs_same_stripped_bytes(offline_pipeline):
    a = offline_pipeline.run(_prompt_request())
    b = offline_pipeline.run(_prompt_request())
    assert a.request_id != b.request_id
    assert a.tuned.refined_text == b.tuned.refined_text
    assert strip_text_chunk(a.artifact_bytes) == strip_text_chunk(b.artifact_bytes)
    assert np.array_equal(a.artifact.pixels, b.artifact.pixels)


def test_different_seed_different_pixels(offline_pipeline):
    a = offline_pipeline.run(_prompt_request(seed=1))
    b = offline_pipeline.run(_prompt_request(seed=2))
    assert not np.array_equal(a.artifact.pixels, b.artifact.pixels)


def test_fixed_seed_policy_fills_missing_seed(offline_pipeline):
    a = offline_pipeline.run(_prompt_request(seed=None))
    b = offline_pipeline.run(_prompt_request(seed=None))
    assert decode_artifact(a.artifact_bytes).provenance.seed == 0
    assert np.array_equal(a.artifact.pixels, b.artifact.pixels)


def test_random_seed_policy_varies(tmp_path):
    config = dataclasses.replace(make_offline_config(tmp_path), seed_policy="random")
    pipeline = build_pipeline(config)
    seeds = {decode_artifact(pipeline.run(_prompt_request(seed=None)).artifact_bytes)
             .provenance.seed for _ in range(8)}
    assert len(seeds) > 1


def test_concurrent_identical_requests_16_threads(offline_pipeline):
    results = [None] * 16
    errors = []

    def work(i):
        try:
            results[i] = offline_pipeline.run(_prompt_request())
        except Exception as exc:  # pragma: no cover - failure detail
            errors.append(exc)

    threads = [threading.Thread(target=work, args=(i,)) for i in range(16)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    stripped = {strip_text_chunk(r.artifact_bytes) for r in results}
    assert len(stripped) == 1
    assert len({r.request_id for r in results}) == 16
    assert len(offline_pipeline.meters.snapshot()) == 16


# --- failure mapping -------------------------------------------------------


def _expect_failure(pipeline, request, stage, code, status):
    with pytest.raises(StageFailure) as err:
        pipeline.run(request)
    failure = err.value
    assert (failure.stage, failure.code, failure.http_status) == (stage, code, status)
    assert failure.to_dict() == {"stage": stage, "code": code, "message": failure.message}


def test_empty_prompt_fails_validate(offline_pipeline):
    _expect_failure(offline_pipeline, _prompt_request(text="   "),
                    "validate", "EmptyPrompt", 422)


def test_unknown_material_fails_tune(offline_pipeline):
    request = LibrarySelect(request_id="", material_id="marble", defect_id="crack")
    _expect_failure(offline_pipeline, request, "tune", "UnknownMaterial", 422)


def test_unknown_defect_fails_tune(offline_pipeline):
    request = LibrarySelect(request_id="", material_id="rail_head", defect_id="dragon")
    _expect_failure(offline_pipeline, request, "tune", "UnknownDefect", 422)


def test_inpaint_without_image_fails_validate(offline_pipeline):
    request = ImageInpaint(request_id="", image=None, instruction="add rust")
    _expect_failure(offline_pipeline, request, "validate", "MissingImage", 422)


def test_inpaint_mask_mismatch_fails_validate(offline_pipeline):
    base = render_texture("steel", 64, 64, 0)
    request = ImageInpaint(request_id="", image=base, instruction="add rust",
                           mask=np.ones((32, 32), dtype=np.uint8))
    _expect_failure(offline_pipeline, request, "validate", "MaskMismatch", 422)


def test_failed_request_persists_nothing(offline_pipeline):
    with pytest.raises(StageFailure):
        offline_pipeline.run(_prompt_request(text=""))
    assert offline_pipeline.meters.snapshot() == []
    index = offline_pipeline.artifacts.root / "index.jsonl"
    assert not index.exists() or index.read_text() == ""


def test_duplicate_request_id_rejected(offline_pipeline):
    offline_pipeline.run(_prompt_request(request_id="fixed-id"))
    _expect_failure(offline_pipeline, _prompt_request(request_id="fixed-id"),
                    "validate", "DuplicateRequestId", 422)


def test_failed_run_releases_its_request_id(offline_pipeline):
    bad = LibrarySelect(request_id="reusable", material_id="marble", defect_id="crack")
    with pytest.raises(StageFailure):
        offline_pipeline.run(bad)
    # the id is free again after the tune-stage failure
    result = offline_pipeline.run(_prompt_request(request_id="reusable"))
    assert result.request_id == "reusable"


def _pipeline_with_remote(tmp_path, url):
    registry = BackendRegistry()
    registry.bind(BackendKind.TEXT_TO_IMAGE, RemoteImageBackend("remote_t2i", url,
                                                                timeout_s=2.0))
    library = default_library()
    return Pipeline(
        library=library,
        tuner=OfflineTemplateTuner(library),
        registry=registry,
        rate_card=RateCard.default(),
        artifacts=ArtifactStore(tmp_path / "artifacts"),
        meters=MeterStore(tmp_path / "meters.jsonl"),
    )


class _FailingStub:
    def __init__(self, status=500, sleep_s=0.0):
        self.calls = 0
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                stub.calls += 1
                length = int(self.headers.get("Content-Length", 0))
                self.rfile.read(length)
                if sleep_s:
                    import time

                    time.sleep(sleep_s)
                self.send_response(status)
                self.send_header("Content-Length", "0")
                self.end_headers()

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_port}/img"
        threading.Thread(target=self.server.serve_forever, daemon=True).start()

    def close(self):
        self.server.shutdown()
        self.server.server_close()


def test_remote_500_maps_to_generate_502_after_one_retry(tmp_path):
    stub = _FailingStub(status=500)
    try:
        pipeline = _pipeline_with_remote(tmp_path, stub.url)
        _expect_failure(pipeline, _prompt_request(), "generate", "BackendUnavailable", 502)
        assert stub.calls == 2
    finally:
        stub.close()


def test_remote_timeout_maps_to_generate_504(tmp_path):
    stub = _FailingStub(status=200, sleep_s=5.0)
    try:
        registry = BackendRegistry()
        registry.bind(BackendKind.TEXT_TO_IMAGE,
                      RemoteImageBackend("remote_t2i", stub.url, timeout_s=0.3))
        library = default_library()
        pipeline = Pipeline(
            library=library,
            tuner=OfflineTemplateTuner(library),
            registry=registry,
            rate_card=RateCard.default(),
            artifacts=ArtifactStore(tmp_path / "artifacts"),
            meters=MeterStore(tmp_path / "meters.jsonl"),
        )
        _expect_failure(pipeline, _prompt_request(), "generate", "Timeout", 504)
    finally:
        stub.close()


def test_no_edit_backend_maps_to_generate_502(tmp_path):
    pipeline = _pipeline_with_remote(tmp_path, "http://127.0.0.1:1/unused")
    registry = BackendRegistry()
    registry.bind(BackendKind.TEXT_TO_IMAGE, OfflineTextToImageBackend())
    pipeline.registry = registry
    _expect_failure(pipeline, _inpaint_request(h=64, w=64),
                    "generate", "NoBackendForKind", 502)


# --- artifact store --------------------------------------------------------


def test_store_content_addressing(tmp_path):
    store = ArtifactStore(tmp_path / "store")
    digest = store.put("req-a", b"png-bytes-1", "prompt")
    assert (tmp_path / "store" / f"{digest}.png").is_file()
    assert store.open_bytes("req-a") == b"png-bytes-1"
    assert store.open_bytes(digest) == b"png-bytes-1"
    # identical bytes from a second request share one file
    assert store.put("req-b", b"png-bytes-1", "prompt") == digest
    names = {p.name for p in (tmp_path / "store").glob("*.png")}
    assert names == {f"{digest}.png"}


def test_store_unknown_and_traversal(tmp_path):
    store = ArtifactStore(tmp_path / "store")
    with pytest.raises(ArtifactNotFound):
        store.open_bytes("no-such-id")
    (tmp_path / "secret.txt").write_text("sensitive")
    with pytest.raises(ArtifactNotFound):
        store.open_bytes("../secret.txt")
    with pytest.raises(ArtifactNotFound):
        store.open_bytes("..\\secret.txt")


def test_store_reserve_conflicts(tmp_path):
    store = ArtifactStore(tmp_path / "store")
    store.reserve("in-flight")
    with pytest.raises(DuplicateRequestId):
        store.reserve("in-flight")
    store.release("in-flight")
    store.reserve("in-flight")  # free again after release
    store.put("in-flight", b"data", "prompt")
    with pytest.raises(DuplicateRequestId):
        store.reserve("in-flight")  # now permanently taken


def test_store_index_survives_restart(tmp_path):
    root = tmp_path / "store"
    ArtifactStore(root).put("req-a", b"payload", "library")
    reopened = ArtifactStore(root)
    assert reopened.open_bytes("req-a") == b"payload"
    with pytest.raises(DuplicateRequestId):
        reopened.reserve("req-a")
    entry = json.loads((root / "index.jsonl").read_text().splitlines()[0])
    assert entry["request_id"] == "req-a" and entry["scenario"] == "library"


# --- request ids -----------------------------------------------------------


def test_request_id_format():
    rid = new_request_id()
    assert len(rid) == 26
    assert set(rid) <= set("0123456789ABCDEFGHJKMNPQRSTVWXYZ")


def test_request_ids_unique_and_sortable():
    ids = [new_request_id() for _ in range(5000)]
    assert len(set(ids)) == 5000
    assert ids == sorted(ids)  # monotonic within one process


def test_request_ids_unique_across_threads():
    ids = []
    lock = threading.Lock()

    def work():
        got = [new_request_id() for _ in range(200)]
        with lock:
            ids.extend(got)

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(set(ids)) == 1600
