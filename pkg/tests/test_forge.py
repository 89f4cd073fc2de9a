"""Instruction-dataset forge: caption, rephrase, assemble, round trip."""

import hashlib
import json

import pytest
from hypothesis import given, settings, strategies as st

from tmd.forge import (
    DATASET_SCHEMA,
    DEFAULT_TEMPLATE_ID,
    REPHRASE_TEMPLATES,
    CountMismatch,
    DuplicateEntry,
    EmptyCaption,
    ExhaustedAttempts,
    ForgeConfig,
    ImageRef,
    IoFailure,
    OfflineCaptionBackend,
    OfflineRephraseBackend,
    SchemaViolation,
    TextureCaption,
    UnknownTemplate,
    assemble_dataset,
    attach_system_message,
    build_dataset,
    caption_image,
    export_dataset,
    import_dataset,
    normalize_text,
    rephrase_caption,
)
from tmd.processor import EmptyImage, encode_png
from tmd.synth import render_texture

CRACK_CAPTION = (
    "A transverse crack on the head of the rail, about 2 inches long, "
    "with slight rust discoloration around the edges."
)


def _crack_photo_bytes():
    return encode_png(render_texture("crack on the rail", 512, 512, 101))


def _caption(text="a crack texture", digest="d" * 64, path="img.png"):
    return TextureCaption(image_ref=ImageRef(digest=digest, path=path), text=text)


# --- refs and normalization ------------------------------------------------


def test_image_ref_round_trip():
    ref = ImageRef(digest="ab" * 32, path="photos/site 4/img.png")
    assert ImageRef.parse(str(ref)) == ref


def test_image_ref_path_may_contain_colons():
    ref = ImageRef(digest="ab" * 32, path="c:/photos/img.png")
    assert ImageRef.parse(str(ref)) == ref


def test_image_ref_parse_rejects_other_schemes():
    with pytest.raises(ValueError):
        ImageRef.parse("md5:abcdef:x.png")
    with pytest.raises(ValueError):
        ImageRef.parse("plainstring")


def test_normalize_text_nfc_and_rstrip():
    # e + combining acute composes to the same normalized form as é
    assert normalize_text("caf\u0065\u0301  \n") == "caf\u00e9"
    assert normalize_text("abc") == "abc"
    assert normalize_text("  abc") == "  abc"  # leading space is significant


# --- captioning ------------------------------------------------------------


def test_caption_known_demo_image_uses_canned_text():
    cap = caption_image(_crack_photo_bytes(), DEFAULT_TEMPLATE_ID,
                        OfflineCaptionBackend(), path="crack_rail_head.png")
    assert cap.text == CRACK_CAPTION
    assert cap.image_ref.path == "crack_rail_head.png"
    assert cap.image_ref.digest == hashlib.sha256(_crack_photo_bytes()).hexdigest()


def test_caption_unknown_image_deterministic_fallback():
    data = b"\x89PNG not really but bytes"
    backend = OfflineCaptionBackend()
    cap1 = caption_image(data, DEFAULT_TEMPLATE_ID, backend)
    cap2 = caption_image(data, DEFAULT_TEMPLATE_ID, backend)
    assert cap1.text == cap2.text
    assert cap1.image_ref.digest[:12] in cap1.text


def test_caption_raster_input_hashes_png_bytes():
    raster = render_texture("crack on the rail", 512, 512, 101)
    cap = caption_image(raster, DEFAULT_TEMPLATE_ID, OfflineCaptionBackend())
    assert cap.text == CRACK_CAPTION


def test_caption_unknown_template():
    with pytest.raises(UnknownTemplate):
        caption_image(b"data", "no-such-template", OfflineCaptionBackend())


def test_caption_empty_image():
    with pytest.raises(EmptyImage):
        caption_image(b"", DEFAULT_TEMPLATE_ID, OfflineCaptionBackend())


def test_caption_blank_backend_output():
    class Blank:
        def caption(self, image_bytes, template):
            return "   "

    with pytest.raises(EmptyCaption):
        caption_image(b"data", DEFAULT_TEMPLATE_ID, Blank())


# --- rephrasing ------------------------------------------------------------


def test_offline_rephrase_first_three_enumerated():
    backend = OfflineRephraseBackend()
    texts = rephrase_caption(_caption("a crack"), ForgeConfig(k=3), backend)
    assert texts == [
        "a crack",
        "Close-up view: a crack",
        "Texture reference: a crack",
    ]


def test_offline_rephrase_k10_distinct_with_variant_suffix():
    texts = rephrase_caption(_caption("a crack"), ForgeConfig(k=10), OfflineRephraseBackend())
    assert len(texts) == 10
    assert len({normalize_text(t) for t in texts}) == 10
    assert texts[8] == "a crack (variant 2)"
    assert texts[9] == "Close-up view: a crack (variant 2)"


def test_offline_rephrase_unbounded_k():
    texts = rephrase_caption(_caption("x"), ForgeConfig(k=40), OfflineRephraseBackend())
    assert len({normalize_text(t) for t in texts}) == 40
    assert len(REPHRASE_TEMPLATES) == 8


class _CountingConstant:
    def __init__(self, text="same thing"):
        self.calls = 0
        self.text = text

    def rephrase(self, caption_text, attempt):
        self.calls += 1
        return self.text


def test_constant_backend_exhausts_after_exactly_factor_times_k():
    backend = _CountingConstant()
    config = ForgeConfig(k=2, max_attempts_factor=5)
    with pytest.raises(ExhaustedAttempts):
        rephrase_caption(_caption(), config, backend)
    assert backend.calls == 10


def test_rephrase_skips_blank_and_whitespace_variants():
    class Tricky:
        def __init__(self):
            self.outputs = ["", "  ", "one", "one ", "one\n", "two"]

        def rephrase(self, caption_text, attempt):
            return self.outputs[attempt]

    texts = rephrase_caption(_caption(), ForgeConfig(k=2), Tricky())
    # trailing-whitespace variants collapse onto "one"; originals returned
    assert texts == ["one", "two"]


@given(st.integers(1, 6), st.integers(2, 6))
@settings(max_examples=20, deadline=None)
def test_rephrase_call_count_cap_property(k, factor):
    backend = _CountingConstant()
    try:
        rephrase_caption(_caption(), ForgeConfig(k=k, max_attempts_factor=factor), backend)
    except ExhaustedAttempts:
        pass
    assert backend.calls <= factor * k


def test_forge_config_validation():
    with pytest.raises(ValueError):
        ForgeConfig(k=0)
    with pytest.raises(ValueError):
        ForgeConfig(k=1, max_attempts_factor=1)
    assert ForgeConfig(k=1).max_attempts_factor == 10


# --- sample assembly -------------------------------------------------------


def test_attach_system_message_golden():
    cap = _caption(text=CRACK_CAPTION, digest="e" * 64, path="crack.png")
    sample = attach_system_message(cap, "Close-up view: " + CRACK_CAPTION)
    assert sample.system_message.endswith(f"Source observation: {CRACK_CAPTION}")
    assert sample.user_instruction == (
        "Generate a defect texture image matching this description: "
        "Close-up view: " + CRACK_CAPTION
    )
    assert sample.response_text == "Close-up view: " + CRACK_CAPTION
    assert sample.image_ref == cap.image_ref


def test_sample_id_deterministic_and_distinct():
    cap = _caption()
    a1 = attach_system_message(cap, "response one")
    a2 = attach_system_message(cap, "response one")
    b = attach_system_message(cap, "response two")
    other = attach_system_message(_caption(digest="f" * 64), "response one")
    assert a1.id == a2.id and len(a1.id) == 16
    assert a1.id != b.id
    assert a1.id != other.id


def test_attach_rejects_blank_response_and_unknown_template():
    with pytest.raises(ValueError):
        attach_system_message(_caption(), "   ")
    with pytest.raises(UnknownTemplate):
        attach_system_message(_caption(), "ok", template_id="nope")


def test_assemble_counts_and_ordering():
    config = ForgeConfig(k=3)
    samples = []
    for d in ("b" * 64, "a" * 64):
        cap = _caption(digest=d, path=f"{d[:1]}.png")
        for text in rephrase_caption(cap, config, OfflineRephraseBackend()):
            samples.append(attach_system_message(cap, text))
    dataset = assemble_dataset(samples, config)
    assert len(dataset.entries) == 6
    keys = [(str(e.image_ref), e.response_text) for e in dataset.entries]
    assert keys == sorted(keys)
    # brute-force pairwise uniqueness
    for i in range(len(dataset.entries)):
        for j in range(i + 1, len(dataset.entries)):
            assert keys[i] != keys[j]


def test_assemble_duplicate_entry():
    cap = _caption()
    samples = [attach_system_message(cap, "same"), attach_system_message(cap, "same")]
    with pytest.raises(DuplicateEntry):
        assemble_dataset(samples, ForgeConfig(k=2))


def test_assemble_duplicate_up_to_normalization():
    cap = _caption()
    samples = [attach_system_message(cap, "same"), attach_system_message(cap, "same  ")]
    with pytest.raises(DuplicateEntry):
        assemble_dataset(samples, ForgeConfig(k=2))


def test_assemble_count_mismatch():
    cap = _caption()
    samples = [attach_system_message(cap, "only one")]
    with pytest.raises(CountMismatch):
        assemble_dataset(samples, ForgeConfig(k=2))


def test_assemble_empty_is_valid():
    dataset = assemble_dataset([], ForgeConfig(k=5))
    assert dataset.entries == ()


# --- export / import -------------------------------------------------------


def _demo_images():
    return [
        ("crack.png", _crack_photo_bytes()),
        ("rust.png", encode_png(render_texture("rust on the web of the rail", 512, 512, 102))),
    ]


def test_build_dataset_end_to_end():
    config = ForgeConfig(k=10, seed=0)
    dataset = build_dataset(_demo_images(), config,
                            OfflineCaptionBackend(), OfflineRephraseBackend())
    assert len(dataset.entries) == 20
    refs = {str(e.image_ref) for e in dataset.entries}
    assert len(refs) == 2


def test_export_import_round_trip(tmp_path):
    config = ForgeConfig(k=4, seed=7)
    dataset = build_dataset(_demo_images(), config,
                            OfflineCaptionBackend(), OfflineRephraseBackend(),
                            created_at="2024-06-01T00:00:00Z")
    path = tmp_path / "dataset.jsonl"
    export_dataset(dataset, path)
    again = import_dataset(path)
    assert again == dataset


def test_export_header_and_line_shape(tmp_path):
    config = ForgeConfig(k=2, seed=3)
    dataset = build_dataset(_demo_images()[:1], config,
                            OfflineCaptionBackend(), OfflineRephraseBackend())
    path = tmp_path / "dataset.jsonl"
    export_dataset(dataset, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    header = json.loads(lines[0])
    assert header["schema"] == DATASET_SCHEMA
    assert header["k"] == 2 and header["seed"] == 3
    entry = json.loads(lines[1])
    assert set(entry) == {"id", "system", "user", "assistant"}
    assert set(entry["user"]) == {"text", "image_ref"}
    assert entry["user"]["image_ref"].startswith("sha256:")


def test_export_byte_deterministic(tmp_path):
    config = ForgeConfig(k=10, seed=0)
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for path in (p1, p2):
        dataset = build_dataset(_demo_images(), config,
                                OfflineCaptionBackend(), OfflineRephraseBackend())
        export_dataset(dataset, path)
    assert p1.read_bytes() == p2.read_bytes()


def _write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _valid_lines():
    config = ForgeConfig(k=2)
    cap = _caption(digest="a" * 64, path="x.png")
    samples = [attach_system_message(cap, t)
               for t in rephrase_caption(cap, config, OfflineRephraseBackend())]
    dataset = assemble_dataset(samples, config)
    header = {"schema": DATASET_SCHEMA, "k": 2, "seed": 0}
    lines = [json.dumps(header)]
    for e in dataset.entries:
        lines.append(json.dumps({
            "id": e.id,
            "system": e.system_message,
            "user": {"text": e.user_instruction, "image_ref": str(e.image_ref)},
            "assistant": e.response_text,
        }))
    return lines


def test_import_minimal_header_defaults(tmp_path):
    path = tmp_path / "d.jsonl"
    _write_lines(path, _valid_lines())
    dataset = import_dataset(path)
    assert dataset.forge_config.max_attempts_factor == 10
    assert len(dataset.entries) == 2


def test_import_missing_file():
    with pytest.raises(IoFailure):
        import_dataset("/nonexistent/nope.jsonl")


def test_import_bad_header(tmp_path):
    path = tmp_path / "d.jsonl"
    _write_lines(path, ['{"schema": "other/9", "k": 2, "seed": 0}'])
    with pytest.raises(SchemaViolation, match="line 1"):
        import_dataset(path)


def test_import_missing_system_field_names_line(tmp_path):
    lines = _valid_lines()
    broken = json.loads(lines[2])
    del broken["system"]
    lines[2] = json.dumps(broken)
    path = tmp_path / "d.jsonl"
    _write_lines(path, lines)
    with pytest.raises(SchemaViolation, match="line 3: missing or empty field 'system'"):
        import_dataset(path)


def test_import_invalid_json_names_line(tmp_path):
    lines = _valid_lines()
    lines[1] = '{"not json'
    path = tmp_path / "d.jsonl"
    _write_lines(path, lines)
    with pytest.raises(SchemaViolation, match="line 2"):
        import_dataset(path)


def test_import_duplicate_pair_names_both_lines(tmp_path):
    lines = _valid_lines()
    lines.append(lines[1])  # repeat the first entry at line 4
    path = tmp_path / "d.jsonl"
    _write_lines(path, lines)
    with pytest.raises(
        SchemaViolation, match=r"line 4: duplicate \(image_ref, response\) pair, first at line 2"
    ):
        import_dataset(path)


def test_import_count_mismatch(tmp_path):
    lines = _valid_lines()[:2]  # header + one entry, but k=2
    path = tmp_path / "d.jsonl"
    _write_lines(path, lines)
    with pytest.raises(SchemaViolation, match="expected k=2"):
        import_dataset(path)
