"""Synthetic instruction-dataset assembly for defect textures.

Pipeline: caption each source image, generate K unique rephrasings per
caption, attach a system message to every rephrasing, then assemble and
export a deduplicated dataset.  Uniqueness is exact string equality after
Unicode NFC normalization and trailing-whitespace trim; the rephrase loop
is bounded at max_attempts_factor * K backend calls.  With the offline
backends the whole pipeline is byte-deterministic.
"""

from __future__ import annotations

import hashlib
import json
import unicodedata
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Protocol, Union

import httpx
import numpy as np

from .errors import BackendUnavailable, TmdError
from .processor import EmptyImage, encode_png

__all__ = [
    "ImageRef",
    "TextureCaption",
    "InstructionSample",
    "ForgeConfig",
    "TextureDataset",
    "CaptionBackend",
    "RephraseBackend",
    "OfflineCaptionBackend",
    "OfflineRephraseBackend",
    "RemoteCaptionBackend",
    "RemoteRephraseBackend",
    "caption_image",
    "rephrase_caption",
    "attach_system_message",
    "assemble_dataset",
    "export_dataset",
    "import_dataset",
    "build_dataset",
    "normalize_text",
    "EmptyCaption",
    "ExhaustedAttempts",
    "UnknownTemplate",
    "DuplicateEntry",
    "CountMismatch",
    "IoFailure",
    "SchemaViolation",
    "CAPTION_TEMPLATES",
    "SYSTEM_TEMPLATES",
    "REPHRASE_TEMPLATES",
]

DATASET_SCHEMA = "tmd-dataset/1"
DEFAULT_TEMPLATE_ID = "texture-v1"
DEFAULT_CREATED_AT = "1970-01-01T00:00:00Z"


class EmptyCaption(TmdError):
    code = "EmptyCaption"


class ExhaustedAttempts(TmdError):
    code = "ExhaustedAttempts"


class UnknownTemplate(TmdError):
    code = "UnknownTemplate"


class DuplicateEntry(TmdError):
    code = "DuplicateEntry"


class CountMismatch(TmdError):
    code = "CountMismatch"


class IoFailure(TmdError):
    code = "IoFailure"


class SchemaViolation(TmdError):
    code = "SchemaViolation"


CAPTION_TEMPLATES = {
    DEFAULT_TEMPLATE_ID: (
        "Describe the visible surface texture of this railway component "
        "photograph: defect type, approximate size, location on the "
        "component, and any color changes."
    ),
}

SYSTEM_TEMPLATES = {
    DEFAULT_TEMPLATE_ID: (
        "You are a texture synthesis assistant for railway defect imagery. "
        "Produce textures faithful to the requested defect type, size, "
        "location, and color. Source observation: {caption}"
    ),
}

# Cycle of 8 phrasings; later cycles get a variant suffix so the output
# stream never repeats and any K is reachable.
REPHRASE_TEMPLATES = (
    "{caption}",
    "Close-up view: {caption}",
    "Texture reference: {caption}",
    "Surface study: {caption}",
    "Inspection record: {caption}",
    "Macro detail: {caption}",
    "Field capture: {caption}",
    "Archive sample: {caption}",
)


def normalize_text(text: str) -> str:
    """Canonical form used for uniqueness checks."""
    return unicodedata.normalize("NFC", text).rstrip()


@dataclass(frozen=True)
class ImageRef:
    """Content-addressed image identifier: sha256 of the bytes plus the
    original path."""

    digest: str
    path: str

    def __post_init__(self):
        if not self.digest:
            raise ValueError("image ref requires a digest")

    @classmethod
    def from_bytes(cls, data: bytes, path: str = "") -> "ImageRef":
        return cls(digest=hashlib.sha256(data).hexdigest(), path=path)

    @classmethod
    def parse(cls, text: str) -> "ImageRef":
        scheme, _, rest = text.partition(":")
        if scheme != "sha256" or not rest:
            raise ValueError(f"unparseable image ref: {text!r}")
        digest, _, path = rest.partition(":")
        return cls(digest=digest, path=path)

    def __str__(self) -> str:
        return f"sha256:{self.digest}:{self.path}"


@dataclass(frozen=True)
class TextureCaption:
    image_ref: ImageRef
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("caption text must be non-empty")


@dataclass(frozen=True)
class InstructionSample:
    id: str
    system_message: str
    user_instruction: str
    image_ref: ImageRef
    response_text: str

    def __post_init__(self):
        for name in ("id", "system_message", "user_instruction", "response_text"):
            if not getattr(self, name).strip():
                raise ValueError(f"sample field {name} must be non-empty")


@dataclass(frozen=True)
class ForgeConfig:
    k: int
    max_attempts_factor: int = 10
    caption_template_id: str = DEFAULT_TEMPLATE_ID
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_attempts_factor < 2:
            raise ValueError("max_attempts_factor must be >= 2")
        if self.seed < 0:
            raise ValueError("seed must be an unsigned integer")


@dataclass(frozen=True)
class TextureDataset:
    entries: tuple[InstructionSample, ...]
    forge_config: ForgeConfig
    created_at: str = DEFAULT_CREATED_AT


class CaptionBackend(Protocol):
    def caption(self, image_bytes: bytes, template: str) -> str: ...


class RephraseBackend(Protocol):
    def rephrase(self, caption_text: str, attempt: int) -> str: ...


def _load_caption_table() -> dict[str, str]:
    with resources.files("tmd.data").joinpath("captions.json").open("r", encoding="utf-8") as f:
        return json.load(f)


class OfflineCaptionBackend:
    """Hash-keyed caption lookup; unknown digests get a deterministic
    placeholder derived from the digest."""

    def __init__(self, table: Optional[dict[str, str]] = None):
        self._table = dict(_load_caption_table()) if table is None else dict(table)

    def caption(self, image_bytes: bytes, template: str) -> str:
        digest = hashlib.sha256(image_bytes).hexdigest()
        canned = self._table.get(digest)
        if canned is not None:
            return canned
        return (
            "A close-up photograph of a railway component surface with an "
            f"unlabeled defect texture, reference {digest[:12]}."
        )


class OfflineRephraseBackend:
    """Deterministic template cycling; attempt ``i`` renders template
    ``i % 8`` and cycles past the first eight get a variant suffix."""

    def rephrase(self, caption_text: str, attempt: int) -> str:
        template = REPHRASE_TEMPLATES[attempt % len(REPHRASE_TEMPLATES)]
        text = template.format(caption=caption_text)
        cycle = attempt // len(REPHRASE_TEMPLATES)
        if cycle > 0:
            text = f"{text} (variant {cycle + 1})"
        return text


def _post_chat(client: httpx.Client, url: str, headers: dict, body: dict, name: str) -> str:
    """Two-attempt POST: retry once on transport error or 5xx, fail fast on 4xx."""
    last_error: Exception | None = None
    for _ in range(2):
        try:
            resp = client.post(url, json=body, headers=headers)
        except httpx.HTTPError as exc:
            last_error = exc
            continue
        if 400 <= resp.status_code < 500:
            raise BackendUnavailable(f"{name} rejected request: HTTP {resp.status_code}")
        if resp.status_code >= 500:
            last_error = BackendUnavailable(f"{name} HTTP {resp.status_code}")
            continue
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except Exception as exc:
            raise BackendUnavailable(f"malformed response from {name}: {exc}") from exc
    raise BackendUnavailable(f"{name} unreachable after retry: {last_error}")


class RemoteCaptionBackend:
    """Vision chat endpoint: template as text plus the image inline."""

    def __init__(self, base_url: str, model: str, auth_token: Optional[str] = None,
                 timeout_s: float = 120.0):
        self.base_url = base_url
        self.model = model
        self._headers = {"Authorization": f"Bearer {auth_token}"} if auth_token else {}
        self._client = httpx.Client(timeout=timeout_s)

    def caption(self, image_bytes: bytes, template: str) -> str:
        import base64

        image_url = "data:image/png;base64," + base64.b64encode(image_bytes).decode("ascii")
        body = {
            "model": self.model,
            "messages": [
                {
                    "role": "user",
                    "content": [
                        {"type": "text", "text": template},
                        {"type": "image_url", "image_url": {"url": image_url}},
                    ],
                }
            ],
        }
        return _post_chat(self._client, self.base_url, self._headers, body, "caption backend")


class RemoteRephraseBackend:
    def __init__(self, base_url: str, model: str, auth_token: Optional[str] = None,
                 timeout_s: float = 120.0):
        self.base_url = base_url
        self.model = model
        self._headers = {"Authorization": f"Bearer {auth_token}"} if auth_token else {}
        self._client = httpx.Client(timeout=timeout_s)

    def rephrase(self, caption_text: str, attempt: int) -> str:
        body = {
            "model": self.model,
            "messages": [
                {
                    "role": "user",
                    "content": (
                        "Rephrase this texture description, keeping every "
                        f"factual attribute (variation {attempt + 1}): {caption_text}"
                    ),
                }
            ],
        }
        return _post_chat(self._client, self.base_url, self._headers, body, "rephrase backend")


def caption_image(
    image: Union[np.ndarray, bytes],
    template_id: str,
    backend: CaptionBackend,
    path: str = "",
) -> TextureCaption:
    """Caption one source image.

    Accepts either a decoded RGBA raster (encoded to PNG for hashing) or
    raw image bytes.

    Raises:
        EmptyImage: zero-byte input.
        UnknownTemplate: template_id not in the registry.
        EmptyCaption: backend returned a blank caption.
        BackendUnavailable: backend failed.
    """
    template = CAPTION_TEMPLATES.get(template_id)
    if template is None:
        raise UnknownTemplate(f"unknown caption template: {template_id!r}")
    if isinstance(image, bytes):
        if not image:
            raise EmptyImage("image is empty")
        data = image
    else:
        if image.size == 0:
            raise EmptyImage("image is empty")
        data = encode_png(image)
    text = backend.caption(data, template)
    if not text.strip():
        raise EmptyCaption("caption backend returned a blank caption")
    return TextureCaption(image_ref=ImageRef.from_bytes(data, path), text=text)


def rephrase_caption(
    caption: TextureCaption,
    config: ForgeConfig,
    backend: RephraseBackend,
) -> list[str]:
    """Collect exactly K pairwise-distinct non-empty rephrasings.

    Distinctness is judged on the normalized form; the originals of the
    first occurrence are returned in generation order.  At most
    max_attempts_factor * K backend calls are made.

    Raises:
        ExhaustedAttempts: cap reached before K distinct outputs.
    """
    cap = config.max_attempts_factor * config.k
    found: list[str] = []
    seen: set[str] = set()
    attempts = 0
    while len(found) < config.k and attempts < cap:
        text = backend.rephrase(caption.text, attempts)
        attempts += 1
        normalized = normalize_text(text)
        if not normalized or normalized in seen:
            continue
        seen.add(normalized)
        found.append(text)
    if len(found) < config.k:
        raise ExhaustedAttempts(
            f"got {len(found)} of {config.k} distinct rephrasings in {attempts} calls"
        )
    return found


def attach_system_message(
    caption: TextureCaption,
    response_text: str,
    template_id: str = DEFAULT_TEMPLATE_ID,
) -> InstructionSample:
    """Wrap one rephrasing into an instruction sample with a deterministic
    content-hash id."""
    template = SYSTEM_TEMPLATES.get(template_id)
    if template is None:
        raise UnknownTemplate(f"unknown system template: {template_id!r}")
    if not response_text.strip():
        raise ValueError("response text must be non-empty")
    system = template.format(caption=caption.text)
    payload = f"{caption.image_ref}\n{response_text}".encode("utf-8")
    sample_id = hashlib.sha256(payload).hexdigest()[:16]
    return InstructionSample(
        id=sample_id,
        system_message=system,
        user_instruction=(
            f"Generate a defect texture image matching this description: {response_text}"
        ),
        image_ref=caption.image_ref,
        response_text=response_text,
    )


def assemble_dataset(
    samples: list[InstructionSample],
    config: ForgeConfig,
    created_at: str = DEFAULT_CREATED_AT,
) -> TextureDataset:
    """Merge samples into a dataset; entries sorted by (image_ref,
    response_text) for reproducible exports.

    Raises:
        DuplicateEntry: two samples share (image_ref, response_text).
        CountMismatch: some image_ref has a number of entries != K.
    """
    seen: set[tuple[str, str]] = set()
    counts: dict[str, int] = {}
    for sample in samples:
        key = (str(sample.image_ref), normalize_text(sample.response_text))
        if key in seen:
            raise DuplicateEntry(f"duplicate (image_ref, response_text): {key[0]}")
        seen.add(key)
        counts[key[0]] = counts.get(key[0], 0) + 1
    for ref, n in counts.items():
        if n != config.k:
            raise CountMismatch(f"{ref} has {n} entries, expected {config.k}")
    ordered = tuple(sorted(samples, key=lambda s: (str(s.image_ref), s.response_text)))
    return TextureDataset(entries=ordered, forge_config=config, created_at=created_at)


def export_dataset(dataset: TextureDataset, path) -> None:
    """Write JSON Lines: header then one sample per line, UTF-8, LF."""
    header = {
        "schema": DATASET_SCHEMA,
        "k": dataset.forge_config.k,
        "seed": dataset.forge_config.seed,
        "max_attempts_factor": dataset.forge_config.max_attempts_factor,
        "caption_template_id": dataset.forge_config.caption_template_id,
        "created_at": dataset.created_at,
    }
    lines = [json.dumps(header, sort_keys=True, ensure_ascii=False)]
    for entry in dataset.entries:
        lines.append(
            json.dumps(
                {
                    "id": entry.id,
                    "system": entry.system_message,
                    "user": {
                        "text": entry.user_instruction,
                        "image_ref": str(entry.image_ref),
                    },
                    "assistant": entry.response_text,
                },
                sort_keys=True,
                ensure_ascii=False,
            )
        )
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write dataset: {exc}") from exc


def _require_str(obj: dict, key: str, lineno: int) -> str:
    value = obj.get(key)
    if not isinstance(value, str) or not value:
        raise SchemaViolation(f"line {lineno}: missing or empty field {key!r}")
    return value


def import_dataset(path) -> TextureDataset:
    """Read a dataset file back, re-validating the schema line by line.

    Raises:
        IoFailure: unreadable file.
        SchemaViolation: bad header, malformed line, missing field,
            duplicate (image_ref, response) pair, or per-image count != K —
            always naming the offending 1-based line number.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw_lines = f.read().splitlines()
    except OSError as exc:
        raise IoFailure(f"cannot read dataset: {exc}") from exc
    if not raw_lines:
        raise SchemaViolation("line 1: missing header")

    def parse_line(text: str, lineno: int) -> dict:
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"line {lineno}: invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise SchemaViolation(f"line {lineno}: expected an object")
        return obj

    header = parse_line(raw_lines[0], 1)
    if header.get("schema") != DATASET_SCHEMA:
        raise SchemaViolation(f"line 1: schema must be {DATASET_SCHEMA!r}")
    if not isinstance(header.get("k"), int) or not isinstance(header.get("seed"), int):
        raise SchemaViolation("line 1: header requires integer k and seed")
    config = ForgeConfig(
        k=header["k"],
        max_attempts_factor=header.get("max_attempts_factor", 10),
        caption_template_id=header.get("caption_template_id", DEFAULT_TEMPLATE_ID),
        seed=header["seed"],
    )
    created_at = header.get("created_at", DEFAULT_CREATED_AT)

    entries: list[InstructionSample] = []
    seen: dict[tuple[str, str], int] = {}
    for lineno, text in enumerate(raw_lines[1:], start=2):
        if not text.strip():
            continue
        obj = parse_line(text, lineno)
        user = obj.get("user")
        if not isinstance(user, dict):
            raise SchemaViolation(f"line {lineno}: missing or empty field 'user'")
        ref_text = _require_str(user, "image_ref", lineno)
        try:
            ref = ImageRef.parse(ref_text)
        except ValueError as exc:
            raise SchemaViolation(f"line {lineno}: {exc}") from exc
        sample = InstructionSample(
            id=_require_str(obj, "id", lineno),
            system_message=_require_str(obj, "system", lineno),
            user_instruction=_require_str(user, "text", lineno),
            image_ref=ref,
            response_text=_require_str(obj, "assistant", lineno),
        )
        key = (ref_text, normalize_text(sample.response_text))
        if key in seen:
            raise SchemaViolation(
                f"line {lineno}: duplicate (image_ref, response) pair, first at line {seen[key]}"
            )
        seen[key] = lineno
        entries.append(sample)

    counts: dict[str, int] = {}
    for entry in entries:
        counts[str(entry.image_ref)] = counts.get(str(entry.image_ref), 0) + 1
    for ref_text, n in counts.items():
        if n != config.k:
            raise SchemaViolation(f"{ref_text} has {n} entries, expected k={config.k}")
    return TextureDataset(entries=tuple(entries), forge_config=config, created_at=created_at)


def build_dataset(
    images: list[tuple[str, bytes]],
    config: ForgeConfig,
    caption_backend: CaptionBackend,
    rephrase_backend: RephraseBackend,
    created_at: str = DEFAULT_CREATED_AT,
) -> TextureDataset:
    """End-to-end forge: caption, rephrase K times, attach system messages,
    assemble.  ``images`` is a list of (path, png_bytes)."""
    samples: list[InstructionSample] = []
    for path, data in images:
        caption = caption_image(data, config.caption_template_id, caption_backend, path=path)
        for text in rephrase_caption(caption, config, rephrase_backend):
            samples.append(attach_system_message(caption, text, config.caption_template_id))
    return assemble_dataset(samples, config, created_at=created_at)
