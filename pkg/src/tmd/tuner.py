"""Prompt refinement: terse user prompts become fine-grained defect prompts.

The completion backend is pluggable.  The offline template tuner is a pure
function of (request, library): it parses the prompt against keyword tables,
fills missing attributes from the defect library template (never invented
free text), and renders one bounded slot-filled sentence, e.g.

    "crack on the rail" ->
    "A transverse crack, approximately 2 inches long, located on the head
     of the rail, with slight rust discoloration around the edges."

The remote backend speaks the common chat-completion JSON shape over HTTP.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass
from typing import NamedTuple, Optional, Protocol

import httpx

from .errors import BackendUnavailable, TmdError
from .metering import count_tokens
from .model import (
    CreativePrompt,
    DefectLibrary,
    DefectSpec,
    DefectType,
    ImageInpaint,
    LibrarySelect,
    Orientation,
    ScenarioRequest,
    SizeUnit,
    lookup_defect,
    mask_bbox,
    region_name,
)

__all__ = [
    "TunedPrompt",
    "TunerBackend",
    "CompletionResult",
    "OfflineTemplateTuner",
    "RemoteChatTuner",
    "tune_prompt",
    "extract_attributes",
    "attribute_mentions",
    "NoDefectFound",
    "UntunablePrompt",
]

SYSTEM_PROMPT = (
    "You refine terse railway defect descriptions into one precise sentence "
    "covering defect type, size, location, orientation, and color."
)

# Defect keyword patterns; the earliest match in the text wins.
_DEFECT_PATTERNS: tuple[tuple[re.Pattern, DefectType], ...] = (
    (re.compile(r"\bcrack\w*", re.I), DefectType.CRACK),
    (re.compile(r"\brust\w*", re.I), DefectType.RUST),
    (re.compile(r"\bcorro\w*", re.I), DefectType.RUST),
    (re.compile(r"\bwear\w*|\bworn\b", re.I), DefectType.WEAR),
    (re.compile(r"\bdecay\w*", re.I), DefectType.DECAY),
    (re.compile(r"\bsquat\w*", re.I), DefectType.SQUAT),
    (re.compile(r"\bdefect\w*", re.I), DefectType.CUSTOM),
)

_ORIENTATION_PATTERNS: tuple[tuple[str, Orientation], ...] = (
    ("transverse", Orientation.TRANSVERSE),
    ("longitudinal", Orientation.LONGITUDINAL),
    ("diagonal", Orientation.DIAGONAL),
)

_SIZE_RE = re.compile(
    r"(\d+(?:\.\d+)?)\s*(inches|inch|millimeters|millimetres|millimeter|mm)\b", re.I
)

_COMPONENT_RE = re.compile(
    r"\b(?:on|at|in)\s+(?:the\s+)?([a-z][a-z\- ]*?)(?=\s*(?:[,.;:]|$))", re.I
)

_REGION_MARKER_RE = re.compile(r"\s*\(region:\s*([a-z\- ]+)\)", re.I)

_COLOR_WORDS = (
    "discoloration",
    "discolored",
    "sheen",
    "stain",
    "tint",
    "oxidized",
    "orange",
    "brown",
    "dark",
    "reddish",
    "grey",
    "gray",
)

_LOCATION_CUES = ("located", "on the", "at the", "in the", "region")

# Noun phrase per defect type used by the offline tuner.
_DEFECT_NOUNS = {
    DefectType.CRACK: "crack",
    DefectType.RUST: "patch of rust",
    DefectType.WEAR: "band of wear",
    DefectType.DECAY: "area of decay",
    DefectType.SQUAT: "squat defect",
}

_CUSTOM_DEFAULTS = DefectSpec(
    defect_type=DefectType.CUSTOM,
    component="component surface",
    size_value=1.0,
    size_unit=SizeUnit.INCH,
    orientation=Orientation.UNSPECIFIED,
    color_notes="no distinctive discoloration",
    custom_label="unspecified",
)


class NoDefectFound(TmdError):
    code = "NoDefectFound"


class UntunablePrompt(TmdError):
    code = "UntunablePrompt"


@dataclass(frozen=True)
class TunedPrompt:
    """A refined prompt plus its parsed attributes and token usage."""

    original: str
    refined_text: str
    attributes: DefectSpec
    prompt_tokens: int
    completion_tokens: int

    def __post_init__(self):
        if not self.refined_text.strip():
            raise ValueError("refined_text must be non-empty")
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be >= 0")


class CompletionResult(NamedTuple):
    text: str
    prompt_tokens: int
    completion_tokens: int


class TunerBackend(Protocol):
    def complete(self, system_prompt: str, user_prompt: str) -> CompletionResult: ...


def _find_defect(text: str) -> Optional[tuple[DefectType, int]]:
    best: Optional[tuple[DefectType, int]] = None
    for pattern, defect_type in _DEFECT_PATTERNS:
        m = pattern.search(text)
        if m and (best is None or m.start() < best[1]):
            best = (defect_type, m.start())
    return best


def extract_attributes(text: str) -> DefectSpec:
    """Best-effort parse of a refined prompt into structured attributes.

    Unrecognized fields fall back to defaults: component "unspecified",
    size 1 inch, orientation unspecified, no color notes.

    Raises:
        NoDefectFound: no defect keyword in the text.
    """
    if not text.strip():
        raise NoDefectFound("empty text")
    found = _find_defect(text)
    if found is None:
        raise NoDefectFound(f"no defect keyword in {text!r}")
    defect_type = found[0]

    size_value, size_unit = 1.0, SizeUnit.INCH
    m = _SIZE_RE.search(text)
    if m:
        size_value = float(m.group(1))
        size_unit = SizeUnit.MM if m.group(2).lower().startswith(("mm", "milli")) else SizeUnit.INCH

    orientation = Orientation.UNSPECIFIED
    lowered = text.lower()
    for word, value in _ORIENTATION_PATTERNS:
        if word in lowered:
            orientation = value
            break

    component = "unspecified"
    cm = _COMPONENT_RE.search(text)
    if cm:
        component = cm.group(1).strip()

    color_notes = None
    for clause in re.split(r"[,.;]", text):
        if any(word in clause.lower() for word in _COLOR_WORDS):
            color_notes = clause.strip().removeprefix("with ").strip()
            break

    return DefectSpec(
        defect_type=defect_type,
        component=component,
        size_value=size_value,
        size_unit=size_unit,
        orientation=orientation,
        color_notes=color_notes,
        custom_label=text.strip() if defect_type is DefectType.CUSTOM else "",
    )


def attribute_mentions(text: str) -> frozenset[str]:
    """Which of {size, location, orientation, color} the text mentions."""
    lowered = text.lower()
    mentions = set()
    if _SIZE_RE.search(text):
        mentions.add("size")
    if any(word in lowered for word, _ in _ORIENTATION_PATTERNS):
        mentions.add("orientation")
    if any(cue in lowered for cue in _LOCATION_CUES):
        mentions.add("location")
    if any(word in lowered for word in _COLOR_WORDS):
        mentions.add("color")
    return frozenset(mentions)


def _check_refined(text: str) -> Optional[DefectSpec]:
    """Attributes if the text satisfies the tuned-prompt contract, else None."""
    if not text.strip():
        return None
    try:
        spec = extract_attributes(text)
    except NoDefectFound:
        return None
    if len(attribute_mentions(text)) < 2:
        return None
    return spec


def _format_size(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else f"{value:g}"


def _unit_words(value: float, unit: SizeUnit) -> str:
    if unit is SizeUnit.MM:
        return "mm"
    return "inch" if value == 1 else "inches"


class OfflineTemplateTuner:
    """Deterministic slot-filling tuner backed by the defect library.

    Defaults for attributes the user did not state come from the library
    template of the detected defect type; prompts without any defect keyword
    fall back to a generic custom-defect sentence.
    """

    def __init__(self, library: DefectLibrary):
        self._library = library

    def _template_for(self, defect_type: DefectType) -> DefectSpec:
        for entry in self._library.defects:
            if entry.template.defect_type is defect_type:
                return entry.template
        return _CUSTOM_DEFAULTS

    def complete(self, system_prompt: str, user_prompt: str) -> CompletionResult:
        region = None
        rm = _REGION_MARKER_RE.search(user_prompt)
        if rm:
            region = rm.group(1).strip()
        text = _REGION_MARKER_RE.sub("", user_prompt).strip()

        found = _find_defect(text)
        defect_type = found[0] if found else DefectType.CUSTOM
        template = self._template_for(defect_type)

        m = _SIZE_RE.search(text)
        if m:
            size_value = float(m.group(1))
            size_unit = (
                SizeUnit.MM if m.group(2).lower().startswith(("mm", "milli")) else SizeUnit.INCH
            )
        else:
            size_value, size_unit = template.size_value, template.size_unit

        orientation = template.orientation
        lowered = text.lower()
        for word, value in _ORIENTATION_PATTERNS:
            if word in lowered:
                orientation = value
                break

        # Component: prefer the library's richer phrase when it subsumes the
        # user's wording ("rail" -> "head of the rail"), else keep the user's.
        component = template.component
        cm = _COMPONENT_RE.search(text)
        if cm:
            user_component = cm.group(1).strip()
            if user_component.lower() not in template.component.lower():
                component = user_component

        if region:
            location_phrase = f"in the {region} region of the image"
        else:
            location_phrase = f"on the {component}"

        if defect_type is DefectType.CUSTOM:
            label = text if text else "unspecified"
            noun = f'surface defect matching "{label}"'
        else:
            noun = _DEFECT_NOUNS[defect_type]

        size_words = f"{_format_size(size_value)} {_unit_words(size_value, size_unit)}"
        color = template.color_notes or "no distinctive discoloration"
        if orientation is Orientation.UNSPECIFIED:
            refined = (
                f"A {noun}, approximately {size_words} wide, "
                f"located {location_phrase}, with {color}."
            )
        else:
            refined = (
                f"A {orientation.value} {noun}, approximately {size_words} long, "
                f"located {location_phrase}, with {color}."
            )
        return CompletionResult(
            text=refined,
            prompt_tokens=count_tokens(system_prompt) + count_tokens(user_prompt),
            completion_tokens=count_tokens(refined),
        )


class RemoteChatTuner:
    """Chat-completion client: POST {messages} -> {choices, usage}.

    One retry on transport error or 5xx; none on 4xx.  Timeouts surface as
    BackendUnavailable.
    """

    def __init__(
        self,
        base_url: str,
        model: Optional[str] = None,
        auth_token: Optional[str] = None,
        timeout_s: float = 30.0,
        max_in_flight: int = 4,
    ):
        self.base_url = base_url
        self.model = model
        self._headers = {"Authorization": f"Bearer {auth_token}"} if auth_token else {}
        self._client = httpx.Client(timeout=timeout_s)
        self._sem = threading.BoundedSemaphore(max_in_flight)

    def complete(self, system_prompt: str, user_prompt: str) -> CompletionResult:
        body = {
            "messages": [
                {"role": "system", "content": system_prompt},
                {"role": "user", "content": user_prompt},
            ]
        }
        if self.model:
            body["model"] = self.model
        last_error: Exception | None = None
        with self._sem:
            for _ in range(2):
                try:
                    resp = self._client.post(self.base_url, json=body, headers=self._headers)
                except httpx.HTTPError as exc:
                    last_error = exc
                    continue
                if 400 <= resp.status_code < 500:
                    raise BackendUnavailable(f"tuner rejected request: HTTP {resp.status_code}")
                if resp.status_code >= 500:
                    last_error = BackendUnavailable(f"tuner HTTP {resp.status_code}")
                    continue
                try:
                    payload = resp.json()
                    text = payload["choices"][0]["message"]["content"]
                    usage = payload.get("usage", {})
                except (KeyError, IndexError, TypeError, ValueError) as exc:
                    raise BackendUnavailable(f"malformed tuner response: {exc}") from exc
                return CompletionResult(
                    text=text,
                    prompt_tokens=int(usage.get("prompt_tokens", 0)),
                    completion_tokens=int(usage.get("completion_tokens", 0)),
                )
        raise BackendUnavailable(f"tuner unreachable after retry: {last_error}")


def _original_prompt(request: ScenarioRequest, library: DefectLibrary) -> str:
    if isinstance(request, LibrarySelect):
        material, _, fragment = lookup_defect(library, request.material_id, request.defect_id)
        return fragment.format(material=material.display_name)
    if isinstance(request, CreativePrompt):
        return request.text
    if isinstance(request, ImageInpaint):
        return request.instruction
    raise TypeError(f"not a scenario request: {type(request).__name__}")


def tune_prompt(
    request: ScenarioRequest, library: DefectLibrary, backend: TunerBackend
) -> TunedPrompt:
    """Refine a validated request into a fine-grained defect prompt.

    For library selections the original prompt is the rendered library
    fragment; for inpaint requests the instruction is tuned (the image is
    untouched) and a painted mask is verbalized as a 3x3-grid region hint
    for the backend.

    Raises:
        UntunablePrompt: backend output failed the contract after one retry.
        BackendUnavailable: propagated from the backend.
    """
    original = _original_prompt(request, library)
    user_prompt = original
    if isinstance(request, ImageInpaint) and request.mask is not None:
        box = mask_bbox(request.mask)
        if box is not None:
            user_prompt = f"{original} (region: {region_name(box)})"

    for _ in range(2):
        result = backend.complete(SYSTEM_PROMPT, user_prompt)
        spec = _check_refined(result.text)
        if spec is not None:
            return TunedPrompt(
                original=original,
                refined_text=result.text,
                attributes=spec,
                prompt_tokens=result.prompt_tokens,
                completion_tokens=result.completion_tokens,
            )
    raise UntunablePrompt(f"backend could not produce a valid refinement for {original!r}")
