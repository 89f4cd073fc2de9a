"""Shared domain types, request validation, and the defect library.

Rasters are numpy ``uint8`` arrays throughout: images are RGBA with shape
``(H, W, 4)``, masks are single-channel ``(H, W)`` with values in ``{0, 1}``.
All types here are immutable values; the defect library is loaded once and
only read thereafter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import TmdError
from .metering import MeterRecord

__all__ = [
    "DefectType",
    "SizeUnit",
    "Orientation",
    "BBox",
    "region_name",
    "mask_bbox",
    "DefectSpec",
    "LibrarySelect",
    "CreativePrompt",
    "ImageInpaint",
    "ScenarioRequest",
    "ScenarioKind",
    "scenario_kind",
    "Material",
    "DefectEntry",
    "DefectLibrary",
    "load_library",
    "default_library",
    "lookup_defect",
    "validate_request",
    "Provenance",
    "TextureArtifact",
    "MissingImage",
    "MaskMismatch",
    "EmptyPrompt",
    "UnknownMaterial",
    "UnknownDefect",
]


class MissingImage(TmdError):
    code = "MissingImage"


class MaskMismatch(TmdError):
    code = "MaskMismatch"


class EmptyPrompt(TmdError):
    code = "EmptyPrompt"


class UnknownMaterial(TmdError):
    code = "UnknownMaterial"


class UnknownDefect(TmdError):
    code = "UnknownDefect"


class DefectType(str, Enum):
    CRACK = "crack"
    RUST = "rust"
    WEAR = "wear"
    DECAY = "decay"
    SQUAT = "squat"
    CUSTOM = "custom"


class SizeUnit(str, Enum):
    INCH = "inch"
    MM = "mm"


class Orientation(str, Enum):
    TRANSVERSE = "transverse"
    LONGITUDINAL = "longitudinal"
    DIAGONAL = "diagonal"
    UNSPECIFIED = "unspecified"


@dataclass(frozen=True)
class BBox:
    """Normalized bounding box; coordinates in [0, 1] with x0 < x1, y0 < y1."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (0.0 <= self.x0 < self.x1 <= 1.0 and 0.0 <= self.y0 < self.y1 <= 1.0):
            raise ValueError(f"invalid normalized bbox {self}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)


_ROW_NAMES = ("top", "middle", "bottom")
_COL_NAMES = ("left", "center", "right")


def region_name(box: BBox) -> str:
    """Verbal region for a bbox using a fixed 3x3 grid over its center.

    Returns e.g. ``"top-left"``; the middle cell is just ``"center"``.
    """
    cx = (box.x0 + box.x1) / 2.0
    cy = (box.y0 + box.y1) / 2.0
    col = min(2, int(cx * 3))
    row = min(2, int(cy * 3))
    if (row, col) == (1, 1):
        return "center"
    return f"{_ROW_NAMES[row]}-{_COL_NAMES[col]}"


def mask_bbox(mask: np.ndarray) -> Optional[BBox]:
    """Normalized bbox of a binary mask's nonzero region, or None if empty."""
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return None
    h, w = mask.shape
    return BBox(
        x0=float(xs.min()) / w,
        y0=float(ys.min()) / h,
        x1=float(xs.max() + 1) / w,
        y1=float(ys.max() + 1) / h,
    )


@dataclass(frozen=True)
class DefectSpec:
    """Structured defect attributes exchanged between prompts and tuners."""

    defect_type: DefectType
    component: str
    size_value: float
    size_unit: SizeUnit
    orientation: Orientation = Orientation.UNSPECIFIED
    location: Optional[BBox] = None
    color_notes: Optional[str] = None
    custom_label: str = ""
    """Free-text defect name; required non-empty when defect_type is CUSTOM."""

    def __post_init__(self):
        if self.size_value <= 0:
            raise ValueError("size_value must be > 0")
        if self.defect_type is DefectType.CUSTOM and not self.custom_label.strip():
            raise ValueError("custom defect requires a non-empty custom_label")

    @property
    def defect_name(self) -> str:
        return self.custom_label if self.defect_type is DefectType.CUSTOM else self.defect_type.value

    def to_dict(self) -> dict:
        return {
            "defect_type": self.defect_type.value,
            "component": self.component,
            "size_value": self.size_value,
            "size_unit": self.size_unit.value,
            "orientation": self.orientation.value,
            "location": list(self.location.as_tuple()) if self.location else None,
            "color_notes": self.color_notes,
            "custom_label": self.custom_label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DefectSpec":
        loc = d.get("location")
        return cls(
            defect_type=DefectType(d["defect_type"]),
            component=d["component"],
            size_value=float(d["size_value"]),
            size_unit=SizeUnit(d["size_unit"]),
            orientation=Orientation(d.get("orientation", "unspecified")),
            location=BBox(*loc) if loc else None,
            color_notes=d.get("color_notes"),
            custom_label=d.get("custom_label", ""),
        )


# --- scenario requests -----------------------------------------------------


class ScenarioKind(str, Enum):
    """The three interaction modes, in the order they are usually numbered."""

    LIBRARY = "library"
    PROMPT = "prompt"
    INPAINT = "inpaint"


@dataclass(frozen=True)
class LibrarySelect:
    """Scenario 1: pick a predefined material and defect from the library."""

    request_id: str
    material_id: str
    defect_id: str
    seed: Optional[int] = None


@dataclass(frozen=True)
class CreativePrompt:
    """Scenario 2: free-text prompt describing the desired texture."""

    request_id: str
    text: str
    seed: Optional[int] = None


@dataclass(frozen=True, eq=False)
class ImageInpaint:
    """Scenario 3: user photo plus an instruction, optionally masked."""

    request_id: str
    image: Optional[np.ndarray]
    instruction: str
    mask: Optional[np.ndarray] = None
    seed: Optional[int] = None


ScenarioRequest = Union[LibrarySelect, CreativePrompt, ImageInpaint]


def scenario_kind(request: ScenarioRequest) -> ScenarioKind:
    if isinstance(request, LibrarySelect):
        return ScenarioKind.LIBRARY
    if isinstance(request, CreativePrompt):
        return ScenarioKind.PROMPT
    if isinstance(request, ImageInpaint):
        return ScenarioKind.INPAINT
    raise TypeError(f"not a scenario request: {type(request).__name__}")


def validate_request(request: ScenarioRequest) -> ScenarioRequest:
    """Check all type invariants; returns the request unchanged on success.

    Idempotent: validating an already-validated request succeeds and returns
    the same value.

    Raises:
        EmptyPrompt: blank prompt or inpaint instruction, or blank library ids.
        MissingImage: inpaint request without a usable image.
        MaskMismatch: mask shape differs from image or values outside {0, 1}.
    """
    if isinstance(request, LibrarySelect):
        if not request.material_id.strip() or not request.defect_id.strip():
            raise EmptyPrompt("material_id and defect_id must be non-empty")
    elif isinstance(request, CreativePrompt):
        if not request.text.strip():
            raise EmptyPrompt("prompt text must be non-empty")
    elif isinstance(request, ImageInpaint):
        if not request.instruction.strip():
            raise EmptyPrompt("inpaint instruction must be non-empty")
        img = request.image
        if img is None or img.size == 0 or img.shape[0] == 0 or img.shape[1] == 0:
            raise MissingImage("inpaint request requires an image with width>0 and height>0")
        if img.ndim != 3 or img.shape[2] != 4 or img.dtype != np.uint8:
            raise MissingImage("image must be an RGBA uint8 raster of shape (H, W, 4)")
        if request.mask is not None:
            mask = request.mask
            if mask.shape != img.shape[:2]:
                raise MaskMismatch(
                    f"mask dims {mask.shape[::-1]} != image dims {img.shape[:2][::-1]}"
                )
            if mask.size and not np.isin(mask, (0, 1)).all():
                raise MaskMismatch("mask pixels must be in {0, 1}")
    else:
        raise TypeError(f"not a scenario request: {type(request).__name__}")
    if request.seed is not None and request.seed < 0:
        raise ValueError("seed must be an unsigned integer")
    return request


# --- defect library --------------------------------------------------------


@dataclass(frozen=True)
class Material:
    material_id: str
    display_name: str
    base_texture_ref: str


@dataclass(frozen=True)
class DefectEntry:
    defect_id: str
    template: DefectSpec
    prompt_fragment: str
    """Short prompt with a ``{material}`` slot, e.g. ``"crack on the {material}"``."""


@dataclass(frozen=True)
class DefectLibrary:
    materials: tuple[Material, ...]
    defects: tuple[DefectEntry, ...]
    version: str = "1"

    def __post_init__(self):
        mat_ids = [m.material_id for m in self.materials]
        if len(set(mat_ids)) != len(mat_ids):
            raise ValueError("duplicate material_id in library")
        def_ids = [d.defect_id for d in self.defects]
        if len(set(def_ids)) != len(def_ids):
            raise ValueError("duplicate defect_id in library")

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "materials": [
                {
                    "material_id": m.material_id,
                    "display_name": m.display_name,
                    "base_texture_ref": m.base_texture_ref,
                }
                for m in self.materials
            ],
            "defects": [
                {
                    "defect_id": d.defect_id,
                    "template": d.template.to_dict(),
                    "prompt_fragment": d.prompt_fragment,
                }
                for d in self.defects
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DefectLibrary":
        return cls(
            version=str(d.get("version", "1")),
            materials=tuple(
                Material(
                    material_id=m["material_id"],
                    display_name=m["display_name"],
                    base_texture_ref=m["base_texture_ref"],
                )
                for m in d["materials"]
            ),
            defects=tuple(
                DefectEntry(
                    defect_id=e["defect_id"],
                    template=DefectSpec.from_dict(e["template"]),
                    prompt_fragment=e["prompt_fragment"],
                )
                for e in d["defects"]
            ),
        )


def load_library(path: str | Path) -> DefectLibrary:
    with open(path, "r", encoding="utf-8") as fh:
        return DefectLibrary.from_dict(json.load(fh))


def default_library() -> DefectLibrary:
    """The fixture library shipped with the package."""
    text = resources.files("tmd.data").joinpath("defect_library.json").read_text("utf-8")
    return DefectLibrary.from_dict(json.loads(text))


def lookup_defect(
    library: DefectLibrary, material_id: str, defect_id: str
) -> tuple[Material, DefectSpec, str]:
    """Resolve a (material, defect) pair; pure function of its inputs.

    Raises:
        UnknownMaterial: material_id not in the library.
        UnknownDefect: defect_id not in the library.
    """
    material = next((m for m in library.materials if m.material_id == material_id), None)
    if material is None:
        raise UnknownMaterial(f"unknown material {material_id!r}")
    entry = next((d for d in library.defects if d.defect_id == defect_id), None)
    if entry is None:
        raise UnknownDefect(f"unknown defect {defect_id!r}")
    return material, entry.template, entry.prompt_fragment


# --- texture artifact ------------------------------------------------------


@dataclass(frozen=True)
class Provenance:
    """Full generation provenance embedded in every texture artifact."""

    request_id: str
    scenario: str
    backend_id: str
    original_prompt: str
    tuned_prompt: str
    seed: int
    meter: MeterRecord

    def __post_init__(self):
        for name in ("request_id", "scenario", "backend_id", "original_prompt", "tuned_prompt"):
            if not getattr(self, name):
                raise ValueError(f"provenance field {name} must be populated")

    def to_dict(self) -> dict:
        return {
            "request_id": self.request_id,
            "scenario": self.scenario,
            "backend_id": self.backend_id,
            "original_prompt": self.original_prompt,
            "tuned_prompt": self.tuned_prompt,
            "seed": self.seed,
            "meter": self.meter.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Provenance":
        return cls(
            request_id=d["request_id"],
            scenario=d["scenario"],
            backend_id=d["backend_id"],
            original_prompt=d["original_prompt"],
            tuned_prompt=d["tuned_prompt"],
            seed=int(d["seed"]),
            meter=MeterRecord.from_dict(d["meter"]),
        )


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True, eq=False)
class TextureArtifact:
    """Standardized texture: square power-of-two RGBA raster plus provenance."""

    pixels: np.ndarray
    provenance: Provenance
    format: str = "png"

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 4 or px.dtype != np.uint8:
            raise ValueError("pixels must be an RGBA uint8 raster of shape (H, W, 4)")
        h, w = px.shape[:2]
        if not (_is_power_of_two(w) and _is_power_of_two(h)):
            raise ValueError(f"artifact dimensions must be powers of two, got {w}x{h}")
        if self.format != "png":
            raise ValueError("only png artifacts are supported")

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])
