"""Domain types: validation, the defect library, and provenance."""

import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tmd.metering import MeterRecord
from tmd.model import (
    BBox,
    CreativePrompt,
    DefectSpec,
    DefectType,
    EmptyPrompt,
    ImageInpaint,
    LibrarySelect,
    MaskMismatch,
    MissingImage,
    Orientation,
    Provenance,
    ScenarioKind,
    SizeUnit,
    TextureArtifact,
    UnknownDefect,
    UnknownMaterial,
    default_library,
    load_library,
    lookup_defect,
    mask_bbox,
    region_name,
    scenario_kind,
    validate_request,
)


def _image(h=8, w=8):
    px = np.zeros((h, w, 4), dtype=np.uint8)
    px[:, :, 3] = 255
    return px


# --- DefectSpec ------------------------------------------------------------


def test_defect_spec_valid_minimal():
    spec = DefectSpec(defect_type=DefectType.CRACK, component="rail head",
                      size_value=2.0, size_unit=SizeUnit.INCH,
                      orientation=Orientation.TRANSVERSE)
    assert spec.defect_name == "crack"


def test_defect_spec_rejects_nonpositive_size():
    with pytest.raises(ValueError):
        DefectSpec(defect_type=DefectType.RUST, component="web",
                   size_value=0.0, size_unit=SizeUnit.MM)


def test_defect_spec_custom_requires_label():
    with pytest.raises(ValueError):
        DefectSpec(defect_type=DefectType.CUSTOM, component="rail",
                   size_value=1.0, size_unit=SizeUnit.INCH)
    spec = DefectSpec(defect_type=DefectType.CUSTOM, component="rail",
                      size_value=1.0, size_unit=SizeUnit.INCH,
                      custom_label="strange blemish")
    assert spec.defect_name == "strange blemish"


def test_defect_spec_noncustom_ignores_label():
    spec = DefectSpec(defect_type=DefectType.CRACK, component="rail",
                      size_value=1.0, size_unit=SizeUnit.INCH,
                      custom_label="stray")
    assert spec.defect_name == "crack"


@pytest.mark.parametrize("box", [(-0.1, 0, 1, 1), (0, 0, 1.2, 1), (0.5, 0, 0.5, 1), (0, 0.8, 1, 0.2)])
def test_bbox_rejects_bad_ranges(box):
    with pytest.raises(ValueError):
        BBox(*box)


def test_defect_spec_round_trip():
    spec = DefectSpec(defect_type=DefectType.WEAR, component="running surface",
                      size_value=12.0, size_unit=SizeUnit.INCH,
                      orientation=Orientation.LONGITUDINAL,
                      location=BBox(0.1, 0.2, 0.9, 0.8),
                      color_notes="polished sheen")
    assert DefectSpec.from_dict(spec.to_dict()) == spec


# --- region naming ---------------------------------------------------------


@pytest.mark.parametrize(
    "box,name",
    [
        (BBox(0.0, 0.0, 1.0, 1.0), "center"),
        (BBox(0.0, 0.0, 0.2, 0.2), "top-left"),
        (BBox(0.8, 0.8, 1.0, 1.0), "bottom-right"),
        (BBox(0.4, 0.0, 0.6, 0.2), "top-center"),
        (BBox(0.0, 0.4, 0.2, 0.6), "middle-left"),
    ],
)
def test_region_name_grid(box, name):
    assert region_name(box) == name


def test_mask_bbox_empty_and_single():
    assert mask_bbox(np.zeros((10, 10), dtype=np.uint8)) is None
    mask = np.zeros((10, 10), dtype=np.uint8)
    mask[3, 7] = 1
    box = mask_bbox(mask)
    assert box is not None
    assert box.x0 <= 0.7 <= box.x1 and box.y0 <= 0.3 <= box.y1


@given(st.integers(0, 15), st.integers(0, 15), st.integers(1, 8), st.integers(1, 8))
def test_mask_bbox_matches_loop_oracle(y0, x0, h, w):
    mask = np.zeros((24, 24), dtype=np.uint8)
    mask[y0 : y0 + h, x0 : x0 + w] = 1
    box = mask_bbox(mask)
    ys, xs = np.nonzero(mask)
    assert box == BBox(
        x0=xs.min() / 24, y0=ys.min() / 24, x1=(xs.max() + 1) / 24, y1=(ys.max() + 1) / 24
    )


# --- validate_request ------------------------------------------------------


def test_validate_paper_prompt_is_valid():
    req = CreativePrompt(request_id="r1", text="crack on the rail")
    assert validate_request(req) is req


def test_validate_empty_prompt():
    with pytest.raises(EmptyPrompt):
        validate_request(CreativePrompt(request_id="r1", text=""))
    with pytest.raises(EmptyPrompt):
        validate_request(CreativePrompt(request_id="r1", text="   \t"))


def test_validate_blank_library_ids():
    with pytest.raises(EmptyPrompt):
        validate_request(LibrarySelect(request_id="r", material_id="", defect_id="crack"))


def test_validate_inpaint_mask_dim_mismatch():
    req = ImageInpaint(request_id="r", image=_image(256, 256),
                       instruction="fix", mask=np.zeros((128, 128), dtype=np.uint8))
    with pytest.raises(MaskMismatch):
        validate_request(req)


def test_validate_inpaint_nonbinary_mask():
    mask = np.zeros((8, 8), dtype=np.uint8)
    mask[0, 0] = 2
    with pytest.raises(MaskMismatch):
        validate_request(ImageInpaint(request_id="r", image=_image(), instruction="x", mask=mask))


def test_validate_inpaint_missing_image():
    with pytest.raises(MissingImage):
        validate_request(ImageInpaint(request_id="r", image=None, instruction="x"))
    with pytest.raises(MissingImage):
        validate_request(
            ImageInpaint(request_id="r", image=np.zeros((0, 4, 4), dtype=np.uint8),
                         instruction="x")
        )


def test_validate_is_idempotent():
    req = ImageInpaint(request_id="r", image=_image(),
                       instruction="add rust", mask=np.ones((8, 8), dtype=np.uint8))
    assert validate_request(validate_request(req)) is req


def test_scenario_kind_tags():
    assert scenario_kind(CreativePrompt(request_id="", text="x")) is ScenarioKind.PROMPT
    assert scenario_kind(LibrarySelect(request_id="", material_id="a", defect_id="b")) \
        is ScenarioKind.LIBRARY
    assert scenario_kind(ImageInpaint(request_id="", image=_image(), instruction="x")) \
        is ScenarioKind.INPAINT


# --- defect library --------------------------------------------------------


def test_fixture_library_shape():
    lib = default_library()
    assert len(lib.materials) >= 4
    assert len(lib.defects) >= 5
    defect_ids = {d.defect_id for d in lib.defects}
    assert {"crack", "rust", "wear", "decay", "squat"} <= defect_ids


def test_lookup_crack_template():
    lib = default_library()
    material, template, fragment = lookup_defect(lib, "rail_head", "crack")
    assert material.display_name == "rail"
    assert template.defect_type is DefectType.CRACK
    assert template.orientation is Orientation.TRANSVERSE
    assert template.size_value == 2.0 and template.size_unit is SizeUnit.INCH
    assert fragment.format(material=material.display_name) == "crack on the rail"


def test_lookup_unknown_ids():
    lib = default_library()
    with pytest.raises(UnknownDefect):
        lookup_defect(lib, "rail_head", "unicorn")
    with pytest.raises(UnknownMaterial):
        lookup_defect(lib, "marble", "crack")


def test_lookup_is_pure():
    lib = default_library()
    assert lookup_defect(lib, "sleeper", "decay") == lookup_defect(lib, "sleeper", "decay")


def test_library_file_round_trip(tmp_path):
    lib = default_library()
    path = tmp_path / "library.json"
    path.write_text(json.dumps(lib.to_dict()), encoding="utf-8")
    assert load_library(path) == lib


def test_library_rejects_duplicate_ids():
    lib = default_library()
    with pytest.raises(ValueError):
        type(lib)(version=lib.version, materials=lib.materials + (lib.materials[0],),
                  defects=lib.defects)


# --- provenance & artifact -------------------------------------------------


def _meter(request_id="r1"):
    return MeterRecord(request_id=request_id, scenario="prompt", backend_id="offline_t2i",
                       prompt_tokens=10, completion_tokens=20, wall_time_ms=120)


def test_provenance_round_trip():
    prov = Provenance(request_id="r1", scenario="prompt", backend_id="offline_t2i",
                      original_prompt="crack on the rail",
                      tuned_prompt="A transverse crack...", seed=7, meter=_meter())
    assert Provenance.from_dict(prov.to_dict()) == prov


def test_provenance_requires_populated_fields():
    with pytest.raises(ValueError):
        Provenance(request_id="", scenario="prompt", backend_id="b",
                   original_prompt="x", tuned_prompt="y", seed=0, meter=_meter())


def test_artifact_requires_power_of_two_dims():
    prov = Provenance(request_id="r", scenario="prompt", backend_id="b",
                      original_prompt="x", tuned_prompt="y", seed=0, meter=_meter())
    TextureArtifact(pixels=_image(256, 256), provenance=prov)
    with pytest.raises(ValueError):
        TextureArtifact(pixels=_image(200, 256), provenance=prov)
    with pytest.raises(ValueError):
        TextureArtifact(pixels=np.zeros((256, 256, 3), dtype=np.uint8), provenance=prov)
