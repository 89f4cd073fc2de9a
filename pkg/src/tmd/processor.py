"""Post-processing: standardize raw generations into 3D-ready textures.

A "3D-ready" texture here is a square power-of-two sRGB PNG (RGBA, 8-bit per
channel) with full provenance embedded as JSON in a ``tmdf`` text chunk.
Non-square inputs are center-cropped to the largest centered square, then
scaled with the pinned bilinear kernel below; crop offsets round down on odd
remainders.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError
from PIL.PngImagePlugin import PngInfo

from .errors import TmdError
from .model import Provenance, TextureArtifact

__all__ = [
    "StandardizationTarget",
    "center_crop_rect",
    "resize_bilinear",
    "standardize",
    "standardize_pixels",
    "composite_inpaint",
    "encode_artifact",
    "decode_artifact",
    "decode_png",
    "encode_png",
    "EmptyImage",
    "DimensionMismatch",
    "CorruptFile",
]

ALLOWED_SIZES = (256, 512, 1024)
PROVENANCE_CHUNK_KEY = "tmdf"

# sRGB chunk payload: rendering intent 0 (perceptual).
_SRGB_CHUNK = (b"sRGB", b"\x00")


class EmptyImage(TmdError):
    code = "EmptyImage"


class DimensionMismatch(TmdError):
    code = "DimensionMismatch"


class CorruptFile(TmdError):
    code = "CorruptFile"


@dataclass(frozen=True)
class StandardizationTarget:
    """Square power-of-two output spec; format and color space are fixed."""

    size: int = 512
    format: str = "png"
    color_space: str = "srgb"

    def __post_init__(self):
        if self.size not in ALLOWED_SIZES:
            raise ValueError(f"size must be one of {ALLOWED_SIZES}, got {self.size}")
        if self.format != "png" or self.color_space != "srgb":
            raise ValueError("only sRGB PNG output is supported")


def center_crop_rect(width: int, height: int) -> tuple[int, int, int, int]:
    """Largest centered square of a width x height image as (x0, y0, x1, y1).

    A 640x480 input yields (80, 0, 560, 480).
    """
    side = min(width, height)
    x0 = (width - side) // 2
    y0 = (height - side) // 2
    return (x0, y0, x0 + side, y0 + side)


def resize_bilinear(img: np.ndarray, out_width: int, out_height: int) -> np.ndarray:
    """Bilinear resample with half-pixel-centered sampling.

    The pinned kernel: destination pixel (i, j) samples the source at
    ``((j + 0.5) * w_in / w_out - 0.5, (i + 0.5) * h_in / h_out - 0.5)``,
    clamped to the source extent, interpolating the four neighbors in
    float64 and rounding half-to-even back to uint8.  Resampling to the
    source size reproduces it exactly.

    Args:
        img: uint8 array of shape (H, W) or (H, W, C).
        out_width: Target width, > 0.
        out_height: Target height, > 0.

    Returns:
        uint8 array of shape (out_height, out_width[, C]).
    """
    if out_width <= 0 or out_height <= 0:
        raise ValueError("output dimensions must be positive")
    h, w = img.shape[:2]
    if h == 0 or w == 0:
        raise EmptyImage("cannot resize an empty image")

    sx = np.clip((np.arange(out_width, dtype=np.float64) + 0.5) * (w / out_width) - 0.5, 0, w - 1)
    sy = np.clip((np.arange(out_height, dtype=np.float64) + 0.5) * (h / out_height) - 0.5, 0, h - 1)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0

    data = img.astype(np.float64)
    if data.ndim == 2:
        data = data[:, :, None]
    wx0 = (1.0 - fx)[None, :, None]
    wx1 = fx[None, :, None]
    wy0 = (1.0 - fy)[:, None, None]
    wy1 = fy[:, None, None]

    top = data[y0[:, None], x0[None, :]] * wx0 + data[y0[:, None], x1[None, :]] * wx1
    bot = data[y1[:, None], x0[None, :]] * wx0 + data[y1[:, None], x1[None, :]] * wx1
    out = top * wy0 + bot * wy1
    out = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    if img.ndim == 2:
        out = out[:, :, 0]
    return out


def standardize_pixels(raw: np.ndarray, target: StandardizationTarget) -> np.ndarray:
    """Center-crop to square and scale to the target size.

    Idempotent at a fixed target: a second pass over the output leaves the
    pixels unchanged.  A fully opaque input stays fully opaque.

    Raises:
        EmptyImage: zero-area input.
    """
    if raw.size == 0 or raw.shape[0] == 0 or raw.shape[1] == 0:
        raise EmptyImage("cannot standardize an empty image")
    if raw.ndim != 3 or raw.shape[2] != 4 or raw.dtype != np.uint8:
        raise ValueError("raw must be an RGBA uint8 raster of shape (H, W, 4)")

    h, w = raw.shape[:2]
    x0, y0, x1, y1 = center_crop_rect(w, h)
    square = raw[y0:y1, x0:x1]
    if square.shape[0] != target.size:
        square = resize_bilinear(square, target.size, target.size)
    return np.ascontiguousarray(square)


def standardize(
    raw: np.ndarray, target: StandardizationTarget, provenance: Provenance
) -> TextureArtifact:
    """``standardize_pixels`` wrapped into a provenance-carrying artifact."""
    return TextureArtifact(pixels=standardize_pixels(raw, target), provenance=provenance)


def composite_inpaint(base: np.ndarray, mask: np.ndarray, patch: np.ndarray) -> np.ndarray:
    """Per-pixel selection: patch where mask is 1, base elsewhere, exact.

    Raises:
        DimensionMismatch: mask or patch dims differ from base.
    """
    if mask.shape != base.shape[:2]:
        raise DimensionMismatch(f"mask dims {mask.shape} != base dims {base.shape[:2]}")
    if patch.shape != base.shape:
        raise DimensionMismatch(f"patch shape {patch.shape} != base shape {base.shape}")
    return np.where(mask[:, :, None] != 0, patch, base)


def encode_png(pixels: np.ndarray, text_chunks: dict[str, str] | None = None) -> bytes:
    """Encode an RGBA raster as a PNG with an sRGB chunk and text chunks."""
    info = PngInfo()
    info.add(*_SRGB_CHUNK)
    for key, value in (text_chunks or {}).items():
        info.add_text(key, value)
    buf = io.BytesIO()
    Image.fromarray(pixels, "RGBA").save(buf, format="PNG", pnginfo=info)
    return buf.getvalue()


def decode_png(data: bytes) -> tuple[np.ndarray, dict[str, str]]:
    """Decode PNG bytes to an RGBA raster and its text chunks.

    Raises:
        CorruptFile: truncated or non-PNG input.
    """
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
        text = {k: str(v) for k, v in getattr(img, "text", {}).items()}
        pixels = np.asarray(img.convert("RGBA"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError, SyntaxError, ValueError) as exc:
        raise CorruptFile(f"cannot decode PNG: {exc}") from exc
    return pixels, text


def encode_artifact(artifact: TextureArtifact) -> bytes:
    """Serialize an artifact to PNG bytes with embedded provenance."""
    provenance_json = json.dumps(artifact.provenance.to_dict(), sort_keys=True)
    return encode_png(artifact.pixels, {PROVENANCE_CHUNK_KEY: provenance_json})


def decode_artifact(data: bytes) -> TextureArtifact:
    """Reconstruct an artifact from PNG bytes; lossless on pixels.

    Raises:
        CorruptFile: undecodable bytes, or missing/invalid provenance chunk.
    """
    pixels, text = decode_png(data)
    if PROVENANCE_CHUNK_KEY not in text:
        raise CorruptFile(f"missing {PROVENANCE_CHUNK_KEY!r} provenance chunk")
    try:
        provenance = Provenance.from_dict(json.loads(text[PROVENANCE_CHUNK_KEY]))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"invalid provenance chunk: {exc}") from exc
    return TextureArtifact(pixels=pixels, provenance=provenance)
