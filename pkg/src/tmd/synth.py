"""Seeded procedural defect-texture synthesis.

This is the offline stand-in for remote image models: a pure function of
(prompt, width, height, seed).  Effects are keyed on defect keywords found
in the prompt:

* ``crack``  -> dark random-walk polyline (plus a short branch) over the base
  material field
* ``rust`` / ``decay`` -> low-frequency value-noise blotches in an oxide
  palette
* ``wear``   -> directional streaking with a polished sheen
* anything else -> base material field only

All tunable constants live in the tables below.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["render_texture", "value_noise", "fbm", "find_effects", "find_material"]


# Base material colors (RGB) selected by material keywords in the prompt.
BASE_PALETTES: dict[str, tuple[int, int, int]] = {
    "steel": (128, 130, 134),
    "wood": (133, 98, 62),
    "painted_metal": (112, 76, 64),
}

# Keyword -> material palette key; first match wins, default is steel.
MATERIAL_KEYWORDS: tuple[tuple[str, str], ...] = (
    ("sleeper", "wood"),
    ("timber", "wood"),
    ("wood", "wood"),
    ("freight", "painted_metal"),
    ("panel", "painted_metal"),
    ("wagon", "painted_metal"),
)

# Defect keyword stems -> effect key.
EFFECT_KEYWORDS: tuple[tuple[str, str], ...] = (
    ("crack", "crack"),
    ("rust", "rust"),
    ("corro", "rust"),
    ("decay", "decay"),
    ("rot", "decay"),
    ("wear", "wear"),
    ("worn", "wear"),
)

# Effect constants.
BASE_FBM_OCTAVES = 4
BASE_CELL_DIVISOR = 5.0          # coarsest noise cell = min(w, h) / divisor
BASE_SHADE_SPAN = 0.30           # base field luminance modulation +/- span/2
CRACK_COLOR = (20, 16, 14)
CRACK_JITTER = 2                 # max per-step lateral deviation, pixels
CRACK_RADIUS_DIVISOR = 160       # stamp radius = max(1, min(w, h) // divisor)
RUST_COLORS = ((151, 84, 42), (96, 52, 30))
RUST_THRESHOLD = 0.55
RUST_SOFTNESS = 0.12
DECAY_COLORS = ((72, 60, 48), (46, 38, 32))
DECAY_THRESHOLD = 0.50
DECAY_SOFTNESS = 0.15
WEAR_SHEEN = (202, 204, 208)
WEAR_DEPTH = 0.45                # max sheen blend factor


def _fade(t: np.ndarray) -> np.ndarray:
    """Smoothstep-style interpolation curve 6t^5 - 15t^4 + 10t^3."""
    return t * t * t * (t * (t * 6 - 15) + 10)


def value_noise(
    height: int,
    width: int,
    cell_y: float,
    cell_x: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Smoothly interpolated lattice noise.

    Args:
        height: Output height in pixels.
        width: Output width in pixels.
        cell_y: Lattice cell size along y (larger = smoother).
        cell_x: Lattice cell size along x.
        rng: Seeded generator; consumed deterministically.

    Returns:
        Array of shape (height, width), values in [0, 1].
    """
    cell_y = max(float(cell_y), 1.0)
    cell_x = max(float(cell_x), 1.0)
    gh = int(np.ceil(height / cell_y)) + 2
    gw = int(np.ceil(width / cell_x)) + 2
    grid = rng.random((gh, gw))

    ys = np.arange(height, dtype=np.float64) / cell_y
    xs = np.arange(width, dtype=np.float64) / cell_x
    yi = np.floor(ys).astype(np.intp)
    xi = np.floor(xs).astype(np.intp)
    fy = _fade(ys - yi)[:, None]
    fx = _fade(xs - xi)[None, :]

    v00 = grid[yi[:, None], xi[None, :]]
    v01 = grid[yi[:, None], xi[None, :] + 1]
    v10 = grid[yi[:, None] + 1, xi[None, :]]
    v11 = grid[yi[:, None] + 1, xi[None, :] + 1]

    top = v00 + fx * (v01 - v00)
    bot = v10 + fx * (v11 - v10)
    return top + fy * (bot - top)


def fbm(
    height: int,
    width: int,
    base_cell: float,
    octaves: int,
    rng: np.random.Generator,
    persistence: float = 0.5,
) -> np.ndarray:
    """Fractal sum of value-noise octaves, normalized to [0, 1]."""
    total = np.zeros((height, width), dtype=np.float64)
    amplitude = 1.0
    norm = 0.0
    cell = float(base_cell)
    for _ in range(octaves):
        total += amplitude * value_noise(height, width, cell, cell, rng)
        norm += amplitude
        amplitude *= persistence
        cell /= 2.0
    return total / norm


def find_material(prompt: str) -> str:
    """Palette key for the base material suggested by the prompt."""
    lowered = prompt.lower()
    for keyword, palette in MATERIAL_KEYWORDS:
        if keyword in lowered:
            return palette
    return "steel"


def find_effects(prompt: str) -> tuple[str, ...]:
    """Ordered, deduplicated effect keys triggered by the prompt."""
    lowered = prompt.lower()
    found: list[str] = []
    for stem, effect in EFFECT_KEYWORDS:
        if stem in lowered and effect not in found:
            found.append(effect)
    return tuple(found)


def _rng_for(prompt: str, width: int, height: int, seed: int) -> np.random.Generator:
    digest = zlib.crc32(prompt.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([seed, digest, width, height]))


def _base_field(
    height: int, width: int, palette: str, rng: np.random.Generator
) -> np.ndarray:
    base = np.array(BASE_PALETTES[palette], dtype=np.float64)
    cell = min(width, height) / BASE_CELL_DIVISOR
    shade = fbm(height, width, cell, BASE_FBM_OCTAVES, rng)
    factor = (1.0 - BASE_SHADE_SPAN / 2.0) + BASE_SHADE_SPAN * shade
    return factor[:, :, None] * base[None, None, :]


def _disk_offsets(radius: int) -> tuple[np.ndarray, np.ndarray]:
    span = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(span, span, indexing="ij")
    keep = dy * dy + dx * dx <= radius * radius
    return dy[keep], dx[keep]


def _stamp(img: np.ndarray, ys: np.ndarray, xs: np.ndarray, radius: int, color) -> None:
    """Paint disks of ``radius`` at the given centers, clipped to the image."""
    dy, dx = _disk_offsets(radius)
    all_y = np.clip(ys[:, None] + dy[None, :], 0, img.shape[0] - 1).ravel()
    all_x = np.clip(xs[:, None] + dx[None, :], 0, img.shape[1] - 1).ravel()
    img[all_y, all_x] = np.array(color, dtype=np.float64)


def _apply_crack(img: np.ndarray, rng: np.random.Generator) -> None:
    h, w = img.shape[:2]
    radius = max(1, min(w, h) // CRACK_RADIUS_DIVISOR)

    # Main crack: edge-to-edge random walk down the image.
    rows = np.arange(h)
    start = rng.integers(w // 4, max(w // 4 + 1, 3 * w // 4))
    steps = rng.integers(-CRACK_JITTER, CRACK_JITTER + 1, size=h)
    cols = np.clip(start + np.cumsum(steps), 0, w - 1)
    _stamp(img, rows, cols, radius, CRACK_COLOR)

    # Short diagonal branch from a point on the main crack.
    branch_len = max(2, h // 3)
    pivot = int(rng.integers(h // 4, max(h // 4 + 1, 3 * h // 4)))
    direction = 1 if rng.random() < 0.5 else -1
    b_rows = np.clip(pivot + np.arange(branch_len), 0, h - 1)
    b_steps = direction * (1 + rng.integers(0, CRACK_JITTER + 1, size=branch_len))
    b_cols = np.clip(cols[pivot] + np.cumsum(b_steps), 0, w - 1)
    _stamp(img, b_rows, b_cols, radius, CRACK_COLOR)


def _blotches(
    img: np.ndarray,
    rng: np.random.Generator,
    colors: tuple[tuple[int, int, int], tuple[int, int, int]],
    threshold: float,
    softness: float,
) -> None:
    h, w = img.shape[:2]
    cell = min(w, h) / 4.0
    coverage = fbm(h, w, cell, 3, rng)
    blend = np.clip((coverage - threshold) / softness, 0.0, 1.0)
    tone = value_noise(h, w, cell / 2, cell / 2, rng)
    a = np.array(colors[0], dtype=np.float64)
    b = np.array(colors[1], dtype=np.float64)
    oxide = a[None, None, :] + tone[:, :, None] * (b - a)[None, None, :]
    img[:] = img * (1.0 - blend[:, :, None]) + oxide * blend[:, :, None]


def _apply_wear(img: np.ndarray, rng: np.random.Generator, prompt: str) -> None:
    h, w = img.shape[:2]
    lowered = prompt.lower()
    if "transverse" in lowered:
        axis = "x"
    elif "diagonal" in lowered:
        axis = "d"
    else:
        axis = "y"  # longitudinal streaks by default

    n = w if axis in ("x", "d") else h
    cell = max(2.0, n / 24.0)
    profile = value_noise(1, n, 1.0, cell, rng)[0]

    if axis == "y":
        # Profile varies by row: horizontal streaks along the rail direction.
        depth = np.broadcast_to(profile[:, None], (h, w)) * WEAR_DEPTH
    else:
        depth = np.broadcast_to(profile[None, :], (h, w)).copy()
        if axis == "d":
            for row in range(h):  # shear vertical bands into 45-degree streaks
                depth[row] = np.roll(depth[row], row)
        depth = depth * WEAR_DEPTH

    sheen = np.array(WEAR_SHEEN, dtype=np.float64)
    img[:] = img * (1.0 - depth[:, :, None]) + sheen[None, None, :] * depth[:, :, None]


def render_texture(prompt: str, width: int, height: int, seed: int) -> np.ndarray:
    """Synthesize an RGBA defect texture for ``prompt``.

    Pure and deterministic: equal (prompt, width, height, seed) give
    byte-equal rasters.

    Returns:
        uint8 array of shape (height, width, 4) with opaque alpha.
    """
    if width <= 0 or height <= 0:
        raise ValueError("width and height must be positive")
    rng = _rng_for(prompt, width, height, seed)
    img = _base_field(height, width, find_material(prompt), rng)

    effects = find_effects(prompt)
    if "rust" in effects:
        _blotches(img, rng, RUST_COLORS, RUST_THRESHOLD, RUST_SOFTNESS)
    if "decay" in effects:
        _blotches(img, rng, DECAY_COLORS, DECAY_THRESHOLD, DECAY_SOFTNESS)
    if "wear" in effects:
        _apply_wear(img, rng, prompt)
    if "crack" in effects:
        _apply_crack(img, rng)

    rgba = np.empty((height, width, 4), dtype=np.uint8)
    rgba[:, :, :3] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    rgba[:, :, 3] = 255
    return rgba
