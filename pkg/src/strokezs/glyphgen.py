"""Deterministic synthetic glyph rendering.

Stroke sequences become 32x32 images: each stroke is drawn as a line
segment (two joined segments for turning strokes) placed on a reading-order
grid, rasterized with anti-aliasing, and optionally perturbed by seeded
affine jitter plus Gaussian pixel noise. All randomness is keyed by
explicit seeds so datasets regenerate byte-identically.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import records
from .lexicon import Lexicon, LexiconError, sequence_codes, validate_sequence

# glyphs occupy [MARGIN, 1-MARGIN] of the unit square
_MARGIN = 0.08
# stroke half-extent as a fraction of the cell size; > 0.5 gives the
# slight overlap between neighbouring cells
_REACH = 0.58
_BASE_THICKNESS = 1.7  # px at image_size 32

Primitive = tuple[int, tuple[tuple[float, float], ...]]


@dataclass(frozen=True)
class GlyphSpec:
    """Planned stroke primitives in unit-square coordinates."""

    primitives: tuple[Primitive, ...]


@dataclass(frozen=True)
class RenderConfig:
    image_size: int = 32
    channels: int = 3
    jitter_translate: float = 0.04  # fraction of image size
    jitter_rotate: float = 0.10  # radians
    jitter_thickness: float = 0.5  # pixels
    noise_std: float = 0.05  # intensity units on the [-1,1] scale
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 16:
            raise ValueError("image_size must be >= 16")
        if self.channels != 3:
            raise ValueError("channels is fixed at 3")
        for name in ("jitter_translate", "jitter_rotate", "jitter_thickness", "noise_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def without_jitter(self) -> "RenderConfig":
        return replace(
            self, jitter_translate=0.0, jitter_rotate=0.0, jitter_thickness=0.0, noise_std=0.0
        )


@dataclass
class ManifestRow:
    sample_id: str
    char_id: str
    split_tag: str
    seed: int
    path: str


@dataclass
class DatasetManifest:
    rows: list[ManifestRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)


def sample_seed(base_seed: int, char_id: str, index: int) -> int:
    """Stable per-sample seed; independent of process hash randomization."""
    digest = hashlib.blake2b(
        f"{base_seed}|{char_id}|{index}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def plan_layout(seq: str) -> GlyphSpec:
    """Place one primitive per stroke on a reading-order grid.

    Cells fill row by row, left to right within a row, so primitive centers
    are nondecreasing in (row, column). The same sequence always yields the
    same spec.
    """
    validate_sequence(seq)
    codes = sequence_codes(seq)
    t = len(codes)
    g = math.ceil(math.sqrt(t))
    span = 1.0 - 2.0 * _MARGIN
    cell = span / g
    reach = _REACH * cell

    prims: list[Primitive] = []
    for i, code in enumerate(codes):
        row, col = divmod(i, g)
        cy = _MARGIN + (row + 0.5) * cell
        cx = _MARGIN + (col + 0.5) * cell
        prims.append((code, _stroke_points(code, cx, cy, reach)))
    return GlyphSpec(tuple(prims))


def _stroke_points(code: int, cx: float, cy: float, r: float) -> tuple[tuple[float, float], ...]:
    # canonical angles: horizontal 0, vertical 90, left-falling ~120,
    # right-falling ~60 (screen coordinates, y down); turning is two
    # perpendicular segments joined at a corner
    if code == 1:
        return ((cx - r, cy), (cx + r, cy))
    if code == 2:
        return ((cx, cy - r), (cx, cy + r))
    if code == 3:
        dx, dy = r * math.cos(math.radians(60)), r * math.sin(math.radians(60))
        return ((cx + dx, cy - dy), (cx - dx, cy + dy))
    if code == 4:
        dx, dy = r * math.cos(math.radians(60)), r * math.sin(math.radians(60))
        return ((cx - dx, cy - dy), (cx + dx, cy + dy))
    if code == 5:
        k = r * 0.85
        return ((cx - k, cy - k), (cx + k, cy - k), (cx + k, cy + k))
    raise LexiconError(f"invalid stroke code {code}")


def _segment_coverage(
    px: np.ndarray, py: np.ndarray, p0, p1, half_width: float
) -> np.ndarray:
    """Anti-aliased coverage of one segment over the pixel grid."""
    x0, y0 = p0
    x1, y1 = p1
    dx, dy = x1 - x0, y1 - y0
    length2 = dx * dx + dy * dy
    if length2 < 1e-12:
        dist = np.hypot(px - x0, py - y0)
    else:
        tt = ((px - x0) * dx + (py - y0) * dy) / length2
        tt = np.clip(tt, 0.0, 1.0)
        dist = np.hypot(px - (x0 + tt * dx), py - (y0 + tt * dy))
    # 1px linear falloff at the edge
    return np.clip(half_width + 0.5 - dist, 0.0, 1.0).astype(np.float32)


def _rasterize(
    spec: GlyphSpec,
    size: int,
    thickness_px: float,
    rotate: float = 0.0,
    translate: tuple[float, float] = (0.0, 0.0),
    slant: float = 0.0,
) -> np.ndarray:
    """Ink intensity in [0,1], shape (size, size)."""
    ys, xs = np.mgrid[0:size, 0:size]
    px = xs.astype(np.float32) + 0.5
    py = ys.astype(np.float32) + 0.5

    cos_t, sin_t = math.cos(rotate), math.sin(rotate)

    def to_pixels(pt):
        x, y = pt[0] - 0.5, pt[1] - 0.5
        x, y = x * cos_t - y * sin_t, x * sin_t + y * cos_t
        x = x + slant * (-y)
        return ((x + 0.5) * size + translate[0], (y + 0.5) * size + translate[1])

    ink = np.zeros((size, size), np.float32)
    half_width = max(thickness_px, 0.3) / 2.0
    for _, pts in spec.primitives:
        pixel_pts = [to_pixels(p) for p in pts]
        for a, b in zip(pixel_pts, pixel_pts[1:]):
            np.maximum(ink, _segment_coverage(px, py, a, b, half_width), out=ink)
    return ink


def _finish(ink: np.ndarray, channels: int) -> np.ndarray:
    # dark ink on a light background, normalized to [-1, 1]
    img = (1.0 - 2.0 * ink).astype(np.float32)
    return np.repeat(img[:, :, None], channels, axis=2)


def render_glyph(spec: GlyphSpec, config: RenderConfig, sample_seed: int) -> np.ndarray:
    """Render with per-sample jitter drawn from ``(config.seed, sample_seed)``."""
    rng = np.random.default_rng([config.seed & 0xFFFFFFFFFFFFFFFF, sample_seed & 0xFFFFFFFFFFFFFFFF])
    size = config.image_size
    tx = float(rng.uniform(-1, 1)) * config.jitter_translate * size
    ty = float(rng.uniform(-1, 1)) * config.jitter_translate * size
    theta = float(rng.uniform(-1, 1)) * config.jitter_rotate
    thick = _BASE_THICKNESS * size / 32.0 + float(rng.uniform(-1, 1)) * config.jitter_thickness

    ink = _rasterize(spec, size, thick, rotate=theta, translate=(tx, ty))
    img = _finish(ink, config.channels)
    if config.noise_std > 0:
        img = img + rng.normal(0.0, config.noise_std, size=img.shape).astype(np.float32)
    return np.clip(img, -1.0, 1.0).astype(np.float32)


# two fixed clean styles standing in for two printed fonts
_SUPPORT_STYLES = {0: {"thickness": 1.6, "slant": 0.0}, 1: {"thickness": 2.4, "slant": 0.18}}


def render_support(entry, font_variant: int, config: RenderConfig) -> np.ndarray:
    """Clean, jitter-free rendering of a character in one of two fixed styles."""
    if font_variant not in _SUPPORT_STYLES:
        raise ValueError(f"font_variant must be 0 or 1, got {font_variant}")
    style = _SUPPORT_STYLES[font_variant]
    spec = plan_layout(entry.strokes)
    size = config.image_size
    ink = _rasterize(
        spec, size, style["thickness"] * size / 32.0, slant=style["slant"]
    )
    return np.clip(_finish(ink, config.channels), -1.0, 1.0).astype(np.float32)


def generate_dataset(
    lexicon: Lexicon,
    chars: list[str],
    samples_per_char: int,
    config: RenderConfig,
    out_dir: str | Path,
    split_tag: str = "all",
) -> DatasetManifest:
    """Render ``len(chars) * samples_per_char`` record files plus a manifest.

    Per-sample randomness is keyed by ``hash(config.seed, char_id, index)``
    only, so regeneration with the same arguments is byte-identical and
    order of generation never matters.
    """
    if samples_per_char < 1:
        raise ValueError("samples_per_char must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest()
    for char_id in chars:
        entry = lexicon.entry(char_id)  # raises LexiconError for unknown ids
        spec = plan_layout(entry.strokes)
        for i in range(samples_per_char):
            seed = sample_seed(config.seed, char_id, i)
            img = render_glyph(spec, config, seed)
            rel = f"{char_id}_{i:04d}.rec"
            records.write_image(out / rel, img)
            manifest.rows.append(
                ManifestRow(f"{char_id}_{i:04d}", char_id, split_tag, seed, rel)
            )
    write_manifest(manifest, out / "manifest.tsv")
    return manifest


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    lines = [
        f"{r.sample_id}\t{r.char_id}\t{r.split_tag}\t{r.seed}\t{r.path}"
        for r in manifest.rows
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_manifest(path: str | Path) -> DatasetManifest:
    manifest = DatasetManifest()
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise ValueError(f"{path} line {lineno}: expected 5 fields, got {len(fields)}")
        manifest.rows.append(
            ManifestRow(fields[0], fields[1], fields[2], int(fields[3]), fields[4])
        )
    return manifest


def load_sample(manifest_path: str | Path, row: ManifestRow) -> np.ndarray:
    return records.read_image(Path(manifest_path).parent / row.path)
