"""Core grid types, validation, and the FGRID container format.

Coordinate convention used everywhere: ``x`` indexes columns (width), ``y``
indexes rows (height), origin at the top-left cell.  Arrays are indexed
``[y, x]``.  Feature scalars are 64-bit in memory and 32-bit IEEE floats in
files; writing narrows, reading widens.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    BadMagic,
    DecodeError,
    DimensionMismatch,
    HeaderParse,
    NonFiniteValue,
    PayloadTruncated,
)

FGRID_MAGIC = b"FGRD"

# Rec. 601 luma coefficients, also used as the depth stand-in weights.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class FeatureGrid:
    """h x w x d grid of finite real-valued feature vectors."""

    data: np.ndarray  # (h, w, d) float64

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def depth_dim(self) -> int:
        return self.data.shape[2]

    @classmethod
    def from_flat(cls, height: int, width: int, depth_dim: int, values: Sequence[float]) -> "FeatureGrid":
        if height < 1 or width < 1 or depth_dim < 1:
            raise DimensionMismatch(f"dimensions must be positive, got {height}x{width}x{depth_dim}")
        arr = np.asarray(values, dtype=np.float64)
        if arr.size != height * width * depth_dim:
            raise DimensionMismatch(
                f"expected {height * width * depth_dim} values, got {arr.size}"
            )
        grid = cls(arr.reshape(height, width, depth_dim))
        validate_grid(grid)
        return grid


@dataclass(frozen=True)
class DepthMap:
    """Per-cell scalar depth, same orientation as FeatureGrid."""

    values: np.ndarray  # (h, w) float64

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Mask:
    bits: np.ndarray  # (h, w) bool

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class DragPair:
    """One drag gesture: handle dragged toward target, grid coordinates."""

    handle: tuple[float, float]
    target: tuple[float, float]


@dataclass(frozen=True)
class PcddParams:
    """Warp-stage knobs; defaults follow the shipped configuration."""

    dp_min: float = 0.0
    dp_max: float = 63.0
    d_o: float = 20.0
    d_shield: float = 30.0
    alpha: float = 0.7
    beta: float = 0.7
    mu: float | str = "auto"
    fixed_point_count: int = 4

    def __post_init__(self):
        if not self.dp_max > self.dp_min:
            raise DimensionMismatch(f"dp_max must exceed dp_min, got [{self.dp_min}, {self.dp_max}]")
        if self.d_shield < 0 or self.d_o < 0:
            raise DimensionMismatch("d_o and d_shield must be non-negative")
        if self.mu != "auto" and not (isinstance(self.mu, (int, float)) and self.mu > 0):
            raise DimensionMismatch(f"mu must be positive or 'auto', got {self.mu!r}")
        if self.fixed_point_count < 0:
            raise DimensionMismatch("fixed_point_count must be non-negative")


def validate_grid(grid: FeatureGrid) -> None:
    """Raise unless all FeatureGrid invariants hold."""
    d = grid.data
    if d.ndim != 3 or any(s < 1 for s in d.shape):
        raise DimensionMismatch(f"grid data must be (h, w, d) with positive dims, got shape {d.shape}")
    if not np.isfinite(d).all():
        raise NonFiniteValue("grid contains NaN or Inf")


def write_fgrid(grid: FeatureGrid) -> bytes:
    """Serialize to the FGRID container (little-endian f32 payload)."""
    validate_grid(grid)
    header = json.dumps(
        {"h": grid.height, "w": grid.width, "d": grid.depth_dim, "dtype": "f32"},
        separators=(",", ":"),
    )
    payload = grid.data.astype("<f4").tobytes(order="C")
    return FGRID_MAGIC + b"\n" + header.encode("ascii") + b"\n" + payload


def read_fgrid(blob: bytes) -> FeatureGrid:
    """Parse an FGRID byte sequence. Inverse of :func:`write_fgrid`."""
    if not blob.startswith(FGRID_MAGIC + b"\n"):
        raise BadMagic("not an FGRID stream")
    rest = blob[len(FGRID_MAGIC) + 1:]
    nl = rest.find(b"\n")
    if nl < 0:
        raise HeaderParse("missing header line")
    try:
        header = json.loads(rest[:nl].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderParse(f"malformed header: {exc}") from exc
    if not isinstance(header, dict) or set(header) != {"h", "w", "d", "dtype"}:
        raise HeaderParse(f"header must carry exactly h, w, d, dtype: {header!r}")
    if header["dtype"] != "f32":
        raise HeaderParse(f"unsupported dtype {header['dtype']!r}")
    try:
        h, w, d = int(header["h"]), int(header["w"]), int(header["d"])
    except (TypeError, ValueError) as exc:
        raise HeaderParse(f"non-integer dimensions: {exc}") from exc
    if h < 1 or w < 1 or d < 1:
        raise HeaderParse(f"dimensions must be positive, got {h}x{w}x{d}")
    payload = rest[nl + 1:]
    expected = h * w * d * 4
    if len(payload) != expected:
        raise PayloadTruncated(f"expected {expected} payload bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(h, w, d)
    grid = FeatureGrid(data)
    validate_grid(grid)
    return grid


def read_fgrid_file(path) -> FeatureGrid:
    with open(path, "rb") as fh:
        return read_fgrid(fh.read())


def write_fgrid_file(path, grid: FeatureGrid) -> None:
    with open(path, "wb") as fh:
        fh.write(write_fgrid(grid))


def image_to_grid(png: bytes) -> FeatureGrid:
    """Decode a PNG into an RGB FeatureGrid with channels scaled to [0, 1]."""
    try:
        img = Image.open(io.BytesIO(png))
        img.load()
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"cannot decode PNG: {exc}") from exc
    if img.mode != "RGB":
        img = img.convert("RGB")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return FeatureGrid(arr)


def grid_to_image(grid: FeatureGrid) -> bytes:
    """Encode an RGB-like grid ([0, 1] channels) as PNG bytes.

    Grids with one channel render as grayscale; other channel counts are
    rejected since they have no pixel interpretation.
    """
    validate_grid(grid)
    if grid.depth_dim == 3:
        arr = grid.data
        mode = "RGB"
    elif grid.depth_dim == 1:
        arr = grid.data[:, :, 0]
        mode = "L"
    else:
        raise DimensionMismatch(f"cannot render a {grid.depth_dim}-channel grid as PNG")
    pixels = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    img = Image.fromarray(pixels, mode=mode)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def luminance_depth(grid: FeatureGrid) -> DepthMap:
    """Depth stand-in: Rec. 601 luminance of an RGB grid."""
    if grid.depth_dim != 3:
        raise DimensionMismatch(f"luminance needs 3 channels, got {grid.depth_dim}")
    r, g, b = LUMA_WEIGHTS
    vals = grid.data[:, :, 0] * r + grid.data[:, :, 1] * g + grid.data[:, :, 2] * b
    return DepthMap(vals)


def mask_from_png(png: bytes) -> Mask:
    """Nonzero pixels are true; accepts 1-bit and 8-bit PNGs."""
    try:
        img = Image.open(io.BytesIO(png))
        img.load()
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"cannot decode mask PNG: {exc}") from exc
    arr = np.asarray(img.convert("L"))
    return Mask(arr > 0)


def mask_to_png(mask: Mask) -> bytes:
    img = Image.fromarray(np.where(mask.bits, 255, 0).astype(np.uint8), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


@dataclass(frozen=True)
class DragSpec:
    """Parsed drag request: ordered pairs, mask, parameter overrides."""

    pairs: tuple[DragPair, ...]
    mask: Mask
    params: PcddParams = field(default_factory=PcddParams)


_PARAM_KEYS = {
    "dp_min", "dp_max", "d_o", "d_shield", "alpha", "beta", "mu", "fixed_point_count",
}
# Accepted spelling in JSON for the two distance knobs.
_PARAM_ALIASES = {"d_O": "d_o"}


def params_from_json(obj: dict, base: PcddParams | None = None) -> PcddParams:
    base = base or PcddParams()
    updates = {}
    for key, value in obj.items():
        key = _PARAM_ALIASES.get(key, key)
        if key not in _PARAM_KEYS:
            raise HeaderParse(f"unknown params key {key!r}")
        if key == "fixed_point_count":
            value = int(value)
        elif key != "mu":
            value = float(value)
        elif value != "auto":
            value = float(value)
        updates[key] = value
    return replace(base, **updates)


def dragspec_from_json(obj: dict, *, mask_loader=None) -> DragSpec:
    """Build a DragSpec from its JSON form.

    ``mask`` is either a path string (resolved through ``mask_loader``) or an
    inline object ``{"png_base64": ...}``.
    """
    import base64

    if not isinstance(obj, dict):
        raise HeaderParse("drag spec must be a JSON object")
    unknown = set(obj) - {"pairs", "mask", "params"}
    if unknown:
        raise HeaderParse(f"unknown drag spec keys: {sorted(unknown)}")
    raw_pairs = obj.get("pairs")
    if not isinstance(raw_pairs, list) or not raw_pairs:
        raise HeaderParse("drag spec needs a non-empty 'pairs' list")
    pairs = []
    for item in raw_pairs:
        try:
            hx, hy = item["handle"]
            tx, ty = item["target"]
        except (KeyError, TypeError, ValueError) as exc:
            raise HeaderParse(f"malformed drag pair {item!r}") from exc
        pairs.append(DragPair(handle=(float(hx), float(hy)), target=(float(tx), float(ty))))

    mask_ref = obj.get("mask")
    if isinstance(mask_ref, str):
        if mask_loader is None:
            raise HeaderParse("mask path given but no loader available")
        mask = mask_loader(mask_ref)
    elif isinstance(mask_ref, dict) and "png_base64" in mask_ref:
        try:
            raw = base64.b64decode(mask_ref["png_base64"], validate=True)
        except (ValueError, TypeError) as exc:
            raise HeaderParse(f"mask png_base64 is not valid base64: {exc}") from exc
        mask = mask_from_png(raw)
    else:
        raise HeaderParse("drag spec 'mask' must be a path or {'png_base64': ...}")

    params = params_from_json(obj.get("params", {}))
    return DragSpec(pairs=tuple(pairs), mask=mask, params=params)
