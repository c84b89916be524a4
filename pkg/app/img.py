"""
Raster types and image file I/O for the stereo pipeline.

Holds the three rasters the pipeline passes around:
- GrayImage: 8-bit intensities (left/right views)
- GradientImage: Sobel magnitudes quantized to the same 8-bit range
- DisparityMap: real-valued disparities with an invalid sentinel

File formats:
    PGM  "P5" (binary) or "P2" (ASCII), maxval <= 255, '#' comments in header
    PFM  "Pf" single channel, negative scale = little-endian, rows bottom-up
"""

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from scipy import ndimage

from app.params import ParameterError

logger = logging.getLogger(__name__)

INVALID_DISPARITY = -1.0

PathLike = Union[str, Path]


class ImageFormatError(ValueError):
    """Malformed or unsupported PGM/PFM content."""


class DimensionError(ValueError):
    """Raster sizes incompatible with the requested operation."""


# ============================================================================
# RASTER TYPES
# ============================================================================

def _as_uint8_raster(data, kind: str) -> np.ndarray:
    arr = np.asarray(data)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{kind} must be a non-empty 2-D raster, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ValueError(f"{kind} intensities must lie in [0, 255]")
        if np.issubdtype(arr.dtype, np.floating) and not np.array_equal(arr, np.round(arr)):
            raise ValueError(f"{kind} intensities must be integers")
    arr = np.array(arr, dtype=np.uint8, order="C")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class GrayImage:
    """8-bit single-channel image, stored row-major as a (height, width) array."""
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_uint8_raster(self.data, "GrayImage"))

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    @classmethod
    def from_values(cls, width: int, height: int, values: List[int]) -> "GrayImage":
        if len(values) != width * height:
            raise DimensionError(
                f"expected {width * height} samples for {width}x{height}, got {len(values)}"
            )
        return cls(np.asarray(values, dtype=np.int64).reshape(height, width))


@dataclass(frozen=True)
class GradientImage:
    """Gradient magnitudes quantized to [0, 255], same size as the source image."""
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_uint8_raster(self.data, "GradientImage"))

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class DisparityMap:
    """
    Disparity raster in pixels. Every value is either INVALID_DISPARITY (-1.0)
    or a disparity in [0, d_max]. Values are held as float64 in memory and
    written as float32 on disk.
    """
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, order="C")
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"DisparityMap must be a non-empty 2-D raster, got shape {arr.shape}")
        if np.isnan(arr).any():
            raise ValueError("DisparityMap must not contain NaN")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    @property
    def valid_mask(self) -> np.ndarray:
        return self.data != INVALID_DISPARITY

    def valid_fraction(self) -> float:
        return float(self.valid_mask.mean())

    def with_invalid(self, mask: np.ndarray) -> "DisparityMap":
        """Copy of this map with `mask` pixels set to the invalid sentinel."""
        out = self.data.copy()
        out[mask] = INVALID_DISPARITY
        return DisparityMap(out)

    def filled(self, value: float = 0.0) -> np.ndarray:
        """Plain float array with invalid pixels replaced by `value`."""
        return np.where(self.valid_mask, self.data, value)

    @classmethod
    def constant(cls, width: int, height: int, value: float) -> "DisparityMap":
        return cls(np.full((height, width), value, dtype=np.float64))


def require_same_shape(*rasters) -> Tuple[int, int]:
    shapes = {r.shape for r in rasters}
    if len(shapes) != 1:
        raise DimensionError(f"raster dimensions differ: {sorted(shapes)}")
    return shapes.pop()


# ============================================================================
# PGM
# ============================================================================

_WHITESPACE = b" \t\r\n\v\f"


def _read_header_tokens(raw: bytes, count: int, start: int) -> Tuple[List[bytes], int]:
    """
    Reads `count` whitespace-separated header tokens, skipping '#' comments.
    Returns the tokens and the offset just past the last token.
    """
    tokens: List[bytes] = []
    pos = start
    n = len(raw)
    while len(tokens) < count:
        while pos < n and raw[pos] in _WHITESPACE:
            pos += 1
        if pos >= n:
            raise ImageFormatError(f"truncated header: expected {count} fields, found {len(tokens)}")
        if raw[pos] == ord("#"):
            while pos < n and raw[pos] not in b"\r\n":
                pos += 1
            continue
        end = pos
        while end < n and raw[end] not in _WHITESPACE and raw[end] != ord("#"):
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    return tokens, pos


def _header_int(token: bytes, name: str) -> int:
    try:
        return int(token.decode("ascii"))
    except (UnicodeDecodeError, ValueError):
        raise ImageFormatError(f"invalid {name} token {token!r}")


def load_pgm(path: PathLike) -> GrayImage:
    """Loads a binary (P5) or ASCII (P2) PGM with maxval <= 255."""
    raw = Path(path).read_bytes()
    magic = raw[:2]
    if magic not in (b"P5", b"P2"):
        raise ImageFormatError(f"unsupported magic {magic!r} (expected P5 or P2)")

    (w_tok, h_tok, max_tok), pos = _read_header_tokens(raw, 3, 2)
    width = _header_int(w_tok, "width")
    height = _header_int(h_tok, "height")
    maxval = _header_int(max_tok, "maxval")
    if width < 1 or height < 1:
        raise ImageFormatError(f"invalid dimensions {w_tok!r} x {h_tok!r}")
    if maxval > 255:
        raise ImageFormatError(f"unsupported maxval {max_tok.decode('ascii')}")
    if maxval < 1:
        raise ImageFormatError(f"invalid maxval {max_tok!r}")

    count = width * height
    if magic == b"P5":
        # un solo carattere di whitespace separa l'header dal payload
        payload = raw[pos + 1:pos + 1 + count]
        if len(payload) < count:
            raise ImageFormatError(f"truncated payload: expected {count} bytes, got {len(payload)}")
        values = np.frombuffer(payload, dtype=np.uint8)
    else:
        sample_tokens = raw[pos:].split()
        if len(sample_tokens) < count:
            raise ImageFormatError(f"truncated payload: expected {count} samples, got {len(sample_tokens)}")
        values = np.array([_header_int(t, "sample") for t in sample_tokens[:count]], dtype=np.int64)

    if values.size and int(values.max()) > maxval:
        raise ImageFormatError(f"sample {int(values.max())} exceeds maxval {maxval}")

    image = GrayImage(values.reshape(height, width))
    logger.debug(f"📥 Loaded {magic.decode()} {width}x{height} from {path}")
    return image


def save_pgm(image: GrayImage, path: PathLike) -> None:
    """Writes a binary (P5) PGM with maxval 255."""
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + image.data.tobytes())


# ============================================================================
# PFM
# ============================================================================

def save_pfm(disparity: DisparityMap, path: PathLike) -> None:
    """Writes a single-channel little-endian PFM (rows stored bottom-up)."""
    data = disparity.data
    if np.isnan(data).any():
        raise ValueError("refusing to write a disparity map containing NaN")
    header = f"Pf\n{disparity.width} {disparity.height}\n-1.0\n".encode("ascii")
    payload = np.flipud(data).astype("<f4").tobytes()
    Path(path).write_bytes(header + payload)


def load_pfm(path: PathLike) -> DisparityMap:
    """Loads a single-channel PFM written in either byte order."""
    raw = Path(path).read_bytes()
    lines = raw.split(b"\n", 3)
    if len(lines) < 4:
        raise ImageFormatError("truncated PFM header")
    magic, dims, scale_line, payload = lines

    if magic.strip() != b"Pf":
        raise ImageFormatError(f"unsupported magic {magic.strip()!r} (expected Pf)")
    match = re.fullmatch(rb"\s*(\d+)\s+(\d+)\s*", dims)
    if not match:
        raise ImageFormatError(f"malformed dimensions line {dims!r}")
    width, height = (int(g) for g in match.groups())
    try:
        scale = float(scale_line.strip())
    except ValueError:
        raise ImageFormatError(f"invalid scale token {scale_line.strip()!r}")
    if scale == 0.0:
        raise ImageFormatError("invalid scale token b'0'")

    endian = "<" if scale < 0 else ">"
    expected = width * height * 4
    if len(payload) < expected:
        raise ImageFormatError(f"truncated payload: expected {expected} bytes, got {len(payload)}")

    values = np.frombuffer(payload[:expected], dtype=f"{endian}f4").reshape(height, width)
    return DisparityMap(np.flipud(values).astype(np.float64))


# ============================================================================
# PREPROCESSING
# ============================================================================

def sobel_magnitude(image: GrayImage) -> GradientImage:
    """
    3x3 Sobel gradient magnitude, edge-clamped at the borders and quantized
    as min(255, round(sqrt(gx^2 + gy^2) / 4)).
    """
    if image.width < 3 or image.height < 3:
        raise DimensionError(f"Sobel needs at least 3x3 pixels, got {image.width}x{image.height}")

    src = image.data.astype(np.float64)
    gx = ndimage.sobel(src, axis=1, mode="nearest")
    gy = ndimage.sobel(src, axis=0, mode="nearest")
    magnitude = np.floor(np.hypot(gx, gy) / 4.0 + 0.5)
    return GradientImage(np.minimum(magnitude, 255.0))


def disparity_to_depth(disparity: DisparityMap, focal_px: float, baseline: float) -> DisparityMap:
    """
    Converts disparity to depth with Z = f * B / d.

    Invalid pixels and zero disparity (point at infinity) map to the invalid
    sentinel. The result is in the unit of `baseline`.
    """
    if focal_px <= 0 or baseline <= 0:
        raise ParameterError(f"focal ({focal_px}) and baseline ({baseline}) must be positive")

    d = disparity.data
    usable = disparity.valid_mask & (d > 0)
    depth = np.full(d.shape, INVALID_DISPARITY)
    depth[usable] = focal_px * baseline / d[usable]
    return DisparityMap(depth)
