"""Raster images, netpbm I/O, luminance handling and resizing.

Images are held as ``uint8`` arrays of shape ``(height, width, channels)``
with ``channels`` either 1 or 3.  A luminance *plane* is a plain 2-D
``uint8`` array of shape ``(height, width)``.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

_NETPBM_MAGIC = {b"P5": 1, b"P6": 3}
_PNG_SUFFIXES = {".png"}


class ImageError(Exception):
    """Base class for image decoding problems."""


class ImageFormatError(ImageError):
    """The file is not a supported image or its header is malformed."""


class UnsupportedMaxValueError(ImageFormatError):
    """The netpbm header declares a max value other than 255."""


class TruncatedImageError(ImageError):
    """The file holds fewer pixel bytes than the header declares."""


@dataclass(frozen=True, eq=False)
class Image:
    """An 8-bit raster with 1 (gray) or 3 (RGB) channels."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"expected (h, w, 1|3) pixel array, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise ValueError("pixel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", np.ascontiguousarray(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def is_gray(self) -> bool:
        return self.channels == 1

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    def __repr__(self):
        return f"Image({self.width}x{self.height}x{self.channels})"

    @classmethod
    def from_plane(cls, plane: np.ndarray) -> "Image":
        return cls(np.asarray(plane, dtype=np.uint8)[:, :, None])


def _round_half_up(values: np.ndarray) -> np.ndarray:
    return np.floor(values + 0.5)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

_TOKEN = re.compile(rb"\S+")


def _read_header(data: bytes) -> tuple[bytes, int, int, int, int]:
    """Parse ``magic width height maxval`` and return them plus the data offset.

    Comments (``#`` to end of line) are allowed between tokens.  Exactly one
    whitespace byte separates the max value from the raster.
    """
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise ImageFormatError("unexpected end of file inside netpbm header")
        if data[pos : pos + 1] == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise ImageFormatError("unterminated comment in netpbm header")
            pos = nl + 1
            continue
        m = _TOKEN.match(data, pos)
        tok = m.group(0)
        if b"#" in tok:
            tok = tok.split(b"#", 1)[0]
        tokens.append(tok)
        pos += len(tok)
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ImageFormatError("missing whitespace after netpbm max value")
    pos += 1

    magic = tokens[0]
    if magic not in _NETPBM_MAGIC:
        raise ImageFormatError(f"unsupported magic number {magic!r}; expected P5 or P6")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ImageFormatError(f"non-integer netpbm header field: {exc}") from None
    if width < 1 or height < 1:
        raise ImageFormatError(f"invalid dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedMaxValueError(f"max value {maxval} is not supported (need 255)")
    return magic, width, height, maxval, pos


def decode_netpbm(data: bytes) -> Image:
    magic, width, height, _, offset = _read_header(data)
    channels = _NETPBM_MAGIC[magic]
    need = width * height * channels
    raster = data[offset : offset + need]
    if len(raster) < need:
        raise TruncatedImageError(
            f"pixel data truncated: header declares {need} bytes, found {len(raster)}"
        )
    px = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return Image(px.copy())


def encode_netpbm(img: Image) -> bytes:
    magic = b"P5" if img.is_gray else b"P6"
    header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    return header + img.pixels.tobytes()


def load_image(path: str | os.PathLike) -> Image:
    """Read a binary PGM (P5) or PPM (P6) file; PNG is read through Pillow."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image file not found: {path}")
    if path.suffix.lower() in _PNG_SUFFIXES:
        return _load_png(path)
    return decode_netpbm(path.read_bytes())


def _load_png(path: Path) -> Image:
    try:
        from PIL import Image as PILImage
    except ImportError:  # pragma: no cover - depends on environment
        raise ImageFormatError("PNG support needs Pillow (pip install fundus-dr[png])") from None
    with PILImage.open(path) as im:
        mode = "L" if im.mode in ("1", "L", "LA", "I", "I;16", "F") else "RGB"
        arr = np.asarray(im.convert(mode), dtype=np.uint8)
    return Image(arr)


def save_image(img: Image, path: str | os.PathLike) -> None:
    """Write ``img`` as P5 (gray) or P6 (RGB)."""
    Path(path).write_bytes(encode_netpbm(img))


# ---------------------------------------------------------------------------
# Luminance
# ---------------------------------------------------------------------------


def _luma_float(px: np.ndarray) -> np.ndarray:
    rgb = px.astype(np.float64)
    wr, wg, wb = LUMA_WEIGHTS
    return wr * rgb[:, :, 0] + wg * rgb[:, :, 1] + wb * rgb[:, :, 2]


def extract_luma(img: Image) -> np.ndarray:
    """Return the Rec. 601 luminance plane (a copy for gray images)."""
    if img.is_gray:
        return img.pixels[:, :, 0].copy()
    y = _round_half_up(_luma_float(img.pixels))
    return np.clip(y, 0, 255).astype(np.uint8)


def recombine_luma(img: Image, new_luma: np.ndarray) -> Image:
    """Put a modified luminance plane back into ``img``.

    RGB channels are scaled by ``new_luma / old_luma``.  Where the old
    luminance is zero the new level is added instead, so black pixels become
    neutral gray and near-black ones keep their hue.
    """
    new_luma = np.asarray(new_luma)
    if new_luma.shape != (img.height, img.width):
        raise ValueError(
            f"luma plane shape {new_luma.shape} does not match image "
            f"{img.height}x{img.width}"
        )
    if img.is_gray:
        return Image(new_luma.astype(np.uint8)[:, :, None])

    old = extract_luma(img).astype(np.float64)
    new = new_luma.astype(np.float64)
    zero = old == 0
    ratio = np.divide(new, old, out=np.zeros_like(new), where=~zero)
    out = _round_half_up(img.pixels.astype(np.float64) * ratio[:, :, None])
    out[zero] = img.pixels[zero] + new[zero][:, None]
    return Image(np.clip(out, 0, 255).astype(np.uint8))


def to_gray(img: Image) -> Image:
    return img if img.is_gray else Image.from_plane(extract_luma(img))


# ---------------------------------------------------------------------------
# Resizing
# ---------------------------------------------------------------------------


def _bilinear_axis(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centres, clamped at the borders
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_bilinear(img: Image, width: int, height: int) -> Image:
    if width < 1 or height < 1:
        raise ValueError(f"target size must be positive, got {width}x{height}")
    if (width, height) == (img.width, img.height):
        return Image(img.pixels.copy())

    src = img.pixels.astype(np.float64)
    y0, y1, fy = _bilinear_axis(img.height, height)
    x0, x1, fx = _bilinear_axis(img.width, width)
    fx = fx[None, :, None]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    fy = fy[:, None, None]
    out = top * (1 - fy) + bot * fy
    return Image(np.clip(_round_half_up(out), 0, 255).astype(np.uint8))
