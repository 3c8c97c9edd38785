"""Contrast limited adaptive histogram equalization on a luminance plane.

The plane is cut into a ``tile_rows x tile_cols`` grid of near-equal tiles.
Each tile gets its own clipped-histogram equalization lookup table and every
output pixel is the bilinear blend of the tables of the (up to) four tile
centres around it.  Blending is done in exact integer arithmetic, so the
result does not depend on evaluation order.

:func:`clahe_reference` evaluates the same definition pixel by pixel in plain
Python and exists only to cross-check :func:`clahe`.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .image_core import Image, extract_luma, recombine_luma

BINS = 256


@dataclass(frozen=True)
class ClaheParams:
    tile_rows: int = 8
    tile_cols: int = 8
    clip_factor: float = 2.0
    bins: int = BINS

    def __post_init__(self):
        if self.tile_rows < 1 or self.tile_cols < 1:
            raise ValueError("tile grid must be at least 1x1")
        if self.clip_factor < 1.0:
            raise ValueError(f"clip_factor must be >= 1, got {self.clip_factor}")
        if self.bins != BINS:
            raise ValueError("only 256-bin histograms are supported")

    def clip_limit(self, tile_pixels: int) -> int:
        return max(1, int(np.floor(self.clip_factor * tile_pixels / self.bins)))


def clip_histogram(hist, limit: int) -> np.ndarray:
    """Cut every bin at ``limit`` and spread the excess evenly.

    The excess ``E`` adds ``E // nbins`` to each bin and one more count to
    the first ``E % nbins`` bins.  One pass only, so a bin can end up
    slightly above ``limit``.  The total is preserved exactly.
    """
    if limit < 1:
        raise ValueError("clip limit must be >= 1")
    hist = np.asarray(hist, dtype=np.int64)
    excess = int(np.maximum(hist - limit, 0).sum())
    if excess == 0:
        return hist.copy()
    out = np.minimum(hist, limit)
    base, rem = divmod(excess, hist.size)
    out += base
    out[:rem] += 1
    return out


def tile_mapping(hist, tile_pixels: int) -> np.ndarray:
    """Equalization lookup table for one tile.

    ``T(v) = round((cdf(v) - cdf_min) / (tile_pixels - cdf_min) * (L - 1))``
    with ``L = len(hist)``, rounding half up and clamping to ``[0, L - 1]``.
    A tile whose mass sits in a single bin maps to the identity.
    """
    hist = np.asarray(hist, dtype=np.int64)
    top = hist.size - 1
    if tile_pixels < 1 or int(hist.sum()) != tile_pixels:
        raise ValueError("histogram total must equal tile_pixels >= 1")
    cdf = np.cumsum(hist)
    cdf_min = int(cdf[np.flatnonzero(cdf)[0]])
    den = tile_pixels - cdf_min
    if den == 0:
        return np.arange(hist.size, dtype=np.int64)
    num = (cdf - cdf_min) * top
    lut = (2 * num + den) // (2 * den)
    return np.clip(lut, 0, top)


def tile_bounds(n: int, tiles: int) -> np.ndarray:
    """Boundaries ``floor(i * n / tiles)`` for ``i = 0..tiles``."""
    return (np.arange(tiles + 1, dtype=np.int64) * n) // tiles


def _check_grid(shape: tuple[int, int], p: ClaheParams) -> None:
    h, w = shape
    if p.tile_rows > h or p.tile_cols > w:
        raise ValueError(
            f"tile grid {p.tile_rows}x{p.tile_cols} is larger than the {h}x{w} plane"
        )


def _blend_axis(n: int, bounds: np.ndarray):
    """Per-coordinate (lower tile, upper tile, weight numerator, denominator).

    Coordinates are doubled so tile centres ``(start + end - 1) / 2`` stay
    integral.
    """
    centres2 = bounds[:-1] + bounds[1:] - 1
    last = len(centres2) - 1
    pos2 = 2 * np.arange(n, dtype=np.int64)
    hi = np.searchsorted(centres2, pos2, side="right")
    lo = np.clip(hi - 1, 0, last)
    hi = np.clip(hi, 0, last)
    den = centres2[hi] - centres2[lo]
    num = np.where(den > 0, pos2 - centres2[lo], 0)
    den = np.where(den > 0, den, 1)
    return lo, hi, num, den


def clahe(plane: np.ndarray, params: ClaheParams = ClaheParams()) -> np.ndarray:
    plane = np.asarray(plane, dtype=np.uint8)
    if plane.ndim != 2:
        raise ValueError(f"expected a 2-D plane, got shape {plane.shape}")
    _check_grid(plane.shape, params)
    h, w = plane.shape
    rb = tile_bounds(h, params.tile_rows)
    cb = tile_bounds(w, params.tile_cols)

    luts = np.empty((params.tile_rows, params.tile_cols, BINS), dtype=np.int64)
    for r in range(params.tile_rows):
        for c in range(params.tile_cols):
            tile = plane[rb[r] : rb[r + 1], cb[c] : cb[c + 1]]
            hist = np.bincount(tile.ravel(), minlength=BINS)
            n = tile.size
            if np.count_nonzero(hist) == 1:
                luts[r, c] = np.arange(BINS)
            else:
                luts[r, c] = tile_mapping(clip_histogram(hist, params.clip_limit(n)), n)

    r0, r1, ny, dy = _blend_axis(h, rb)
    c0, c1, nx, dx = _blend_axis(w, cb)
    v = plane.astype(np.intp)
    R0, R1 = r0[:, None], r1[:, None]
    C0, C1 = c0[None, :], c1[None, :]
    NY, DY = ny[:, None], dy[:, None]
    NX, DX = nx[None, :], dx[None, :]
    top = luts[R0, C0, v] * (DX - NX) + luts[R0, C1, v] * NX
    bot = luts[R1, C0, v] * (DX - NX) + luts[R1, C1, v] * NX
    num = top * (DY - NY) + bot * NY
    den = DY * DX
    out = (2 * num + den) // (2 * den)
    return np.clip(out, 0, 255).astype(np.uint8)


def clahe_image(img: Image, params: ClaheParams = ClaheParams()) -> Image:
    """CLAHE on the luminance of ``img``, reinserted by ratio scaling."""
    return recombine_luma(img, clahe(extract_luma(img), params))


# ---------------------------------------------------------------------------
# Reference oracle
# ---------------------------------------------------------------------------


def _ref_lut(values: list[int], clip_factor: float) -> list[int]:
    n = len(values)
    hist = [0] * BINS
    for v in values:
        hist[v] += 1
    if sum(1 for c in hist if c) == 1:
        return list(range(BINS))
    limit = max(1, int(clip_factor * n / BINS // 1))
    excess = 0
    for i in range(BINS):
        if hist[i] > limit:
            excess += hist[i] - limit
            hist[i] = limit
    for i in range(BINS):
        hist[i] += excess // BINS
        if i < excess % BINS:
            hist[i] += 1
    cdf, run = [], 0
    for c in hist:
        run += c
        cdf.append(run)
    cdf_min = next(c for c in cdf if c > 0)
    if n == cdf_min:
        return list(range(BINS))
    lut = []
    for c in cdf:
        t = Fraction(c - cdf_min, n - cdf_min) * 255
        lut.append(min(255, max(0, int((t + Fraction(1, 2)) // 1))))
    return lut


def _ref_neighbours(x: int, centres: list[Fraction]):
    tiles = len(centres)
    if x <= centres[0]:
        return 0, 0, Fraction(0)
    if x >= centres[-1]:
        return tiles - 1, tiles - 1, Fraction(0)
    for i in range(tiles - 1):
        if centres[i] <= x < centres[i + 1]:
            return i, i + 1, (x - centres[i]) / (centres[i + 1] - centres[i])
    raise AssertionError("unreachable")


def clahe_reference(plane, params: ClaheParams = ClaheParams()) -> np.ndarray:
    """Slow, direct evaluation of :func:`clahe` for testing."""
    rows = [[int(v) for v in row] for row in np.asarray(plane)]
    h, w = len(rows), len(rows[0])
    if params.tile_rows > h or params.tile_cols > w:
        raise ValueError(
            f"tile grid {params.tile_rows}x{params.tile_cols} is larger than the {h}x{w} plane"
        )
    rb = [i * h // params.tile_rows for i in range(params.tile_rows + 1)]
    cb = [j * w // params.tile_cols for j in range(params.tile_cols + 1)]

    def lut_of(r, c):
        vals = [rows[y][x] for y in range(rb[r], rb[r + 1]) for x in range(cb[c], cb[c + 1])]
        return _ref_lut(vals, params.clip_factor)

    rc = [Fraction(rb[i] + rb[i + 1] - 1, 2) for i in range(params.tile_rows)]
    cc = [Fraction(cb[j] + cb[j + 1] - 1, 2) for j in range(params.tile_cols)]
    col_terms = []
    for x in range(w):
        ca, cbb, wx = _ref_neighbours(x, cc)
        col_terms.append([(c, fx) for c, fx in ((ca, 1 - wx), (cbb, wx)) if fx])
    luts = {}
    out = np.zeros((h, w), dtype=np.uint8)
    for y in range(h):
        ra, rbb, wy = _ref_neighbours(y, rc)
        row_terms = [(r, fy) for r, fy in ((ra, 1 - wy), (rbb, wy)) if fy]
        for x in range(w):
            v = rows[y][x]
            acc = Fraction(0)
            for r, fy in row_terms:
                for c, fx in col_terms[x]:
                    if (r, c) not in luts:
                        luts[(r, c)] = lut_of(r, c)
                    acc += fy * fx * luts[(r, c)][v]
            out[y, x] = min(255, max(0, int((acc + Fraction(1, 2)) // 1)))
    return out
