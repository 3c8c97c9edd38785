"""Seeded geometric augmentation: rotation, shear, zoom, shifts and horizontal flips.

Transforms are applied by inverse mapping about the image centre with
bilinear sampling.  Samples that fall outside the raster are reflected back
in (half-sample symmetric, ``d c b a | a b c d | d c b a``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .image_core import Image


@dataclass(frozen=True)
class AffineSpec:
    rotation: float = 0.0  # degrees, counter-clockwise
    shear: float = 0.0  # degrees
    zoom: tuple[float, float] = (1.0, 1.0)  # (x, y) scale
    shift_x: float = 0.0  # fraction of width
    shift_y: float = 0.0  # fraction of height
    flip_h: bool = False

    def __post_init__(self):
        if isinstance(self.zoom, (int, float)):
            object.__setattr__(self, "zoom", (float(self.zoom), float(self.zoom)))
        if min(self.zoom) <= 0:
            raise ValueError(f"zoom must be positive, got {self.zoom}")

    @property
    def is_identity(self) -> bool:
        return (
            self.rotation == 0
            and self.shear == 0
            and self.zoom == (1.0, 1.0)
            and self.shift_x == 0
            and self.shift_y == 0
            and not self.flip_h
        )


@dataclass(frozen=True)
class AugmentPolicy:
    max_rotation: float = 15.0
    max_shift: float = 0.10
    max_zoom_delta: float = 0.10
    max_shear: float = 10.0
    allow_flip_h: bool = True
    seed: int = 0
    apply_prob: float = 1.0  # chance a training sample is transformed at all

    def __post_init__(self):
        for name in ("max_rotation", "max_shift", "max_zoom_delta", "max_shear"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.max_zoom_delta >= 1:
            raise ValueError("max_zoom_delta must be < 1 so zoom stays positive")
        if not 0.0 <= self.apply_prob <= 1.0:
            raise ValueError("apply_prob must be in [0, 1]")

    def generator(self, offset: int = 0) -> np.random.Generator:
        """Independent stream for one worker; streams differ by ``offset``."""
        return np.random.default_rng([self.seed, offset])


def sample_spec(policy: AugmentPolicy, rng: np.random.Generator) -> AffineSpec:
    """Draw one transform; every magnitude is uniform on ``[-max, +max]``."""
    rotation = rng.uniform(-policy.max_rotation, policy.max_rotation)
    shear = rng.uniform(-policy.max_shear, policy.max_shear)
    zx, zy = 1.0 + rng.uniform(-policy.max_zoom_delta, policy.max_zoom_delta, size=2)
    sx, sy = rng.uniform(-policy.max_shift, policy.max_shift, size=2)
    flip = bool(rng.random() < 0.5) if policy.allow_flip_h else False
    return AffineSpec(
        rotation=float(rotation),
        shear=float(shear),
        zoom=(float(zx), float(zy)),
        shift_x=float(sx),
        shift_y=float(sy),
        flip_h=flip,
    )


def _forward_matrix(spec: AffineSpec) -> np.ndarray:
    # output = R @ Sh @ Z @ (src - centre) + centre + shift
    th = math.radians(spec.rotation)
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    shear = np.array([[1.0, math.tan(math.radians(spec.shear))], [0.0, 1.0]])
    zoom = np.diag(spec.zoom)
    return rot @ shear @ zoom


def _reflect(idx: np.ndarray, n: int) -> np.ndarray:
    m = np.mod(idx, 2 * n)
    return np.where(m >= n, 2 * n - 1 - m, m)


def warp(arr: np.ndarray, spec: AffineSpec) -> np.ndarray:
    """Apply ``spec`` to a float ``(h, w, c)`` array, returning floats."""
    arr = np.asarray(arr, dtype=np.float64)
    h, w = arr.shape[:2]
    if spec.is_identity:
        return arr.copy()

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    if spec.flip_h:
        xs = (w - 1) - xs
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    qx = xs - cx - spec.shift_x * w
    qy = ys - cy - spec.shift_y * h
    inv = np.linalg.inv(_forward_matrix(spec))
    sx = inv[0, 0] * qx + inv[0, 1] * qy + cx
    sy = inv[1, 0] * qx + inv[1, 1] * qy + cy

    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = (sx - x0)[:, :, None]
    fy = (sy - y0)[:, :, None]
    x0 = x0.astype(np.intp)
    y0 = y0.astype(np.intp)
    xa, xb = _reflect(x0, w), _reflect(x0 + 1, w)
    ya, yb = _reflect(y0, h), _reflect(y0 + 1, h)
    top = arr[ya, xa] * (1 - fx) + arr[ya, xb] * fx
    bot = arr[yb, xa] * (1 - fx) + arr[yb, xb] * fx
    return top * (1 - fy) + bot * fy


def apply_affine(img: Image, spec: AffineSpec) -> Image:
    out = warp(img.pixels, spec)
    return Image(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))


def rescale_to_features(img: Image) -> np.ndarray:
    """Pixels divided by 255, flattened row-major with channels interleaved."""
    return img.pixels.reshape(-1).astype(np.float64) / 255.0
