"""Procedural fundus-like images for smoke tests and desk-scale experiments.

Each image is a dim, reddish retinal disk with vignetting, an optic disc and
sensor noise.  Diseased grades add lesions: bright exudate-like spots and
dark haemorrhage-like spots, more of them at higher grades.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import ClassScheme
from .image_core import Image, save_image

# lesions per grade 0..4 (inclusive ranges)
LESIONS_PER_GRADE = ((0, 0), (3, 5), (6, 9), (10, 14), (15, 20))


def _spot(yy, xx, cy, cx, radius):
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * radius**2))


def fundus_image(rng: np.random.Generator, grade: int, size: int = 64) -> Image:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2.0
    cy, cx = c + rng.uniform(-0.04, 0.04, 2) * size
    radius = size * rng.uniform(0.42, 0.47)
    r2 = ((yy - cy) ** 2 + (xx - cx) ** 2) / radius**2
    inside = r2 <= 1.0

    brightness = rng.uniform(0.45, 0.9)
    shade = brightness * (1.0 - 0.45 * r2)
    base = np.array([190.0, 85.0, 35.0]) * rng.uniform(0.9, 1.1, 3)
    img = shade[:, :, None] * base

    side = rng.choice([-1.0, 1.0])
    disc = _spot(yy, xx, cy + rng.uniform(-0.05, 0.05) * size, cx + side * 0.25 * size, 0.06 * size)
    img += disc[:, :, None] * np.array([60.0, 70.0, 40.0])

    lo, hi = LESIONS_PER_GRADE[grade]
    for _ in range(int(rng.integers(lo, hi + 1))):
        ang = rng.uniform(0, 2 * np.pi)
        dist = radius * np.sqrt(rng.uniform(0.0, 0.7))
        ly, lx = cy + dist * np.sin(ang), cx + dist * np.cos(ang)
        spot = _spot(yy, xx, ly, lx, size * rng.uniform(0.035, 0.055))[:, :, None]
        if rng.random() < 0.5:
            img += spot * np.array([70.0, 80.0, 30.0]) * brightness * 1.6  # exudate
        else:
            img *= 1.0 - 0.7 * spot  # haemorrhage

    img += rng.normal(0.0, 4.0, img.shape)
    img[~inside] = rng.uniform(0, 6)
    return Image(np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8))


def write_dataset(
    root: str | os.PathLike,
    counts: Sequence[int],
    scheme: ClassScheme,
    size: int = 64,
    seed: int = 0,
) -> list[Path]:
    """Write ``counts[k]`` images for every class ``k`` in a class-folder tree.

    In binary mode the DR images draw their grade uniformly from 1..4.
    """
    if len(counts) != scheme.num_classes:
        raise ValueError(f"need {scheme.num_classes} class counts, got {len(counts)}")
    root = Path(root)
    rng = np.random.default_rng(seed)
    written = []
    for k, (name, n) in enumerate(zip(scheme.names, counts)):
        folder = root / name
        folder.mkdir(parents=True, exist_ok=True)
        for i in range(n):
            grade = k if scheme.mode == "multiclass" else (0 if k == 0 else int(rng.integers(1, 5)))
            path = folder / f"{name.lower()}_{i:05d}.ppm"
            save_image(fundus_image(rng, grade, size), path)
            written.append(path)
    return written
