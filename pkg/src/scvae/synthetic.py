"""Deterministic toy corpora: shapes, gratings and two-texture composites."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .images import write_image


def stripes(size, vertical: bool, lo: float, hi: float) -> np.ndarray:
    """Period-2 stripes; every aligned 2x2 cell looks the same."""
    idx = np.arange(size) % 2
    line = np.where(idx == 0, hi, lo)
    return np.tile(line, (size, 1)) if vertical else np.tile(line[:, None], (1, size))


def texture(kind: str, size: int, lo: float, hi: float) -> np.ndarray:
    if kind == "A":
        return stripes(size, True, lo, hi)
    if kind == "B":
        return stripes(size, False, lo, hi)
    raise ValueError(f"unknown texture {kind!r}")


def _region(rng, size, shape=None):
    yy, xx = np.mgrid[0:size, 0:size]
    shape = shape or rng.choice(["disc", "rect"])
    if shape == "disc":
        cy, cx = rng.uniform(size * 0.35, size * 0.65, size=2)
        r = rng.uniform(size * 0.2, size * 0.3)
        return (yy - cy + 0.5) ** 2 + (xx - cx + 0.5) ** 2 <= r * r
    # even-aligned rectangle so it falls on whole latent cells
    h2 = 2 * rng.integers(size // 8, size // 4 + 1)
    w2 = 2 * rng.integers(size // 8, size // 4 + 1)
    top = 2 * rng.integers(2, (size - h2) // 2 - 1)
    left = 2 * rng.integers(2, (size - w2) // 2 - 1)
    m = np.zeros((size, size), dtype=bool)
    m[top:top + h2, left:left + w2] = True
    return m


def two_texture_image(rng, size=32, shape=None):
    """Background texture A with a foreground region of texture B; returns (image, mask)."""
    lo = rng.uniform(0.1, 0.3)
    hi = rng.uniform(0.7, 0.9)
    mask = _region(rng, size, shape)
    img = np.where(mask, texture("B", size, lo, hi), texture("A", size, lo, hi))
    return img[None], mask


def shapes_image(rng, size=32):
    yy, xx = np.mgrid[0:size, 0:size]
    img = np.full((size, size), rng.uniform(0.1, 0.9))
    for _ in range(rng.integers(1, 4)):
        level = rng.uniform(0.0, 1.0)
        if rng.random() < 0.5:
            cy, cx = rng.uniform(4, size - 4, size=2)
            r = rng.uniform(3, size / 3)
            img[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = level
        else:
            y0, x0 = rng.integers(0, size - 6, size=2)
            h, w = rng.integers(5, size // 2, size=2)
            img[y0:y0 + h, x0:x0 + w] = level
    return img[None]


def grating_image(rng, size=32):
    yy, xx = np.mgrid[0:size, 0:size]
    angle = rng.uniform(0, np.pi)
    period = rng.uniform(4, 16)
    phase = rng.uniform(0, 2 * np.pi)
    u = xx * np.cos(angle) + yy * np.sin(angle)
    amp = rng.uniform(0.2, 0.45)
    return (0.5 + amp * np.sin(2 * np.pi * u / period + phase))[None]


def toy_corpus(count: int = 200, size: int = 32, seed: int = 0) -> np.ndarray:
    """count x 1 x size x size images in [0, 1]: shapes, gratings and two-texture composites."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        kind = i % 3
        if kind == 0:
            out.append(shapes_image(rng, size))
        elif kind == 1:
            out.append(grating_image(rng, size))
        else:
            out.append(two_texture_image(rng, size)[0])
    return np.clip(np.stack(out), 0.0, 1.0)


def segmentation_set(count: int = 8, size: int = 32, seed: int = 100):
    rng = np.random.default_rng(seed)
    images, masks = [], []
    for _ in range(count):
        img, mask = two_texture_image(rng, size)
        images.append(img)
        masks.append(mask)
    return np.stack(images), np.stack(masks)


def write_corpus(directory, images, masks=None, prefix="img"):
    """Write images as PNG (masks, if given, into ``directory/masks``)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for i, img in enumerate(images):
        name = f"{prefix}{i:04d}.png"
        write_image(directory / name, img)
        names.append(name)
    if masks is not None:
        (directory / "masks").mkdir(exist_ok=True)
        for name, m in zip(names, masks):
            write_image(directory / "masks" / name, m[None].astype(np.float64))
    return names
