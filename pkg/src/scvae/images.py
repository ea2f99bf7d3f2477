"""Reading and writing PNG / PGM / PPM images as float arrays in [0, 1]."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DimensionError

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".pgm", ".ppm")

# fixed 16-colour palette for label masks
PALETTE16 = np.array([
    [0, 0, 0], [255, 255, 255], [230, 25, 75], [60, 180, 75],
    [255, 225, 25], [0, 130, 200], [245, 130, 48], [145, 30, 180],
    [70, 240, 240], [240, 50, 230], [210, 245, 60], [250, 190, 190],
    [0, 128, 128], [170, 110, 40], [128, 0, 0], [128, 128, 128],
], dtype=np.uint8)


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    return sorted((p for p in directory.iterdir()
                   if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS), key=lambda p: p.name)


def read_image(path, channels: int) -> np.ndarray:
    """Decode to a C x H x W float64 array in [0, 1]."""
    with Image.open(path) as im:
        im.load()
        if channels == 1:
            im = im.convert("L")
        elif channels == 3:
            im = im.convert("RGB")
        else:
            raise DimensionError(f"unsupported channel count {channels}")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return np.ascontiguousarray(arr)


def resize_bilinear(img: np.ndarray, size: int) -> np.ndarray:
    """Half-pixel-centre bilinear resize of C x H x W to C x size x size."""
    c, h, w = img.shape
    if (h, w) == (size, size):
        return img

    def axis(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    r0, r1, fr = axis(h, size)
    c0, c1, fc = axis(w, size)
    rows = img[:, r0, :] * (1 - fr)[None, :, None] + img[:, r1, :] * fr[None, :, None]
    return rows[:, :, c0] * (1 - fc) + rows[:, :, c1] * fc


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path, img: np.ndarray):
    """Write a C x H x W [0, 1] array; format from the suffix (png/pgm/ppm)."""
    arr = to_uint8(img)
    if arr.shape[0] == 1:
        pil = Image.fromarray(arr[0])
    else:
        pil = Image.fromarray(np.ascontiguousarray(arr.transpose(1, 2, 0)))
    pil.save(path)


def write_label_pgm(path, labels: np.ndarray):
    """Binary P5 PGM with the integer labels as grey levels."""
    labels = np.asarray(labels)
    h, w = labels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(labels.astype(np.uint8).tobytes())


def write_label_png(path, labels: np.ndarray):
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    h, w = labels.shape
    pil = Image.frombytes("P", (w, h), labels.tobytes())
    pil.putpalette(PALETTE16.ravel().tolist())
    pil.save(path, optimize=False)


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode == "P":
            arr = np.asarray(im)
        else:
            arr = np.asarray(im.convert("L"))
    return arr > 0
