"""Image quality, sparsity and overlap metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError

PSNR_CAP = 99.0


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    hoyer: float
    iou: float | None = None
    dice: float | None = None


def _same_shape(a, b, what):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, max_val: float = 1.0) -> float:
    a, b = _same_shape(a, b, "psnr")
    if max_val <= 0:
        raise DomainError("max_val must be > 0")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(max_val * max_val / mse))


def _gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    # separable 'valid' correlation over the last two axes
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=-2) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=-1) @ g


def ssim(a, b, max_val: float = 1.0) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels.

    Accepts H x W or C x H x W arrays.
    """
    a, b = _same_shape(a, b, "ssim")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise DimensionError(f"ssim expects H x W or C x H x W, got {a.shape}")
    if min(a.shape[-2:]) < 11:
        raise DimensionError(f"ssim needs images of at least 11 x 11, got {a.shape[-2:]}")
    g = _gaussian_window()
    c1 = (0.01 * max_val) ** 2
    c2 = (0.03 * max_val) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a * mu_a
    sbb = _filter_valid(b * b, g) - mu_b * mu_b
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    per_channel = (num / den).mean(axis=(-2, -1))
    return float(per_channel.mean())


def hoyer_sparsity(z) -> float:
    z = np.asarray(z, dtype=np.float64).ravel()
    if z.size < 2:
        raise DomainError(f"Hoyer sparsity needs K >= 2, got {z.size}")
    return float(hoyer_sparsity_batch(z[None])[0])


def hoyer_sparsity_batch(codes) -> np.ndarray:
    """Row-wise Hoyer sparsity (sqrt(K) - |z|_1/|z|_2) / (sqrt(K) - 1); zero rows score 1."""
    codes = np.asarray(codes, dtype=np.float64)
    k = codes.shape[-1]
    if k < 2:
        raise DomainError(f"Hoyer sparsity needs K >= 2, got {k}")
    l1 = np.abs(codes).sum(axis=-1)
    l2 = np.sqrt((codes * codes).sum(axis=-1))
    root = math.sqrt(k)
    out = np.ones(l1.shape)
    nz = l2 > 0
    out[nz] = (root - l1[nz] / l2[nz]) / (root - 1.0)
    return np.clip(out, 0.0, 1.0)


def iou_dice(pred, truth) -> tuple[float, float]:
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise DimensionError(f"iou_dice: shape mismatch {pred.shape} vs {truth.shape}")
    inter = int(np.count_nonzero(pred & truth))
    union = int(np.count_nonzero(pred | truth))
    if union == 0:
        return 1.0, 1.0
    iou = inter / union
    # equals 2|A&B| / (|A| + |B|); written through IoU so the two agree to the bit
    return iou, 2.0 * iou / (1.0 + iou)


def metric_report(original, reconstruction, codes=None, max_val: float = 1.0) -> MetricReport:
    hoyer = float(hoyer_sparsity_batch(np.reshape(codes, (-1, np.shape(codes)[-1]))).mean()) \
        if codes is not None else float("nan")
    return MetricReport(psnr_db=psnr(original, reconstruction, max_val),
                        ssim=ssim(original, reconstruction, max_val), hoyer=hoyer)
