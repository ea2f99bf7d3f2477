"""Uses of learned sparse codes: editing, interpolation, clustering, segmentation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ConfigError, DomainError

log = logging.getLogger(__name__)


# ------------------------------------------------------------ code editing


@dataclass
class CodeEdit:
    index: int
    value: float = 0.0


def manipulate_code(z, edit: CodeEdit) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if not 0 <= edit.index < z.shape[-1]:
        raise DomainError(f"component index {edit.index} outside [0, {z.shape[-1]})")
    out = z.copy()
    out[..., edit.index] = edit.value
    return out


def traverse_code(z, index: int, radius: float, step: float) -> list[np.ndarray]:
    """Codes with component ``index`` swept over [-radius, radius] in increments of ``step``."""
    if step <= 0:
        raise DomainError("step must be > 0")
    count = int(math.floor(2 * radius / step + 1e-9)) + 1
    return [manipulate_code(z, CodeEdit(index, -radius + i * step)) for i in range(count)]


def interpolate_codes(z_a, z_b, t: float) -> np.ndarray:
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t={t} outside [0, 1]")
    z_a = np.asarray(z_a, dtype=np.float64)
    z_b = np.asarray(z_b, dtype=np.float64)
    if t == 0.0:
        return z_a.copy()
    if t == 1.0:
        return z_b.copy()
    return (1.0 - t) * z_a + t * z_b


# ------------------------------------------------------------------ k-means


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    inertia_history: list = field(default_factory=list)
    iterations: int = 0


def _sq_dists(points, centroids):
    d = (points * points).sum(1)[:, None] - 2.0 * points @ centroids.T + (centroids * centroids).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp(points, k, rng):
    m = points.shape[0]
    chosen = [int(rng.integers(m))]
    d2 = _sq_dists(points, points[chosen])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(m, p=d2 / total))
        else:
            free = np.setdiff1d(np.arange(m), chosen)
            idx = int(rng.choice(free))
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dists(points, points[idx:idx + 1])[:, 0])
    return points[chosen].copy()


def kmeans(points, clusters: int, seed: int = 0, max_iters: int = 300) -> KMeansResult:
    """k-means++ seeding followed by Lloyd iterations until the assignment is stable."""
    points = np.asarray(points, dtype=np.float64)
    m = points.shape[0]
    if not 1 <= clusters <= m:
        raise ConfigError(f"need 1 <= clusters <= {m} points, got {clusters}")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(points, clusters, rng)
    labels = None
    history = []
    it = 0
    for it in range(1, max_iters + 1):
        d = _sq_dists(points, centroids)
        new = d.argmin(axis=1)
        history.append(float(d[np.arange(m), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(clusters):
            members = labels == c
            if members.any():
                centroids[c] = points[members].mean(axis=0)
            else:
                # re-seed on the point worst served by its current centroid
                own = d[np.arange(m), labels]
                far = int(own.argmax())
                centroids[c] = points[far]
                labels[far] = c
    d = _sq_dists(points, centroids)
    labels = d.argmin(axis=1)
    inertia = float(d[np.arange(m), labels].sum())
    return KMeansResult(labels, centroids, inertia, history, it)


# ---------------------------------------------------------------- spectral


@dataclass
class SpectralResult:
    labels: np.ndarray
    eigenvalues: np.ndarray
    embedding: np.ndarray
    components: int


def knn_affinity(points, knn: int, mutual: bool = False) -> np.ndarray:
    """Gaussian affinity on a symmetrised k-nearest-neighbour graph.

    Duplicated points are always linked and do not use up neighbour slots, so a
    block of identical codes cannot become an island. The bandwidth is the
    median non-zero neighbour distance (1.0 if all are zero).
    """
    m = points.shape[0]
    if not 1 <= knn < m:
        raise ConfigError(f"knn must be in [1, {m}), got {knn}")
    d2 = _sq_dists(points, points)
    d2 = 0.5 * (d2 + d2.T)
    sq = (points * points).sum(1)
    # gemm leaves rounding residue on identical rows
    d2[d2 <= 1e-12 * (sq[:, None] + sq[None, :])] = 0.0
    dup = d2 == 0.0
    np.fill_diagonal(dup, False)
    distinct = np.where(d2 > 0, d2, np.inf)
    # ties with the k-th distance are all neighbours
    kth = np.partition(distinct, knn - 1, axis=1)[:, knn - 1:knn]
    adj = distinct <= kth
    adj = (adj & adj.T) if mutual else (adj | adj.T)
    adj |= dup
    knn_d = np.sqrt(d2[adj])
    nz = knn_d[knn_d > 0]
    sigma = float(np.median(nz)) if nz.size else 1.0
    return np.where(adj, np.exp(-d2 / (2.0 * sigma * sigma)), 0.0)


def normalized_laplacian(affinity) -> np.ndarray:
    deg = affinity.sum(axis=1)
    inv = np.zeros_like(deg)
    inv[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    return np.eye(affinity.shape[0]) - inv[:, None] * affinity * inv[None, :]


def smallest_eigenvectors(lap, count: int):
    """Eigenpairs of the ``count`` smallest eigenvalues of a symmetric Laplacian, ascending."""
    vals, vecs = np.linalg.eigh(lap, UPLO="L")
    return vals[:count], vecs[:, :count]


def _component_labels(comp, classes):
    sizes = np.bincount(comp)
    order = np.argsort(-sizes, kind="stable")
    remap = np.full(sizes.size, classes - 1)
    remap[order[:classes - 1]] = np.arange(min(classes - 1, sizes.size))
    return remap[comp]


def spectral_cluster(codes, grid, classes: int, knn: int = 10, sigma_mode: str = "median",
                     seed: int = 0, spatial_weight: float = 0.0, mutual: bool = True) -> SpectralResult:
    """Normalised spectral clustering of per-cell code vectors.

    ``spatial_weight`` > 0 appends scaled (row, col) coordinates to each code.
    """
    if sigma_mode != "median":
        raise ConfigError(f"unsupported sigma_mode {sigma_mode!r}")
    if classes < 2:
        raise ConfigError("classes must be >= 2")
    pts = np.asarray(codes, dtype=np.float64).reshape(-1, np.shape(codes)[-1])
    h, w = grid
    if pts.shape[0] != h * w:
        raise ConfigError(f"{pts.shape[0]} codes do not fill a {h} x {w} grid")
    if spatial_weight > 0:
        yy, xx = np.mgrid[0:h, 0:w]
        pts = np.hstack([pts, spatial_weight * np.stack([yy.ravel(), xx.ravel()], 1)])
    aff = knn_affinity(pts, knn, mutual=mutual)
    ncomp, comp = connected_components(csr_matrix(aff > 0), directed=False)
    if ncomp > classes:
        log.warning("affinity graph has %d components for %d classes; labelling by component", ncomp, classes)
        return SpectralResult(_component_labels(comp, classes), np.zeros(0), np.zeros((h * w, 0)), ncomp)
    vals, vecs = smallest_eigenvectors(normalized_laplacian(aff), classes)
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    emb = vecs / np.where(norms > 0, norms, 1.0)
    labels = kmeans(emb, classes, seed=seed).labels
    return SpectralResult(labels, vals, emb, ncomp)


# ------------------------------------------------------ foreground selection


def boundary_connectivity(labels, classes: int) -> np.ndarray:
    """Per class: (cells on the grid border) / sqrt(cells in class); 0 for empty classes."""
    labels = np.asarray(labels)
    border = np.zeros(labels.shape, dtype=bool)
    border[0, :] = border[-1, :] = border[:, 0] = border[:, -1] = True
    out = np.zeros(classes)
    for c in range(classes):
        area = np.count_nonzero(labels == c)
        if area:
            out[c] = np.count_nonzero((labels == c) & border) / math.sqrt(area)
    return out


def boundary_connectivity_select(labels, classes: int, tau: float = 1.0):
    """Foreground mask: union of classes whose boundary connectivity is below ``tau``."""
    labels = np.asarray(labels)
    bnd = boundary_connectivity(labels, classes)
    present = [c for c in range(classes) if np.any(labels == c)]
    background = {c for c in present if bnd[c] >= tau}
    if present and (not background or len(background) == len(present)):
        background = {max(present, key=lambda c: bnd[c])}
    fg = np.isin(labels, [c for c in present if c not in background])
    return fg, bnd


@dataclass
class SegmentationResult:
    label_grid: np.ndarray
    fg_mask: np.ndarray
    bndcon_per_class: np.ndarray


def segment_codes(codes_grid, classes: int, method: str = "spectral", seed: int = 0,
                  knn: int | None = None, tau: float = 1.0, spatial_weight: float = 0.0) -> SegmentationResult:
    """Cluster an h x w x K code grid and pick foreground by boundary connectivity.

    ``knn=None`` links every pair of cells. Homogeneous regions give hundreds of
    near-identical codes, and a small k then splits them into islands.
    """
    if classes < 2:
        raise ConfigError("classes must be >= 2")
    codes_grid = np.asarray(codes_grid, dtype=np.float64)
    h, w, k = codes_grid.shape
    flat = codes_grid.reshape(h * w, k)
    if method == "spectral":
        k = h * w - 1 if knn is None else min(knn, h * w - 1)
        labels = spectral_cluster(flat, (h, w), classes, knn=k, seed=seed,
                                  spatial_weight=spatial_weight).labels
    elif method == "kmeans":
        labels = kmeans(flat, classes, seed=seed).labels
    else:
        raise ConfigError(f"unknown segmentation method {method!r}")
    grid = labels.reshape(h, w)
    fg, bnd = boundary_connectivity_select(grid, classes, tau)
    return SegmentationResult(grid, fg, bnd)


def segment_image(model, image, classes: int, method: str = "spectral", context: int = 4,
                  **kwargs) -> SegmentationResult:
    """Encode one C x H x W image, sparse-code every cell, and segment the code grid.

    ``context`` latent cells of mirrored image surround the input while encoding
    (see ``SCVAE.codes_grid``); without it the border cells form their own cluster.
    """
    codes = model.codes_grid(np.asarray(image, dtype=model.dtype), context=context)
    return segment_codes(codes, classes, method, **kwargs)


def upsample_mask(mask, factor: int) -> np.ndarray:
    """Nearest-neighbour enlargement of a grid mask to image resolution."""
    return np.kron(np.asarray(mask), np.ones((factor, factor), dtype=np.asarray(mask).dtype))
