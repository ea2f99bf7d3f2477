import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from scvae.downstream import (CodeEdit, boundary_connectivity, boundary_connectivity_select, interpolate_codes,
                              kmeans, knn_affinity, manipulate_code, normalized_laplacian, segment_codes,
                              smallest_eigenvectors, spectral_cluster, traverse_code, upsample_mask)
from scvae.errors import ConfigError, DomainError


def same_partition(a, b):
    a, b = np.asarray(a), np.asarray(b)
    pairs = set(zip(a.tolist(), b.tolist()))
    return len(pairs) == len(set(a.tolist())) == len(set(b.tolist()))


# ------------------------------------------------------------ code edits


def test_manipulate_identity(rng):
    z = rng.standard_normal(8)
    np.testing.assert_array_equal(manipulate_code(z, CodeEdit(3, z[3])), z)


def test_manipulate_sets_component():
    out = manipulate_code(np.zeros(4), CodeEdit(0, 5.0))
    np.testing.assert_array_equal(out, [5, 0, 0, 0])


def test_manipulate_bad_index():
    with pytest.raises(DomainError):
        manipulate_code(np.zeros(4), CodeEdit(4, 1.0))
    with pytest.raises(DomainError):
        manipulate_code(np.zeros(4), CodeEdit(-1, 1.0))


def test_traversal_three_codes(rng):
    z = rng.standard_normal(6)
    codes = traverse_code(z, 2, 1.5, 1.5)
    assert len(codes) == 3
    assert [c[2] for c in codes] == [-1.5, 0.0, 1.5]
    for c in codes:
        np.testing.assert_array_equal(np.delete(c, 2), np.delete(z, 2))


def test_interpolate_endpoints_and_midpoint(rng):
    a, b = rng.standard_normal(5), rng.standard_normal(5)
    np.testing.assert_array_equal(interpolate_codes(a, b, 0.0), a)
    np.testing.assert_array_equal(interpolate_codes(a, b, 1.0), b)
    np.testing.assert_array_equal(interpolate_codes(np.eye(3)[0], np.eye(3)[1], 0.5), [0.5, 0.5, 0])


def test_interpolate_out_of_range():
    with pytest.raises(DomainError):
        interpolate_codes(np.zeros(2), np.ones(2), 1.5)


@given(arrays(np.float64, 6, elements=st.floats(-1e3, 1e3)), arrays(np.float64, 6, elements=st.floats(-1e3, 1e3)),
       st.floats(0, 1))
def test_interpolate_componentwise_convex(a, b, t):
    out = interpolate_codes(a, b, t)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    slack = 1e-12 * (1 + np.abs(lo) + np.abs(hi))
    assert np.all(out >= lo - slack) and np.all(out <= hi + slack)


# ------------------------------------------------------------------ kmeans


def blobs(rng, m=20):
    a = rng.normal(0.0, 0.01, (m, 3))
    b = rng.normal(0.0, 0.01, (m, 3)) + np.array([10.0, 0, 0])
    return np.vstack([a, b]), np.repeat([0, 1], m)


def test_kmeans_separated_blobs(rng):
    pts, truth = blobs(rng)
    assert same_partition(kmeans(pts, 2, seed=5).labels, truth)


def test_kmeans_clusters_equal_points(rng):
    pts = rng.standard_normal((7, 2))
    res = kmeans(pts, 7, seed=0)
    assert res.inertia == 0.0
    assert len(set(res.labels.tolist())) == 7


def test_kmeans_too_many_clusters():
    with pytest.raises(ConfigError):
        kmeans(np.zeros((3, 2)), 4)


def test_kmeans_duplicated_dataset(rng):
    pts, _ = blobs(rng)
    a = kmeans(pts, 2, seed=3).centroids
    b = kmeans(np.vstack([pts, pts]), 2, seed=3).centroids
    # centroid order may differ with a different seeding draw
    d = np.abs(a[:, None, :] - b[None, :, :]).max(-1)
    assert d.min(axis=1).max() <= 1e-9


def test_kmeans_deterministic(rng):
    pts = rng.standard_normal((50, 4))
    a, b = kmeans(pts, 4, seed=11), kmeans(pts, 4, seed=11)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.centroids.tobytes() == b.centroids.tobytes()


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.integers(2, 6))
def test_kmeans_inertia_non_increasing(seed, k):
    pts = np.random.default_rng(seed).standard_normal((40, 3))
    h = kmeans(pts, k, seed=seed).inertia_history
    assert all(b <= a + 1e-9 for a, b in zip(h, h[1:]))


def test_kmeans_empty_cluster_reseeded():
    # identical points force empty clusters after the first assignment
    pts = np.vstack([np.zeros((5, 2)), np.ones((1, 2)) * 3])
    res = kmeans(pts, 3, seed=0)
    assert res.labels.shape == (6,)
    assert np.isfinite(res.centroids).all()


# ---------------------------------------------------------------- spectral


def test_spectral_two_identical_blocks():
    codes = np.vstack([np.tile([1.0, 0, 0], (8, 1)), np.tile([0, 0, 5.0], (8, 1))])
    labels = spectral_cluster(codes, (4, 4), 2, knn=3).labels
    assert same_partition(labels, np.repeat([0, 1], 8))


def test_spectral_concentric_rings(rng):
    t = rng.uniform(0, 2 * np.pi, 120)
    r = np.where(np.arange(120) < 60, 1.0, 4.0)
    pts = np.stack([r * np.cos(t), r * np.sin(t)], 1) + rng.normal(0, 0.05, (120, 2))
    labels = spectral_cluster(pts, (10, 12), 2, knn=8).labels
    assert same_partition(labels, (np.arange(120) >= 60).astype(int))
    # kmeans alone cannot separate rings
    assert not same_partition(kmeans(pts, 2, seed=0).labels, (np.arange(120) >= 60).astype(int))


def test_laplacian_eigenpairs(rng):
    pts = np.vstack([rng.normal(0, 1, (32, 3)), rng.normal(4, 1, (32, 3))])
    aff = knn_affinity(pts, 6)
    lap = normalized_laplacian(aff)
    vals, vecs = smallest_eigenvectors(lap, 3)
    assert np.all(np.diff(vals) >= 0)
    np.testing.assert_allclose(lap @ vecs, vecs * vals, atol=1e-10)
    np.testing.assert_allclose(vecs.T @ vecs, np.eye(3), atol=1e-10)
    # the null vector of L_sym is sqrt(degree)
    assert abs(vals[0]) < 1e-10
    d = np.sqrt(aff.sum(1))
    assert abs(abs(vecs[:, 0] @ d) - np.linalg.norm(d)) < 1e-8


def test_spectral_validation():
    with pytest.raises(ConfigError):
        spectral_cluster(np.zeros((4, 2)), (2, 2), 1)
    with pytest.raises(ConfigError):
        spectral_cluster(np.zeros((4, 2)), (2, 2), 2, knn=4)


def test_spectral_disconnected_warns(caplog):
    codes = np.repeat(np.eye(3) * 10, 4, axis=0) + np.random.default_rng(0).normal(0, 0.01, (12, 3))
    with caplog.at_level(logging.WARNING, logger="scvae.downstream"):
        res = spectral_cluster(codes, (3, 4), 2, knn=2, mutual=False)
    assert "components" in caplog.text
    assert res.components == 3
    assert set(res.labels.tolist()) == {0, 1}


@settings(max_examples=10)
@given(st.permutations(list(range(24))))
def test_spectral_permutation_invariance(perm):
    rng = np.random.default_rng(0)
    pts = np.vstack([rng.normal(0, 0.1, (12, 3)), rng.normal(3, 0.1, (12, 3))])
    perm = np.array(perm)
    a = spectral_cluster(pts, (4, 6), 2, knn=4, seed=2).labels
    b = spectral_cluster(pts[perm], (4, 6), 2, knn=4, seed=2).labels
    assert same_partition(a[perm], b)


def test_affinity_symmetric_with_median_bandwidth(rng):
    pts = rng.standard_normal((30, 4))
    a = knn_affinity(pts, 5)
    np.testing.assert_array_equal(a, a.T)
    assert np.all(np.diag(a) == 0)
    mutual = knn_affinity(pts, 5, mutual=True)
    assert np.count_nonzero(mutual) <= np.count_nonzero(a)


def test_knn_duplicates_do_not_fill_slots():
    # 12 copies of one point plus a cloud: the copies must still reach the cloud
    rng = np.random.default_rng(1)
    pts = np.vstack([np.tile([[1.0, 2.0, 3.0]], (12, 1)), rng.normal(0, 1, (20, 3))])
    a = knn_affinity(pts, 3)
    assert np.all(a[:12, :12][~np.eye(12, dtype=bool)] == 1.0)
    assert np.all((a[:12, 12:] > 0).sum(1) >= 3)
    assert connected_components(csr_matrix(a > 0), directed=False)[0] == 1


# ------------------------------------------------------ boundary selection


def test_centered_square_is_foreground():
    labels = np.zeros((8, 8), int)
    labels[2:6, 2:6] = 1
    fg, bnd = boundary_connectivity_select(labels, 2)
    assert bnd[1] == 0.0
    np.testing.assert_array_equal(fg, labels == 1)


def test_full_frame_single_class():
    for h, w in [(3, 3), (5, 7), (16, 16)]:
        bnd = boundary_connectivity(np.zeros((h, w), int), 2)
        assert bnd[0] == pytest.approx((2 * h + 2 * w - 4) / math.sqrt(h * w))
        assert bnd[0] >= 1.0 and bnd[1] == 0.0
        fg, _ = boundary_connectivity_select(np.zeros((h, w), int), 2)
        assert not fg.any()


def test_border_ring_class():
    labels = np.ones((8, 8), int)
    labels[1:-1, 1:-1] = 0
    bnd = boundary_connectivity(labels, 2)
    assert bnd[1] == pytest.approx(28 / math.sqrt(28))
    fg, _ = boundary_connectivity_select(labels, 2)
    np.testing.assert_array_equal(fg, labels == 0)


def test_all_background_keeps_max_as_background():
    labels = np.zeros((6, 6), int)
    labels[:, 3:] = 1  # both halves touch the border heavily
    fg, bnd = boundary_connectivity_select(labels, 2)
    assert bnd.min() >= 1.0
    assert fg.sum() == 18


def direct_bndcon(labels, classes):
    h, w = labels.shape
    out = []
    for c in range(classes):
        border = sum(1 for i in range(h) for j in range(w)
                     if labels[i, j] == c and (i in (0, h - 1) or j in (0, w - 1)))
        area = int((labels == c).sum())
        out.append(border / math.sqrt(area) if area else 0.0)
    return np.array(out)


@given(arrays(np.int64, (5, 6), elements=st.integers(0, 2)))
def test_bndcon_direct_count_oracle(labels):
    np.testing.assert_allclose(boundary_connectivity(labels, 3), direct_bndcon(labels, 3), atol=1e-12)
    big = np.kron(labels, np.ones((2, 2), int))
    np.testing.assert_allclose(boundary_connectivity(big, 3), direct_bndcon(big, 3), atol=1e-12)


# ---------------------------------------------------------------- segment


def two_region_codes(rng, h=8, w=8):
    codes = np.zeros((h, w, 6))
    codes[:, : w // 2, 0] = 1.0
    codes[:, w // 2:, 3] = 1.0
    return codes + rng.normal(0, 0.01, codes.shape)


@pytest.mark.parametrize("method", ["spectral", "kmeans"])
def test_segment_codes_midline(rng, method):
    res = segment_codes(two_region_codes(rng), 2, method=method)
    truth = np.zeros((8, 8), int)
    truth[:, 4:] = 1
    agree = max(np.mean(res.label_grid == truth), np.mean(res.label_grid == 1 - truth))
    assert agree >= 0.9
    assert res.bndcon_per_class.shape == (2,)


def test_segment_constant_codes():
    res = segment_codes(np.ones((6, 6, 4)), 2)
    assert res.label_grid.shape == (6, 6)
    assert not res.fg_mask.all()


def test_segment_bad_method(rng):
    with pytest.raises(ConfigError):
        segment_codes(two_region_codes(rng), 2, method="dbscan")


def test_upsample_mask():
    m = np.array([[1, 0], [0, 1]], bool)
    up = upsample_mask(m, 2)
    assert up.shape == (4, 4) and up.dtype == bool
    np.testing.assert_array_equal(up[:2, :2], True)
