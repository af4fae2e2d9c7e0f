import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from holopcv.cloud import (CloudError, Patch, PatchDecomposition, PointCloud, batched_fps,
                           batched_knn, decompose_into_patches, farthest_point_sample,
                           knn_group, load_patch_dir, normalize_points, read_patch,
                           reassemble, write_patch)

from conftest import fibonacci_sphere

SQUARE = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)

coords = arrays(np.float64, st.tuples(st.integers(2, 40), st.just(3)),
                elements=st.floats(-10, 10, allow_nan=False, width=32))


def fps_oracle(pts, k, start):
    """Textbook max-min selection with explicit lowest-index tie breaking."""
    sel = [start]
    for _ in range(1, k):
        best, best_d = None, -1.0
        for i in range(len(pts)):
            if i in sel:
                continue
            d = min(float(np.sum((pts[i] - pts[j]) ** 2)) for j in sel)
            if d > best_d:
                best, best_d = i, d
        sel.append(best)
    return sel


def test_pointcloud_validation():
    with pytest.raises(CloudError):
        PointCloud(np.zeros((0, 3)))
    with pytest.raises(CloudError):
        PointCloud(np.zeros((4, 2)))
    with pytest.raises(CloudError):
        PointCloud(np.array([[0.0, np.nan, 0.0]]))
    with pytest.raises(CloudError):
        PointCloud(np.zeros((3, 3)), colors=np.zeros((2, 3)))
    c = PointCloud(np.zeros((3, 3)), colors=np.full((3, 3), 7))
    assert c.colors.dtype == np.uint8 and len(c) == 3


def test_fps_square_examples():
    assert farthest_point_sample(SQUARE, 2, 0).tolist() == [0, 3]
    assert farthest_point_sample(SQUARE, 3, 0).tolist() == [0, 3, 1]


def test_fps_exhaustion_is_permutation():
    sel = farthest_point_sample(SQUARE, 4, 2)
    assert sorted(sel.tolist()) == [0, 1, 2, 3] and sel[0] == 2


def test_fps_range_errors():
    with pytest.raises(CloudError):
        farthest_point_sample(SQUARE, 0)
    with pytest.raises(CloudError):
        farthest_point_sample(SQUARE, 5)
    with pytest.raises(CloudError):
        farthest_point_sample(SQUARE, 2, start_index=4)


@settings(max_examples=60, deadline=None)
@given(coords, st.data())
def test_fps_matches_oracle(pts, data):
    k = data.draw(st.integers(1, len(pts)))
    start = data.draw(st.integers(0, len(pts) - 1))
    sel = farthest_point_sample(pts, k, start)
    assert sel.tolist() == fps_oracle(pts, k, start)
    assert len(set(sel.tolist())) == k


def test_fps_spread_beats_random_subsets(rng):
    pts = rng.random((300, 3))
    k = 12

    def min_pair(idx):
        p = pts[idx]
        d = np.linalg.norm(p[:, None] - p[None], axis=2)
        return d[np.triu_indices(k, 1)].min()

    fps_val = min_pair(farthest_point_sample(pts, k))
    rand_vals = [min_pair(rng.choice(300, k, replace=False)) for _ in range(1000)]
    assert fps_val >= np.mean(rand_vals)


def test_batched_fps_matches_single(rng):
    x = rng.random((5, 64, 3))
    out = batched_fps(x, 20)
    for b in range(5):
        assert out[b].tolist() == farthest_point_sample(x[b], 20, 0).tolist()


def test_knn_examples():
    line = np.array([[1, 0, 0], [2, 0, 0], [3, 0, 0]], dtype=float)
    assert knn_group(line, (0, 0, 0), 2).tolist() == [0, 1]
    assert sorted(knn_group(line, (0, 0, 0), 3).tolist()) == [0, 1, 2]
    with pytest.raises(CloudError):
        knn_group(line, (0, 0, 0), 4)


def test_knn_ties_break_by_index():
    pts = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, 0, 2]], dtype=float)
    assert knn_group(pts, (0, 0, 0), 3).tolist() == [0, 1, 2]


@settings(max_examples=60, deadline=None)
@given(coords, st.data())
def test_knn_matches_exhaustive_scan(pts, data):
    k = data.draw(st.integers(1, len(pts)))
    c = pts[data.draw(st.integers(0, len(pts) - 1))] + 0.25
    got = knn_group(pts, c, k)
    d = [float(np.sum((p - c) ** 2)) for p in pts]
    expected = sorted(range(len(pts)), key=lambda i: (d[i], i))[:k]
    assert got.tolist() == expected


def test_knn_random_50_point_oracle(rng):
    pts = rng.random((50, 3))
    c = rng.random(3)
    brute = sorted(range(50), key=lambda i: np.linalg.norm(pts[i] - c))[:7]
    assert knn_group(pts, c, 7).tolist() == brute


def test_batched_knn_matches_single(rng):
    pts = rng.random((3, 40, 3))
    centers = pts[:, :5]
    out = batched_knn(pts, centers, 6)
    for b, m in itertools.product(range(3), range(5)):
        assert out[b, m].tolist() == knn_group(pts[b], centers[b, m], 6).tolist()


def test_normalization_fixed_point():
    pts = np.array([[1, 0, 0], [-1, 0, 0], [0, 0.5, 0], [0, -0.5, 0]], dtype=float)
    normed, c, s = normalize_points(pts)
    assert s == 1.0 and np.all(c == 0) and np.array_equal(normed, pts)


@settings(max_examples=80, deadline=None)
@given(coords)
def test_normalize_denormalize_identity(pts):
    normed, c, s = normalize_points(pts)
    assert np.all(np.linalg.norm(normed, axis=1) <= 1 + 1e-6)
    assert np.allclose(normed * s + c, pts, atol=1e-6)


def test_decompose_single_patch_exhaustion(rng):
    pts = rng.normal(size=(256, 3)) * 3 + 5
    dec = decompose_into_patches(pts, 256, 1)
    assert dec.n_patches == 1
    p = dec.patches[0]
    assert sorted(dec.source_indices[0].tolist()) == list(range(256))
    assert p.is_normalized()
    assert np.allclose(p.denormalized()[np.argsort(dec.source_indices[0])], pts, atol=1e-9)


def test_decompose_sphere_defaults():
    cloud = PointCloud(fibonacci_sphere(51200) * 4.0)
    dec = decompose_into_patches(cloud)
    assert dec.n_patches == 200
    assert [p.patch_id for p in dec.patches] == list(range(200))
    for p in dec.patches:
        assert p.n == 256 and p.scale > 0
        assert np.max(np.linalg.norm(p.points, axis=1)) <= 1 + 1e-6


def test_decompose_too_small():
    with pytest.raises(CloudError):
        decompose_into_patches(np.zeros((100, 3)), 256, 1)


def test_reassemble_affine_example():
    dec = PatchDecomposition([Patch(np.array([[0.5, 0, 0]]), (1, 1, 1), 2.0, 0)])
    out = reassemble(dec, [np.array([[0.5, 0, 0]])])
    assert np.allclose(out.points, [[2, 1, 1]])


def test_reassemble_round_trip_and_coverage(rng):
    pts = rng.random((10_000, 3)) * [4, 2, 1]
    dec = decompose_into_patches(PointCloud(pts, frame_index=7))
    out = reassemble(dec, dec.patches)
    assert out.frame_index == 7
    covered = np.unique(dec.source_indices)
    assert len(covered) / len(pts) >= 0.99
    # every reassembled row equals its source point
    assert np.max(np.abs(out.points - pts[dec.source_indices.ravel()])) < 1e-6


def test_reassemble_rejects_mismatch():
    dec = PatchDecomposition([Patch(np.zeros((2, 3)), (0, 0, 0), 1.0, 0),
                              Patch(np.zeros((2, 3)), (0, 0, 0), 1.0, 1)])
    with pytest.raises(CloudError):
        reassemble(dec, [np.zeros((2, 3))])
    with pytest.raises(CloudError):
        reassemble(dec, [Patch(np.zeros((2, 3)), (0, 0, 0), 1.0, 1),
                         Patch(np.zeros((2, 3)), (0, 0, 0), 1.0, 0)])


def test_decomposition_requires_dense_ids():
    with pytest.raises(CloudError):
        PatchDecomposition([Patch(np.zeros((2, 3)), (0, 0, 0), 1.0, 3)])


def test_patch_dump_round_trip(tmp_path, rng):
    pts, c, s = normalize_points(rng.normal(size=(256, 3)))
    p = Patch(pts, c, s, 0)
    write_patch(tmp_path / "a.txt", p)
    write_patch(tmp_path / "b.txt", Patch(pts[::-1], c, s, 1))
    q = read_patch(tmp_path / "a.txt")
    assert np.array_equal(q.points, p.points) and np.array_equal(q.centroid, p.centroid)
    assert q.scale == p.scale
    assert (tmp_path / "a.txt").read_text().split("\n")[0].split()[0] == "256"
    loaded = load_patch_dir(tmp_path)
    assert [x.patch_id for x in loaded] == [0, 1]


def test_patch_dump_count_mismatch(tmp_path):
    (tmp_path / "bad.txt").write_text("3 0 0 0 1\n0 0 0\n1 0 0\n")
    with pytest.raises(CloudError):
        read_patch(tmp_path / "bad.txt")
