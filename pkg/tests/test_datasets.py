import numpy as np
import pytest

from holopcv.cloud import read_patch
from holopcv.datasets import (SHAPES, gen_dataset, make_shape, patch_set, shape_patches,
                              torus_distance)


def test_sphere_dataset_bit_identical(tmp_path):
    a = gen_dataset(["sphere"], 100, 42, tmp_path / "a", n_points=4096)
    b = gen_dataset(["sphere"], 100, 42, tmp_path / "b", n_points=4096)
    assert len(a) == 100
    for p, q in zip(a, b):
        assert p.read_bytes() == q.read_bytes()


@pytest.mark.parametrize("shape", SHAPES)
def test_patches_normalized(shape, tmp_path):
    paths = gen_dataset([shape], 8, 3, tmp_path, n_points=4096)
    for p in paths:
        patch = read_patch(p)
        assert patch.n == 256
        assert patch.is_normalized()


def test_torus_patches_on_surface():
    for patch in shape_patches("torus", 20, 5, n_points=8192):
        assert torus_distance(patch.denormalized()).mean() < 1e-6


def test_noise_moves_points_off_surface():
    clean = make_shape("torus", 2048, 0)
    noisy = make_shape("torus", 2048, 0, noise=0.01)
    assert torus_distance(clean.points).max() < 1e-12
    assert 0.003 < torus_distance(noisy.points).mean() < 0.02


def test_sphere_points_on_unit_sphere():
    pts = make_shape("sphere", 1000).points
    assert np.allclose(np.linalg.norm(pts, axis=1), 1.0)


def test_cube_points_on_faces():
    pts = make_shape("cube", 6000).points
    assert np.allclose(np.abs(pts).max(axis=1), 1.0)


def test_seed_changes_patches():
    a = patch_set(["sphere", "cube"], 5, 1, n_points=4096)
    b = patch_set(["sphere", "cube"], 5, 2, n_points=4096)
    assert a.shape == (10, 256, 3)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, patch_set(["sphere", "cube"], 5, 1, n_points=4096))


def test_unknown_shape(tmp_path):
    with pytest.raises(ValueError, match="unknown shape"):
        make_shape("teapot")
    with pytest.raises(ValueError):
        gen_dataset(["sphere", "teapot"], 1, 0, tmp_path)
    with pytest.raises(ValueError):
        gen_dataset(["sphere"], 0, 0, tmp_path)
