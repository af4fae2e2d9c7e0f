"""Synthetic shape clouds and patch datasets.

Surfaces are sampled on regular parameter lattices (a Fibonacci spiral for
the sphere) so patch geometry is reproducible exactly; ``noise`` adds
isotropic Gaussian jitter afterwards.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .cloud import Patch, PointCloud, decompose_into_patches, write_patch

SHAPES = ("sphere", "cube", "torus", "cylinder", "gaussian-blobs")
TORUS_R, TORUS_r = 1.0, 0.4


def _sphere(n, rng):
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + 5.0**0.5) * i
    return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], 1)


def _cube(n, rng):
    m = max(1, int(round(np.sqrt(n / 6.0))))
    g = (np.arange(m) + 0.5) / m * 2.0 - 1.0
    u, v = [a.ravel() for a in np.meshgrid(g, g, indexing="ij")]
    one = np.ones_like(u)
    faces = []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            cols = [u, v]
            cols.insert(axis, sign * one)
            faces.append(np.stack(cols, 1))
    return np.concatenate(faces)


def _torus(n, rng):
    nv = max(3, int(round(np.sqrt(n * TORUS_r / TORUS_R))))
    nu = max(3, n // nv)
    u = np.arange(nu) / nu * 2 * np.pi
    v = np.arange(nv) / nv * 2 * np.pi
    u, v = [a.ravel() for a in np.meshgrid(u, v, indexing="ij")]
    ring = TORUS_R + TORUS_r * np.cos(v)
    return np.stack([ring * np.cos(u), ring * np.sin(u), TORUS_r * np.sin(v)], 1)


def _cylinder(n, rng):
    nh = max(2, int(round(np.sqrt(n / np.pi))))
    na = max(3, n // nh)
    a = np.arange(na) / na * 2 * np.pi
    z = (np.arange(nh) + 0.5) / nh * 2.0 - 1.0
    a, z = [x.ravel() for x in np.meshgrid(a, z, indexing="ij")]
    return np.stack([np.cos(a), np.sin(a), z], 1)


def _blobs(n, rng, k=4):
    centers = rng.uniform(-1.0, 1.0, size=(k, 3))
    which = np.arange(n) % k
    return centers[which] + rng.normal(0.0, 0.25, size=(n, 3))


_BUILDERS = {"sphere": _sphere, "cube": _cube, "torus": _torus,
             "cylinder": _cylinder, "gaussian-blobs": _blobs}


def torus_distance(points: np.ndarray) -> np.ndarray:
    """Unsigned distance from points to the canonical torus surface."""
    ring = np.hypot(points[:, 0], points[:, 1]) - TORUS_R
    return np.abs(np.hypot(ring, points[:, 2]) - TORUS_r)


def make_shape(name: str, n_points: int = 16384, seed: int = 0, noise: float = 0.0) -> PointCloud:
    if name not in _BUILDERS:
        raise ValueError(f"unknown shape {name!r}; choose from {', '.join(SHAPES)}")
    rng = np.random.default_rng(seed)
    pts = _BUILDERS[name](n_points, rng)
    if noise > 0:
        pts = pts + rng.normal(0.0, noise, size=pts.shape)
    return PointCloud(pts)


def shape_patches(name: str, n_patches: int, seed: int, n_per_patch: int = 256,
                  n_points: int = 16384, noise: float = 0.0) -> list[Patch]:
    """Normalized kNN patches of one shape; the seed picks the FPS start point."""
    cloud = make_shape(name, n_points, seed, noise)
    start = int(np.random.default_rng(seed + 7919).integers(len(cloud)))
    return decompose_into_patches(cloud, n_per_patch, n_patches, start).patches


def patch_set(shapes, patches_per_shape: int, seed: int, **kw) -> np.ndarray:
    """Stacked ``(len(shapes) * patches_per_shape, n, 3)`` array, shapes in given order."""
    out = []
    for j, name in enumerate(shapes):
        out += [p.points for p in shape_patches(name, patches_per_shape, seed * 1000 + j, **kw)]
    return np.stack(out)


def gen_dataset(shapes, patches_per_shape: int, seed: int, out_dir, **kw) -> list[Path]:
    """Write patches in the patch dump format, one file per patch."""
    if patches_per_shape < 1:
        raise ValueError("patches_per_shape must be positive")
    for s in shapes:
        if s not in _BUILDERS:
            raise ValueError(f"unknown shape {s!r}; choose from {', '.join(SHAPES)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for j, name in enumerate(shapes):
        for i, p in enumerate(shape_patches(name, patches_per_shape, seed * 1000 + j, **kw)):
            path = out / f"{name}_{i:04d}.txt"
            write_patch(path, p)
            paths.append(path)
    return paths
