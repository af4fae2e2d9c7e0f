"""Point-cloud containers, sampling primitives and patch decomposition."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

NORM_TOL = 1e-6


class CloudError(ValueError):
    pass


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    colors: np.ndarray | None = None
    frame_index: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise CloudError(f"points must have shape (N, 3), got {pts.shape}")
        if len(pts) < 1:
            raise CloudError("a point cloud needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise CloudError("non-finite coordinate in point cloud")
        object.__setattr__(self, "points", pts)
        if self.colors is not None:
            cols = np.asarray(self.colors)
            if cols.shape != pts.shape:
                raise CloudError(f"colors shape {cols.shape} does not match points {pts.shape}")
            object.__setattr__(self, "colors", cols.astype(np.uint8))

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class Patch:
    """Fixed-cardinality point set expressed in its normalized frame.

    ``points * scale + centroid`` recovers the source coordinates.
    """

    points: np.ndarray
    centroid: np.ndarray
    scale: float
    patch_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=np.float64))
        object.__setattr__(self, "centroid", np.asarray(self.centroid, dtype=np.float64).reshape(3))
        if not self.scale > 0:
            raise CloudError(f"patch scale must be positive, got {self.scale}")

    @property
    def n(self) -> int:
        return len(self.points)

    def is_normalized(self, tol: float = NORM_TOL) -> bool:
        return bool(np.all(np.linalg.norm(self.points, axis=1) <= 1.0 + tol))

    def denormalized(self) -> np.ndarray:
        return self.points * self.scale + self.centroid


@dataclass
class PatchDecomposition:
    patches: list[Patch]
    frame_index: int = 0
    # indices into the source cloud, one row per patch
    source_indices: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        ids = [p.patch_id for p in self.patches]
        if ids != list(range(len(ids))):
            raise CloudError("patch ids must be dense and ordered 0..n_patches-1")

    @property
    def n_patches(self) -> int:
        return len(self.patches)

    @property
    def centroids(self) -> np.ndarray:
        return np.stack([p.centroid for p in self.patches])

    @property
    def scales(self) -> np.ndarray:
        return np.array([p.scale for p in self.patches])


def _as_points(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise CloudError(f"expected (N, 3) coordinates, got {pts.shape}")
    return pts


def farthest_point_sample(cloud, k: int, start_index: int = 0) -> np.ndarray:
    """Greedy max-min selection of ``k`` indices; ties go to the lowest index."""
    pts = _as_points(cloud)
    n = len(pts)
    if not 1 <= k <= n:
        raise CloudError(f"k={k} out of range for {n} points")
    if not 0 <= start_index < n:
        raise CloudError(f"start_index={start_index} out of range for {n} points")
    selected = np.empty(k, dtype=np.int64)
    selected[0] = start_index
    mind = np.sum((pts - pts[start_index]) ** 2, axis=1)
    mind[start_index] = -1.0
    for i in range(1, k):
        nxt = int(np.argmax(mind))
        selected[i] = nxt
        d = np.sum((pts - pts[nxt]) ** 2, axis=1)
        np.minimum(mind, d, out=mind)
        mind[nxt] = -1.0
    return selected


def batched_fps(points: np.ndarray, k: int) -> np.ndarray:
    """FPS over a batch ``(B, N, 3)`` starting at index 0 of every item."""
    b, n, _ = points.shape
    if not 1 <= k <= n:
        raise CloudError(f"k={k} out of range for {n} points")
    rows = np.arange(b)
    xs, ys, zs = (np.ascontiguousarray(points[:, :, i]) for i in range(3))
    selected = np.zeros((b, k), dtype=np.int64)
    mind = np.full((b, n), np.inf)
    nxt = np.zeros(b, dtype=np.int64)
    d = np.empty((b, n))
    t = np.empty((b, n))
    for i in range(k):
        selected[:, i] = nxt
        np.subtract(xs, xs[rows, nxt][:, None], out=d)
        np.square(d, out=d)
        np.subtract(ys, ys[rows, nxt][:, None], out=t)
        np.square(t, out=t)
        d += t
        np.subtract(zs, zs[rows, nxt][:, None], out=t)
        np.square(t, out=t)
        d += t
        np.minimum(mind, d, out=mind)
        mind[rows, nxt] = -1.0
        nxt = np.argmax(mind, axis=1)
    return selected


def knn_group(cloud, center, k: int) -> np.ndarray:
    """Indices of the ``k`` points nearest ``center``, ascending distance, ties by index."""
    pts = _as_points(cloud)
    if not 1 <= k <= len(pts):
        raise CloudError(f"k={k} out of range for {len(pts)} points")
    d = np.sum((pts - np.asarray(center, dtype=np.float64)) ** 2, axis=1)
    return np.argsort(d, kind="stable")[:k]


def batched_knn(points: np.ndarray, centers: np.ndarray, k: int) -> np.ndarray:
    """kNN for every center: points ``(B, N, 3)``, centers ``(B, M, 3)`` -> ``(B, M, k)``."""
    d = np.sum((centers[:, :, None, :] - points[:, None, :, :]) ** 2, axis=3)
    return np.argsort(d, axis=2, kind="stable")[:, :, :k]


def normalize_points(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    centroid = points.mean(axis=0)
    centered = points - centroid
    scale = float(np.sqrt(np.max(np.sum(centered**2, axis=1))))
    if scale == 0.0:
        scale = 1.0
    return centered / scale, centroid, scale


def decompose_into_patches(
    cloud, n_per_patch: int = 256, n_patches: int = 200, start_index: int = 0
) -> PatchDecomposition:
    """Split a cloud into kNN patches around FPS seeds, each normalized into the unit sphere.

    Patches may overlap; nothing guarantees every source point is covered.
    """
    pts = _as_points(cloud)
    if len(pts) < n_per_patch:
        raise CloudError(f"cloud has {len(pts)} points, need at least {n_per_patch}")
    if not 1 <= n_patches <= len(pts):
        raise CloudError(f"n_patches={n_patches} out of range")
    seeds = farthest_point_sample(pts, n_patches, start_index)
    patches = []
    members = np.empty((n_patches, n_per_patch), dtype=np.int64)
    for pid, s in enumerate(seeds):
        idx = knn_group(pts, pts[s], n_per_patch)
        members[pid] = idx
        normed, c, scale = normalize_points(pts[idx])
        patches.append(Patch(normed, c, scale, pid))
    frame = cloud.frame_index if isinstance(cloud, PointCloud) else 0
    return PatchDecomposition(patches, frame, members)


def reassemble(decomposition: PatchDecomposition, reconstructed: Sequence) -> PointCloud:
    """Denormalize reconstructed patches with the decomposition's metadata and take the union.

    ``reconstructed`` holds :class:`Patch` objects (ids are checked) or bare
    ``(n, 3)`` arrays in patch-id order.
    """
    if len(reconstructed) != decomposition.n_patches:
        raise CloudError(
            f"got {len(reconstructed)} patches, decomposition has {decomposition.n_patches}"
        )
    out = []
    for ref, rec in zip(decomposition.patches, reconstructed):
        if isinstance(rec, Patch):
            if rec.patch_id != ref.patch_id:
                raise CloudError(f"patch id mismatch: {rec.patch_id} != {ref.patch_id}")
            rec = rec.points
        out.append(np.asarray(rec, dtype=np.float64) * ref.scale + ref.centroid)
    return PointCloud(np.concatenate(out), frame_index=decomposition.frame_index)


# patch dump: header "n cx cy cz scale", then n rows "x y z"

def write_patch(path, patch: Patch) -> None:
    cx, cy, cz = patch.centroid.tolist()
    lines = [f"{patch.n} {cx!r} {cy!r} {cz!r} {float(patch.scale)!r}"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in patch.points.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_patch(path, patch_id: int = 0) -> Patch:
    rows = Path(path).read_text().split("\n")
    head = rows[0].split()
    if len(head) != 5:
        raise CloudError(f"{path}: bad patch header {rows[0]!r}")
    n = int(head[0])
    body = [r for r in rows[1:] if r.strip()]
    if len(body) != n:
        raise CloudError(f"{path}: header declares {n} points, found {len(body)}")
    pts = np.array([[float(v) for v in r.split()] for r in body], dtype=np.float64)
    return Patch(pts.reshape(n, 3), [float(v) for v in head[1:4]], float(head[4]), patch_id)


def load_patch_dir(directory) -> list[Patch]:
    files = sorted(Path(directory).glob("*.txt"))
    return [read_patch(f, i) for i, f in enumerate(files)]
