"""Octree geometry codec used as the traditional baseline.

Stream layout (all integers little-endian)::

    offset size  field
    0      4     magic b"OCT1"
    4      1     format version (1)
    5      1     qp, quantization bits per axis
    6      1     cl, compression level
    7      1     flags; bit 0 set when the payload is range coded
    8      4     u32 original point count
    12     4     u32 occupied voxel count
    16     24    3 x f64 bounding-cube origin
    40     8     f64 bounding-cube edge length
    48     4     u32 occupancy byte count
    52     4     u32 payload byte count
    56     ...   payload

The occupancy stream holds one byte per internal node, breadth first, nodes
of a level in Morton order; bit ``i`` marks child octant
``i = 4*x_bit + 2*y_bit + z_bit``. At ``cl >= 5`` the stream is range coded
unless that would make it larger.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import rangecoder
from .cloud import PointCloud

MAGIC = b"OCT1"
VERSION = 1
_HEADER = struct.Struct("<4sBBBBII3ddII")
ENTROPY_LEVEL = 5


class OctreeError(ValueError):
    pass


@dataclass(frozen=True)
class OctreeConfig:
    qp: int = 8
    cl: int = 10

    def __post_init__(self):
        if not 1 <= self.qp <= 16:
            raise OctreeError(f"qp must lie in [1, 16], got {self.qp}")
        if not 0 <= self.cl <= 10:
            raise OctreeError(f"cl must lie in [0, 10], got {self.cl}")


@dataclass(frozen=True)
class EncodedCloud:
    qp: int
    cl: int
    entropy_coded: bool
    point_count: int
    voxel_count: int
    origin: tuple[float, float, float]
    extent: float
    raw_len: int
    payload: bytes

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(MAGIC, VERSION, self.qp, self.cl, int(self.entropy_coded),
                            self.point_count, self.voxel_count, *self.origin, self.extent,
                            self.raw_len, len(self.payload))
        return head + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncodedCloud":
        if len(data) < _HEADER.size:
            raise OctreeError(f"truncated header: {len(data)} < {_HEADER.size} bytes")
        (magic, version, qp, cl, flags, npts, nvox, ox, oy, oz, ext,
         raw_len, plen) = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise OctreeError("bad magic")
        if version != VERSION:
            raise OctreeError(f"unsupported stream version {version}")
        payload = data[_HEADER.size :]
        if len(payload) != plen:
            raise OctreeError(f"truncated stream: payload {len(payload)} of {plen} bytes")
        return cls(qp, cl, bool(flags & 1), npts, nvox, (ox, oy, oz), ext, raw_len, payload)

    @property
    def nbytes(self) -> int:
        return _HEADER.size + len(self.payload)

    def occupancy(self) -> bytes:
        if self.entropy_coded:
            return rangecoder.decode(self.payload, self.raw_len)
        return self.payload


def bounding_cube(points: np.ndarray) -> tuple[np.ndarray, float]:
    lo = points.min(axis=0)
    return lo, float(np.max(points.max(axis=0) - lo))


def _morton(v: np.ndarray, qp: int) -> np.ndarray:
    code = np.zeros(len(v), dtype=np.int64)
    for bit in range(qp):
        for axis, off in ((0, 2), (1, 1), (2, 0)):
            code |= ((v[:, axis] >> bit) & 1) << (3 * bit + off)
    return code


def _demorton(code: np.ndarray, qp: int) -> np.ndarray:
    v = np.zeros((len(code), 3), dtype=np.int64)
    for bit in range(qp):
        for axis, off in ((0, 2), (1, 1), (2, 0)):
            v[:, axis] |= ((code >> (3 * bit + off)) & 1) << bit
    return v


def quantize(points: np.ndarray, origin, extent: float, qp: int) -> np.ndarray:
    side = 1 << qp
    if extent == 0:
        return np.zeros(points.shape, dtype=np.int64)
    v = np.floor((points - np.asarray(origin)) / extent * side).astype(np.int64)
    return np.clip(v, 0, side - 1)


def octree_encode(cloud, config: OctreeConfig = OctreeConfig(), bbox=None) -> EncodedCloud:
    """Quantize to ``qp`` bits per axis inside a bounding cube and emit the occupancy octree.

    ``bbox`` is an optional ``(origin, edge)`` cube; by default the tight cube
    of the input is used.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or len(pts) == 0:
        raise OctreeError("cannot encode an empty cloud")
    if not np.all(np.isfinite(pts)):
        raise OctreeError("non-finite coordinates")
    if bbox is None:
        origin, extent = bounding_cube(pts)
    else:
        origin, extent = np.asarray(bbox[0], dtype=np.float64), float(bbox[1])
        if extent < 0 or np.any(pts < origin) or np.any(pts > origin + extent):
            raise OctreeError("points fall outside the given bounding cube")
    qp = config.qp
    codes = np.unique(_morton(quantize(pts, origin, extent, qp), qp))
    chunks = []
    for level in range(qp):
        shift = 3 * (qp - 1 - level)
        prefix = codes >> (shift + 3)
        child = (codes >> shift) & 7
        starts = np.concatenate([[0], np.flatnonzero(np.diff(prefix)) + 1])
        chunks.append(np.bitwise_or.reduceat(np.left_shift(1, child), starts).astype(np.uint8))
    occupancy = np.concatenate(chunks).tobytes()
    payload, coded = occupancy, False
    if config.cl >= ENTROPY_LEVEL:
        packed = rangecoder.encode(occupancy)
        if len(packed) < len(occupancy):
            payload, coded = packed, True
    return EncodedCloud(qp, config.cl, coded, len(pts), len(codes),
                        tuple(float(o) for o in origin), extent, len(occupancy), payload)


def octree_decode(encoded) -> PointCloud:
    """One point per occupied voxel, at the voxel center."""
    if isinstance(encoded, (bytes, bytearray)):
        encoded = EncodedCloud.from_bytes(bytes(encoded))
    occ = np.frombuffer(encoded.occupancy(), dtype=np.uint8)
    if len(occ) != encoded.raw_len:
        raise OctreeError(f"truncated occupancy: {len(occ)} of {encoded.raw_len} bytes")
    nodes = np.zeros(1, dtype=np.int64)
    pos = 0
    for level in range(encoded.qp):
        if pos + len(nodes) > len(occ):
            raise OctreeError(f"truncated occupancy stream at level {level} (byte {pos})")
        block = occ[pos : pos + len(nodes)]
        if np.any(block == 0):
            raise OctreeError(f"empty internal node at level {level}")
        pos += len(nodes)
        bits = np.unpackbits(block[:, None], axis=1, bitorder="little")
        r, c = np.nonzero(bits)
        nodes = nodes[r] * 8 + c
    if pos != len(occ):
        raise OctreeError(f"{len(occ) - pos} trailing occupancy bytes")
    if len(nodes) != encoded.voxel_count:
        raise OctreeError(
            f"decoded {len(nodes)} voxels, header declares {encoded.voxel_count}"
        )
    v = _demorton(nodes, encoded.qp)
    size = encoded.extent / (1 << encoded.qp)
    pts = np.asarray(encoded.origin) + (v + 0.5) * size if encoded.extent > 0 else \
        np.repeat(np.asarray(encoded.origin)[None], len(v), axis=0)
    return PointCloud(pts)


def error_bound(extent: float, qp: int) -> float:
    """Largest distance from a point to its voxel center."""
    return np.sqrt(3.0) / 2.0 * extent / (1 << qp)


def compression_ratio(cloud, encoded: EncodedCloud, bytes_per_point: int = 12) -> float:
    n = len(cloud) if not isinstance(cloud, int) else cloud
    return n * bytes_per_point / encoded.nbytes
