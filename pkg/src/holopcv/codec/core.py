"""Patch-level encode/decode and the transmitted feature payload."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..cloud import NORM_TOL, Patch
from . import network
from .model import CodecModel, ModelSpec


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray  # (h, w)
    wire_bits: int = 32

    def __post_init__(self):
        if self.wire_bits not in (16, 32):
            raise CodecError(f"wire precision must be 16 or 32 bits, got {self.wire_bits}")
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or not np.all(np.isfinite(v)):
            raise CodecError("feature matrix must be a finite 2-D array")
        # values are held exactly as they travel on the wire
        wire = np.float32 if self.wire_bits == 32 else np.float16
        with np.errstate(over="ignore"):
            v = v.astype(wire).astype(np.float64)
        if not np.all(np.isfinite(v)):
            raise CodecError(f"feature value overflows {self.wire_bits}-bit wire precision")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    @property
    def nbytes(self) -> int:
        return self.values.size * self.wire_bits // 8

    def to_bytes(self) -> bytes:
        dt = "<f4" if self.wire_bits == 32 else "<f2"
        return self.values.astype(dt).tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, h: int, w: int, wire_bits: int = 32) -> "FeatureMatrix":
        dt = "<f4" if wire_bits == 32 else "<f2"
        return cls(np.frombuffer(data, dtype=dt).astype(np.float64).reshape(h, w), wire_bits)


def bytes_per_patch(spec: ModelSpec, wire_bits: int = 32) -> int:
    return spec.latent * wire_bits // 8


def compression_ratio(spec: ModelSpec, wire_bits: int = 32, raw_bits: int = 32) -> float:
    """Raw patch geometry size over transmitted feature size."""
    return (spec.n_points * 3 * raw_bits) / (spec.latent * wire_bits)


def _patch_points(patch, spec: ModelSpec) -> np.ndarray:
    pts = patch.points if isinstance(patch, Patch) else np.asarray(patch, dtype=np.float64)
    if pts.shape != (spec.n_points, 3):
        raise CodecError(f"patch must have shape ({spec.n_points}, 3), got {pts.shape}")
    if np.any(np.linalg.norm(pts, axis=1) > 1.0 + NORM_TOL):
        raise CodecError("patch is not normalized into the unit sphere")
    return pts


def encode_batch(model: CodecModel, patches: np.ndarray, params=None) -> np.ndarray:
    spec = model.spec
    p = params if params is not None else model.params64()
    groups = network.group_patches(spec, patches)
    z, _ = network.encode_forward(p, groups)
    return z


def decode_batch(model: CodecModel, latents: np.ndarray, params=None) -> np.ndarray:
    p = params if params is not None else model.params64()
    y, _ = network.decode_forward(p, np.asarray(latents, dtype=np.float64), model.spec)
    return y


def encode(model: CodecModel, patch, wire_bits: int = 32) -> FeatureMatrix:
    pts = _patch_points(patch, model.spec)
    z = encode_batch(model, pts[None])[0]
    return FeatureMatrix(z.reshape(model.spec.h, model.spec.w), wire_bits)


def decode(model: CodecModel, features) -> np.ndarray:
    """Reconstruct one normalized patch (``n_points`` x 3) from its feature matrix."""
    spec = model.spec
    vals = features.values if isinstance(features, FeatureMatrix) else np.asarray(features)
    if vals.size != spec.latent or (vals.ndim == 2 and vals.shape != (spec.h, spec.w)):
        raise CodecError(f"feature matrix {vals.shape} does not match ({spec.h}, {spec.w})")
    return decode_batch(model, vals.reshape(1, -1).astype(np.float64))[0]


def reconstruct(model: CodecModel, patches: np.ndarray, wire_bits: int = 32,
                batch: int = 64) -> np.ndarray:
    """Encode, pass through the wire precision, and decode a stack of patches."""
    p = model.params64()
    out = []
    wire = np.float32 if wire_bits == 32 else np.float16
    for i in range(0, len(patches), batch):
        z = encode_batch(model, patches[i : i + batch], p)
        z = z.astype(wire).astype(np.float64)
        out.append(decode_batch(model, z, p))
    return np.concatenate(out)
