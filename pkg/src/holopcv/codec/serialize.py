"""Binary container for codec models and controller policies.

Layout (little-endian)::

    magic     8 bytes  b"HPCVMDL\\0"
    version   u16
    kind_len  u16, then kind (ASCII, e.g. "codec" or "policy")
    meta_len  u32, then meta (UTF-8 JSON, keys sorted)
    n_arrays  u32
    per array:
        name_len u16, name (ASCII)
        dtype    u8 code (see _DTYPES)
        ndim     u8, then ndim x u32 shape
        nbytes   u64, then raw data (bool arrays are bit-packed)
    crc32     u32 over every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .model import CodecModel, ModelSpec

MAGIC = b"HPCVMDL\0"
VERSION = 1
_DTYPES = {0: "<f4", 1: "<f8", 2: "<i1", 3: "<i2", 4: "bool"}
_CODES = {np.dtype(v) if v != "bool" else np.dtype(bool): k for k, v in _DTYPES.items()}


class FormatError(ValueError):
    pass


def pack(kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<H", VERSION)
    k = kind.encode("ascii")
    out += struct.pack("<H", len(k)) + k
    m = json.dumps(meta, sort_keys=True).encode("utf-8")
    out += struct.pack("<I", len(m)) + m
    out += struct.pack("<I", len(arrays))
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        code = _CODES.get(arr.dtype)
        if code is None:
            raise FormatError(f"unsupported dtype {arr.dtype} for {name}")
        raw = np.packbits(arr.ravel()).tobytes() if arr.dtype == bool else \
            np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        nm = name.encode("ascii")
        out += struct.pack("<H", len(nm)) + nm
        out += struct.pack("<BB", code, arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += struct.pack("<Q", len(raw)) + raw
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def unpack(data: bytes) -> tuple[str, dict, dict[str, np.ndarray]]:
    if len(data) < len(MAGIC) + 6 or not data.startswith(MAGIC):
        raise FormatError("not a model container (bad magic)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError("checksum mismatch: file is corrupt")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, body, pos)
        pos += struct.calcsize(fmt)
        return vals

    (version,) = take("<H")
    if version != VERSION:
        raise FormatError(f"unsupported container version {version} (expected {VERSION})")
    (klen,) = take("<H")
    kind = body[pos : pos + klen].decode("ascii")
    pos += klen
    (mlen,) = take("<I")
    meta = json.loads(body[pos : pos + mlen].decode("utf-8"))
    pos += mlen
    (count,) = take("<I")
    arrays = {}
    for _ in range(count):
        (nlen,) = take("<H")
        name = body[pos : pos + nlen].decode("ascii")
        pos += nlen
        code, ndim = take("<BB")
        shape = take(f"<{ndim}I")
        (nbytes,) = take("<Q")
        raw = body[pos : pos + nbytes]
        pos += nbytes
        if code == 4:
            size = int(np.prod(shape))
            arr = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))[:size].astype(bool)
        else:
            arr = np.frombuffer(raw, dtype=_DTYPES[code]).copy()
        arrays[name] = arr.reshape(shape)
    if pos != len(body):
        raise FormatError("trailing bytes after last array")
    return kind, meta, arrays


def model_bytes(model: CodecModel) -> bytes:
    arrays = {}
    for name in model.layer_names:
        if name in model.qweights:
            arrays[name + ".Wq"] = model.qweights[name]
        else:
            arrays[name + ".W"] = model.weights[name + ".W"]
        arrays[name + ".b"] = model.weights[name + ".b"]
        if name in model.masks:
            arrays[name + ".mask"] = model.masks[name]
    if model.scales:
        names = sorted(model.scales)
        arrays["_scales"] = np.array([model.scales[n] for n in names], dtype=np.float64)
    else:
        names = []
    meta = {"spec": model.spec.to_dict(), "scale_layers": names,
            "flops_decode": model.flops_decode}
    return pack("codec", meta, arrays)


def model_from_bytes(data: bytes) -> CodecModel:
    kind, meta, arrays = unpack(data)
    if kind != "codec":
        raise FormatError(f"container holds a {kind!r}, not a codec model")
    spec = ModelSpec.from_dict(meta["spec"])
    weights, masks, qweights = {}, {}, {}
    for name in spec.layer_shapes():
        if name + ".Wq" in arrays:
            qweights[name] = arrays[name + ".Wq"]
        else:
            weights[name + ".W"] = arrays[name + ".W"]
        weights[name + ".b"] = arrays[name + ".b"]
        if name + ".mask" in arrays:
            masks[name] = arrays[name + ".mask"]
    scales = {}
    if meta["scale_layers"]:
        scales = {n: float(s) for n, s in zip(meta["scale_layers"], arrays["_scales"])}
    return CodecModel(spec, weights, masks, qweights, scales)


def serialize(model: CodecModel, path) -> None:
    Path(path).write_bytes(model_bytes(model))


def deserialize(path) -> CodecModel:
    return model_from_bytes(Path(path).read_bytes())
