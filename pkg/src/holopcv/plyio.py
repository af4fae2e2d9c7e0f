"""PLY reading and writing (ASCII and binary little-endian)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .cloud import PointCloud

_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


class PlyError(ValueError):
    """Malformed or unsupported PLY input; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class _Element:
    def __init__(self, name, count):
        self.name = name
        self.count = count
        self.props: list[tuple[str, str]] = []  # (name, numpy dtype code)
        self.has_list = False

    def dtype(self):
        return np.dtype([(n, "<" + t) for n, t in self.props])


def _parse_header(data: bytes):
    if not data.startswith(b"ply"):
        raise PlyError("missing 'ply' magic", 0)
    pos = 0
    fmt = None
    elements: list[_Element] = []
    while True:
        end = data.find(b"\n", pos)
        if end < 0:
            raise PlyError("header not terminated by end_header", pos)
        try:
            line = data[pos:end].decode("ascii").strip()
        except UnicodeDecodeError:
            raise PlyError("non-ASCII header line", pos) from None
        words = line.split()
        line_at, pos = pos, end + 1
        if not words or words[0] in ("ply", "comment", "obj_info"):
            continue
        if words[0] == "format":
            if len(words) != 3 or words[1] not in ("ascii", "binary_little_endian"):
                raise PlyError(f"unsupported format line {line!r}", line_at)
            fmt = words[1]
        elif words[0] == "element":
            if len(words) != 3 or not words[2].isdigit():
                raise PlyError(f"bad element line {line!r}", line_at)
            elements.append(_Element(words[1], int(words[2])))
        elif words[0] == "property":
            if not elements:
                raise PlyError("property before any element", line_at)
            el = elements[-1]
            if len(words) == 5 and words[1] == "list":
                for t in words[2:4]:
                    if t not in _TYPES:
                        raise PlyError(f"unsupported property type {t!r}", line_at)
                el.has_list = True
                el.props.append((words[4], "list"))
            elif len(words) == 3:
                if words[1] not in _TYPES:
                    raise PlyError(f"unsupported property type {words[1]!r}", line_at)
                el.props.append((words[2], _TYPES[words[1]]))
            else:
                raise PlyError(f"bad property line {line!r}", line_at)
        elif words[0] == "end_header":
            break
        else:
            raise PlyError(f"unknown header keyword {words[0]!r}", line_at)
    if fmt is None:
        raise PlyError("no format line in header", 0)
    return fmt, elements, pos


def load_ply(path) -> PointCloud:
    """Read the vertex element of a PLY file into a :class:`PointCloud`."""
    data = Path(path).read_bytes()
    fmt, elements, body = _parse_header(data)
    names = [e.name for e in elements]
    if "vertex" not in names:
        raise PlyError("no vertex element", body)
    vi = names.index("vertex")
    vertex = elements[vi]
    pnames = [p[0] for p in vertex.props]
    for axis in "xyz":
        if axis not in pnames:
            raise PlyError(f"vertex element lacks property {axis!r}", body)
    if vertex.has_list:
        raise PlyError("list properties on vertex element are not supported", body)

    if fmt == "ascii":
        table = _read_ascii(data, body, elements[: vi + 1])
    else:
        offset = body
        for el in elements[:vi]:
            if el.has_list:
                raise PlyError(f"cannot skip list element {el.name!r} before vertex", offset)
            offset += el.count * el.dtype().itemsize
        dt = vertex.dtype()
        need = vertex.count * dt.itemsize
        if offset + need > len(data):
            raise PlyError(
                f"truncated body: vertex data needs {need} bytes, "
                f"{max(0, len(data) - offset)} available",
                len(data),
            )
        table = np.frombuffer(data, dtype=dt, count=vertex.count, offset=offset)

    pts = np.stack([table[a].astype(np.float64) for a in "xyz"], axis=1)
    colors = None
    if all(c in pnames for c in ("red", "green", "blue")):
        colors = np.stack([table[c] for c in ("red", "green", "blue")], axis=1).astype(np.uint8)
    return PointCloud(pts, colors)


def _read_ascii(data: bytes, body: int, elements):
    pos = body
    vertex = elements[-1]
    for el in elements[:-1]:
        for _ in range(el.count):
            end = data.find(b"\n", pos)
            if end < 0:
                raise PlyError(f"truncated body in element {el.name!r}", len(data))
            pos = end + 1
    table = np.zeros(vertex.count, dtype=vertex.dtype())
    for i in range(vertex.count):
        end = data.find(b"\n", pos)
        if end < 0:
            end = len(data)
        words = data[pos:end].split()
        if not words:
            if end >= len(data):
                raise PlyError(
                    f"truncated body: expected {vertex.count} vertices, found {i}", pos
                )
            pos = end + 1
            continue
        if len(words) != len(vertex.props):
            raise PlyError(
                f"vertex {i} has {len(words)} values, expected {len(vertex.props)}", pos
            )
        try:
            table[i] = tuple(float(w) for w in words)
        except ValueError:
            raise PlyError(f"unparseable vertex {i}", pos) from None
        pos = end + 1
    return table


def save_ply(path, cloud: PointCloud, binary: bool = True) -> None:
    """Write coordinates as doubles (bit-exact round trip) plus optional uchar colors."""
    props = [("x", "f8"), ("y", "f8"), ("z", "f8")]
    if cloud.colors is not None:
        props += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    table = np.zeros(len(cloud), dtype=np.dtype([(n, "<" + t) for n, t in props]))
    for i, a in enumerate("xyz"):
        table[a] = cloud.points[:, i]
    if cloud.colors is not None:
        for i, c in enumerate(("red", "green", "blue")):
            table[c] = cloud.colors[:, i]
    type_names = {"f8": "double", "u1": "uchar"}
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f"element vertex {len(cloud)}"]
    header += [f"property {type_names[t]} {n}" for n, t in props]
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(head)
        if binary:
            fh.write(table.tobytes())
        else:
            for row in table.tolist():
                fh.write((" ".join(repr(v) for v in row) + "\n").encode("ascii"))
