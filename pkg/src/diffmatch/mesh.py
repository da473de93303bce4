"""Triangle mesh container, OFF/PLY io, validation and graph geodesics."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

DEGENERATE_AREA = 1e-12  # face-area floor after unit-area normalisation


class MeshError(Exception):
    """Base class for mesh loading/processing failures."""


class MeshParseError(MeshError):
    """Raised when a mesh file cannot be parsed.

    Carries the 1-based line number (ASCII formats) or byte offset
    (binary PLY) where parsing stopped.
    """

    def __init__(self, path, message, line=None, offset=None):
        where = f" (line {line})" if line is not None else ""
        if offset is not None:
            where += f" (byte offset {offset})"
        super().__init__(f"{path}: {message}{where}")
        self.path = str(path)
        self.line = line
        self.offset = offset


class MeshIndexError(MeshError):
    """A face references a vertex index outside [0, n)."""

    def __init__(self, path, face, indices, n):
        super().__init__(
            f"{path}: face {face} references vertex {max(indices)} "
            f"but mesh has only {n} vertices"
        )
        self.face = face


class DisconnectedMeshError(MeshError):
    """Geodesic queries require a connected mesh."""

    def __init__(self, source, unreachable):
        preview = ", ".join(str(v) for v in unreachable[:8])
        if len(unreachable) > 8:
            preview += ", ..."
        super().__init__(
            f"mesh is disconnected: {len(unreachable)} vertices unreachable "
            f"from source {source} (e.g. {preview})"
        )
        self.unreachable = unreachable


@dataclass(frozen=True)
class TriangleMesh:
    """Immutable triangle mesh: vertex positions and face connectivity."""

    vertices: np.ndarray  # (n, 3) float64
    faces: np.ndarray  # (m, 3) int64

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must be (n, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError(f"faces must be (m, 3), got {f.shape}")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        v.setflags(write=False)
        f.setflags(write=False)

    @property
    def n(self) -> int:
        return self.vertices.shape[0]

    @property
    def m(self) -> int:
        return self.faces.shape[0]

    def face_areas(self) -> np.ndarray:
        p0 = self.vertices[self.faces[:, 0]]
        p1 = self.vertices[self.faces[:, 1]]
        p2 = self.vertices[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(p1 - p0, p2 - p0), axis=1)

    def total_area(self) -> float:
        return float(self.face_areas().sum())

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted (i, j) pairs, shape (e, 2)."""
        halfedges = self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        halfedges = np.sort(halfedges, axis=1)
        return np.unique(halfedges, axis=0)

    def edge_graph(self) -> sparse.csr_matrix:
        """Symmetric sparse adjacency weighted by Euclidean edge length."""
        e = self.edges()
        w = np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)
        i = np.concatenate([e[:, 0], e[:, 1]])
        j = np.concatenate([e[:, 1], e[:, 0]])
        return sparse.csr_matrix(
            (np.concatenate([w, w]), (i, j)), shape=(self.n, self.n)
        )


@dataclass(frozen=True)
class GeodesicField:
    """Graph-geodesic distances from one source vertex to all vertices."""

    source: int
    distances: np.ndarray


@dataclass
class ValidationReport:
    """Outcome of validate_mesh: a list of (code, detail) issues."""

    issues: list = field(default_factory=list)

    def add(self, code: str, detail: str) -> None:
        self.issues.append((code, detail))

    @property
    def ok(self) -> bool:
        return not self.issues

    def codes(self) -> list:
        return [code for code, _ in self.issues]


# ---------------------------------------------------------------------------
# io


def load_mesh(path) -> TriangleMesh:
    """Load an ASCII OFF or ASCII/binary-little-endian PLY mesh."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".off":
        return load_off(path)
    if suffix == ".ply":
        return load_ply(path)
    # sniff the header when the extension is unhelpful
    head = path.open("rb").read(4)
    if head[:3] == b"OFF":
        return load_off(path)
    if head[:3] == b"ply":
        return load_ply(path)
    raise MeshParseError(path, "unrecognised mesh format (expected OFF or PLY)")


def load_off(path) -> TriangleMesh:
    path = Path(path)
    with path.open("r", encoding="utf-8", errors="replace") as fh:
        lines = fh.readlines()

    def tokens():
        for lineno, raw in enumerate(lines, start=1):
            body = raw.split("#", 1)[0].strip()
            if body:
                yield lineno, body.split()

    stream = tokens()
    try:
        lineno, tok = next(stream)
    except StopIteration:
        raise MeshParseError(path, "empty file", line=1) from None
    if tok[0] != "OFF":
        raise MeshParseError(path, f"expected OFF header, got {tok[0]!r}", line=lineno)
    tok = tok[1:]
    if not tok:  # counts may share the header line or follow it
        lineno, tok = _next_or_fail(stream, path, "missing vertex/face counts")
    if len(tok) < 3:
        raise MeshParseError(path, "count line needs 3 integers", line=lineno)
    try:
        n, m = int(tok[0]), int(tok[1])
    except ValueError:
        raise MeshParseError(path, f"bad counts {tok[:3]}", line=lineno) from None

    vertices = np.empty((n, 3), dtype=np.float64)
    for i in range(n):
        lineno, tok = _next_or_fail(stream, path, f"missing vertex {i}")
        if len(tok) < 3:
            raise MeshParseError(path, f"vertex {i} needs 3 coordinates", line=lineno)
        try:
            vertices[i] = [float(t) for t in tok[:3]]
        except ValueError:
            raise MeshParseError(path, f"bad vertex {i}: {tok[:3]}", line=lineno) from None

    faces = np.empty((m, 3), dtype=np.int64)
    for i in range(m):
        lineno, tok = _next_or_fail(stream, path, f"missing face {i}")
        try:
            count = int(tok[0])
            idx = [int(t) for t in tok[1 : 1 + count]]
        except (ValueError, IndexError):
            raise MeshParseError(path, f"bad face {i}: {tok}", line=lineno) from None
        if count != 3:
            raise MeshParseError(
                path, f"face {i} has {count} vertices; only triangles supported",
                line=lineno,
            )
        if len(idx) != 3:
            raise MeshParseError(path, f"face {i} is truncated", line=lineno)
        if min(idx) < 0 or max(idx) >= n:
            raise MeshIndexError(path, i, idx, n)
        faces[i] = idx

    return TriangleMesh(vertices, faces)


def _next_or_fail(stream, path, message):
    try:
        return next(stream)
    except StopIteration:
        raise MeshParseError(path, message) from None


def save_off(mesh: TriangleMesh, path) -> None:
    """Write ASCII OFF with 17 significant digits (lossless round trip)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n} {mesh.m} 0\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


def load_ply(path) -> TriangleMesh:
    """Minimal PLY reader: vertex positions and triangular faces only."""
    path = Path(path)
    data = path.open("rb").read()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise MeshParseError(path, "not a PLY file (missing header)", line=1)
    header_lines = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[end + len(b"end_header\n") :]

    fmt = None
    elements = []  # (name, count, [(proptype, propname) or ('list', ct, it, name)])
    for lineno, line in enumerate(header_lines, start=1):
        tok = line.split()
        if not tok or tok[0] in ("ply", "comment", "obj_info"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
            if fmt not in ("ascii", "binary_little_endian"):
                raise MeshParseError(path, f"unsupported PLY format {fmt}", line=lineno)
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise MeshParseError(path, "property before element", line=lineno)
            if tok[1] == "list":
                elements[-1][2].append(("list", tok[2], tok[3], tok[4]))
            else:
                elements[-1][2].append((tok[1], tok[2]))
    if fmt is None:
        raise MeshParseError(path, "PLY header missing format line")

    if fmt == "ascii":
        return _parse_ply_ascii(path, body, elements)
    return _parse_ply_binary(path, body, elements)


_PLY_STRUCT = {
    "char": "b", "int8": "b", "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h", "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i", "uint": "I", "uint32": "I",
    "float": "f", "float32": "f", "double": "d", "float64": "d",
}


def _finish_ply(path, vertices, faces):
    vertices = np.asarray(vertices, dtype=np.float64)
    n = len(vertices)
    faces_arr = np.asarray(faces, dtype=np.int64) if faces else np.empty((0, 3), np.int64)
    for i, f in enumerate(faces_arr):
        if f.min() < 0 or f.max() >= n:
            raise MeshIndexError(path, i, list(f), n)
    return TriangleMesh(vertices, faces_arr)


def _parse_ply_ascii(path, body, elements):
    rows = body.decode("ascii", errors="replace").splitlines()
    cursor = 0
    vertices, faces = [], []
    for name, count, props in elements:
        for i in range(count):
            if cursor >= len(rows):
                raise MeshParseError(path, f"truncated {name} element", line=cursor + 1)
            tok = rows[cursor].split()
            cursor += 1
            if name == "vertex":
                names = [p[-1] for p in props]
                try:
                    vals = {nm: float(t) for nm, t in zip(names, tok)}
                    vertices.append((vals["x"], vals["y"], vals["z"]))
                except (ValueError, KeyError):
                    raise MeshParseError(path, f"bad vertex {i}", line=cursor) from None
            elif name == "face":
                cnt = int(tok[0])
                if cnt != 3:
                    raise MeshParseError(
                        path, f"face {i} has {cnt} vertices; only triangles supported",
                        line=cursor,
                    )
                faces.append([int(t) for t in tok[1:4]])
    return _finish_ply(path, vertices, faces)


def _parse_ply_binary(path, body, elements):
    offset = 0
    vertices, faces = [], []
    for name, count, props in elements:
        if name == "vertex":
            fmt_codes = "".join(_PLY_STRUCT[p[0]] for p in props)
            names = [p[-1] for p in props]
            size = struct.calcsize("<" + fmt_codes)
            for i in range(count):
                if offset + size > len(body):
                    raise MeshParseError(path, f"truncated vertex {i}", offset=offset)
                vals = dict(zip(names, struct.unpack_from("<" + fmt_codes, body, offset)))
                offset += size
                vertices.append((vals["x"], vals["y"], vals["z"]))
        elif name == "face":
            count_code = _PLY_STRUCT[props[0][1]]
            index_code = _PLY_STRUCT[props[0][2]]
            count_size = struct.calcsize("<" + count_code)
            index_size = struct.calcsize("<" + index_code)
            for i in range(count):
                if offset + count_size > len(body):
                    raise MeshParseError(path, f"truncated face {i}", offset=offset)
                (cnt,) = struct.unpack_from("<" + count_code, body, offset)
                offset += count_size
                if cnt != 3:
                    raise MeshParseError(
                        path, f"face {i} has {cnt} vertices; only triangles supported",
                        offset=offset,
                    )
                if offset + 3 * index_size > len(body):
                    raise MeshParseError(path, f"truncated face {i}", offset=offset)
                idx = struct.unpack_from("<3" + index_code, body, offset)
                offset += 3 * index_size
                faces.append(list(idx))
        else:
            # skip unknown fixed-size elements; lists of unknown elements unsupported
            fixed = all(p[0] != "list" for p in props)
            if not fixed:
                raise MeshParseError(path, f"unsupported list element {name!r}", offset=offset)
            size = struct.calcsize("<" + "".join(_PLY_STRUCT[p[0]] for p in props))
            offset += size * count
    return _finish_ply(path, vertices, faces)


# ---------------------------------------------------------------------------
# validation / normalisation


def validate_mesh(mesh: TriangleMesh) -> ValidationReport:
    """Check TriangleMesh invariants; issues are reported, never raised."""
    report = ValidationReport()
    n, faces = mesh.n, mesh.faces

    if mesh.m == 0:
        report.add("no_faces", "mesh has no faces")
        return report

    bad = (faces < 0) | (faces >= n)
    if bad.any():
        which = np.nonzero(bad.any(axis=1))[0]
        report.add("face_index_out_of_range", f"faces {which[:8].tolist()}")

    repeated = (
        (faces[:, 0] == faces[:, 1])
        | (faces[:, 1] == faces[:, 2])
        | (faces[:, 0] == faces[:, 2])
    )
    if repeated.any():
        which = np.nonzero(repeated)[0]
        report.add("repeated_vertex_in_face", f"faces {which[:8].tolist()}")

    if not bad.any():
        # area threshold is defined at unit total area
        areas = mesh.face_areas()
        total = areas.sum()
        if total <= 0:
            report.add("zero_area", "total surface area is zero")
        else:
            degenerate = np.nonzero(areas / total < DEGENERATE_AREA)[0]
            if degenerate.size:
                report.add("degenerate_face", f"faces {degenerate[:8].tolist()}")

        halfedges = np.sort(faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        uniq, counts = np.unique(halfedges, axis=0, return_counts=True)
        over = np.nonzero(counts > 2)[0]
        if over.size:
            report.add(
                "nonmanifold_edge",
                f"{over.size} edges with >2 incident faces, e.g. {uniq[over[0]].tolist()}",
            )

        referenced = np.zeros(n, dtype=bool)
        referenced[faces.ravel()] = True
        if not referenced.all():
            count = int((~referenced).sum())
            report.add("unreferenced_vertex", f"{count} vertices not used by any face")

        ncomp = csgraph.connected_components(
            mesh.edge_graph(), directed=False, return_labels=False
        )
        if ncomp > 1:
            report.add("disconnected", f"{ncomp} connected components")

    return report


def normalize_to_unit_area(mesh: TriangleMesh) -> TriangleMesh:
    """Uniformly rescale about the vertex centroid so total area is 1.

    The centroid is moved to the origin, which makes the operation
    idempotent and scale-equivariant.
    """
    area = mesh.total_area()
    if area <= 0:
        raise MeshError("cannot normalise a zero-area mesh")
    centroid = mesh.vertices.mean(axis=0)
    scale = 1.0 / np.sqrt(area)
    return TriangleMesh((mesh.vertices - centroid) * scale, mesh.faces)


# ---------------------------------------------------------------------------
# geodesics (shortest paths on the edge graph)


def geodesic_distances(mesh: TriangleMesh, source: int) -> GeodesicField:
    """Dijkstra distances from one vertex; errors if the mesh is disconnected."""
    if not 0 <= source < mesh.n:
        raise IndexError(f"source {source} out of range [0, {mesh.n})")
    dist = csgraph.dijkstra(mesh.edge_graph(), directed=False, indices=source)
    unreachable = np.nonzero(~np.isfinite(dist))[0]
    if unreachable.size:
        raise DisconnectedMeshError(source, unreachable.tolist())
    return GeodesicField(source=source, distances=dist)


def geodesic_distance_matrix(mesh: TriangleMesh, sources) -> np.ndarray:
    """Rows of Dijkstra distances for several source vertices at once."""
    sources = np.asarray(sources, dtype=np.int64)
    dist = csgraph.dijkstra(mesh.edge_graph(), directed=False, indices=sources)
    bad = ~np.isfinite(dist)
    if bad.any():
        row = int(np.nonzero(bad.any(axis=1))[0][0])
        unreachable = np.nonzero(bad[row])[0]
        raise DisconnectedMeshError(int(sources[row]), unreachable.tolist())
    return dist
