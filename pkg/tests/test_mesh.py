"""Mesh container, OFF/PLY io, validation and graph geodesics."""

import heapq

import numpy as np
import pytest

from diffmatch.mesh import (
    DisconnectedMeshError,
    MeshParseError,
    TriangleMesh,
    geodesic_distance_matrix,
    geodesic_distances,
    load_mesh,
    load_off,
    load_ply,
    normalize_to_unit_area,
    save_off,
    validate_mesh,
)


def dijkstra_oracle(mesh: TriangleMesh, source: int) -> np.ndarray:
    """Plain heapq Dijkstra over the edge graph, independent of scipy."""
    adjacency = [[] for _ in range(mesh.n)]
    for i, j in mesh.edges():
        w = float(np.linalg.norm(mesh.vertices[i] - mesh.vertices[j]))
        adjacency[i].append((j, w))
        adjacency[j].append((i, w))
    dist = np.full(mesh.n, np.inf)
    dist[source] = 0.0
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, w in adjacency[u]:
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


# ---------------------------------------------------------------------------
# container


def test_mesh_is_immutable(equilateral):
    with pytest.raises(ValueError):
        equilateral.vertices[0, 0] = 5.0
    with pytest.raises(ValueError):
        equilateral.faces[0, 0] = 2


def test_mesh_rejects_bad_shapes():
    with pytest.raises(ValueError):
        TriangleMesh(vertices=np.zeros((4, 2)), faces=np.zeros((1, 3), int))
    with pytest.raises(ValueError):
        TriangleMesh(vertices=np.zeros((4, 3)), faces=np.zeros((1, 4), int))


def test_face_areas_and_total(equilateral):
    assert equilateral.face_areas() == pytest.approx([np.sqrt(3.0) / 4.0])
    assert equilateral.total_area() == pytest.approx(np.sqrt(3.0) / 4.0)


def test_edges_unique_and_sorted(sphere):
    edges = sphere.edges()
    assert (edges[:, 0] < edges[:, 1]).all()
    assert len(np.unique(edges, axis=0)) == len(edges)
    # closed triangle mesh: E = 3F/2
    assert len(edges) == 3 * sphere.m // 2


def test_edge_graph_is_symmetric(cylinder):
    g = cylinder.edge_graph()
    assert (g != g.T).nnz == 0
    assert g.diagonal().sum() == 0.0


# ---------------------------------------------------------------------------
# io round trips


def test_off_round_trip(tmp_path, sphere):
    path = tmp_path / "sphere.off"
    save_off(sphere, path)
    back = load_off(path)
    np.testing.assert_array_equal(back.faces, sphere.faces)
    np.testing.assert_allclose(back.vertices, sphere.vertices, rtol=0, atol=1e-15)


def test_load_mesh_dispatches_on_extension(tmp_path, equilateral):
    path = tmp_path / "tri.off"
    save_off(equilateral, path)
    mesh = load_mesh(path)
    assert mesh.n == 3 and mesh.m == 1
    junk = tmp_path / "tri.stl"
    junk.write_bytes(b"solid tri\nendsolid tri\n")
    with pytest.raises(MeshParseError):
        load_mesh(junk)


def test_off_parse_errors(tmp_path):
    bad = tmp_path / "bad.off"
    bad.write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n")  # vertex count lies
    with pytest.raises(MeshParseError):
        load_off(bad)
    bad.write_text("NOT_OFF\n")
    with pytest.raises(MeshParseError):
        load_off(bad)


def test_ply_ascii_parse(tmp_path):
    text = "\n".join(
        [
            "ply",
            "format ascii 1.0",
            "element vertex 3",
            "property float x",
            "property float y",
            "property float z",
            "element face 1",
            "property list uchar int vertex_indices",
            "end_header",
            "0 0 0",
            "1 0 0",
            "0 1 0",
            "3 0 1 2",
            "",
        ]
    )
    path = tmp_path / "tri.ply"
    path.write_text(text)
    mesh = load_ply(path)
    assert mesh.n == 3
    np.testing.assert_array_equal(mesh.faces, [[0, 1, 2]])


# ---------------------------------------------------------------------------
# validation


def test_validate_clean_mesh(sphere):
    assert validate_mesh(sphere).ok


def test_validate_reports_issue_codes():
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5.0]])
    faces = np.array([[0, 1, 2], [0, 1, 1]])
    codes = validate_mesh(TriangleMesh(verts, faces)).codes()
    assert "repeated_vertex_in_face" in codes
    assert "unreferenced_vertex" in codes

    out_of_range = TriangleMesh(verts[:3], np.array([[0, 1, 7]]))
    assert "face_index_out_of_range" in validate_mesh(out_of_range).codes()


def test_validate_flags_nonmanifold_edge():
    # three triangles sharing the edge (0, 1)
    verts = np.array(
        [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1.0]]
    )
    faces = np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4]])
    codes = validate_mesh(TriangleMesh(verts, faces)).codes()
    assert "nonmanifold_edge" in codes


def test_validate_flags_disconnected():
    verts = np.vstack(
        [
            [[0, 0, 0], [1, 0, 0], [0, 1, 0]],
            [[5, 5, 5], [6, 5, 5], [5, 6, 5.0]],
        ]
    )
    faces = np.array([[0, 1, 2], [3, 4, 5]])
    assert "disconnected" in validate_mesh(TriangleMesh(verts, faces)).codes()


def test_normalize_to_unit_area(sphere):
    scaled = TriangleMesh(sphere.vertices * 3.7, sphere.faces)
    unit = normalize_to_unit_area(scaled)
    assert unit.total_area() == pytest.approx(1.0, rel=1e-12)
    # idempotent and centred
    again = normalize_to_unit_area(unit)
    np.testing.assert_allclose(again.vertices, unit.vertices, atol=1e-12)
    np.testing.assert_allclose(unit.vertices.mean(axis=0), 0.0, atol=1e-12)


# ---------------------------------------------------------------------------
# geodesics


def test_geodesic_matches_heapq_oracle(cylinder):
    for source in (0, 17, cylinder.n - 1):
        field = geodesic_distances(cylinder, source)
        np.testing.assert_allclose(
            field.distances, dijkstra_oracle(cylinder, source), rtol=1e-12
        )


def test_geodesic_distance_matrix_rows(sphere):
    sources = np.array([0, 40, 161])
    rows = geodesic_distance_matrix(sphere, sources)
    for row, src in zip(rows, sources):
        np.testing.assert_allclose(row, dijkstra_oracle(sphere, src), rtol=1e-12)


def test_geodesic_errors():
    verts = np.vstack(
        [
            [[0, 0, 0], [1, 0, 0], [0, 1, 0]],
            [[5, 5, 5], [6, 5, 5], [5, 6, 5.0]],
        ]
    )
    mesh = TriangleMesh(verts, np.array([[0, 1, 2], [3, 4, 5]]))
    with pytest.raises(DisconnectedMeshError):
        geodesic_distances(mesh, 0)
    with pytest.raises(IndexError):
        geodesic_distances(mesh, 99)
