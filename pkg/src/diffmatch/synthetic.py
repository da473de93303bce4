"""Synthetic shape pairs with exact ground-truth correspondences.

All generators are deterministic given the spec's seed. The base shapes are
deliberately asymmetric (bumpy sphere, vase-profiled cylinder, wavy plane)
so their Laplacian spectra are simple and pointwise descriptors can tell
vertices apart; perfectly symmetric primitives would make every matching
task ill-posed at machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .correspondence import HardCorrespondence
from .mesh import TriangleMesh

PAIR_KINDS = ("identity", "permuted", "rigid_noise", "isometric_bend", "topological_glue")
BASE_KINDS = ("sphere", "cylinder", "plane")


@dataclass(frozen=True)
class SyntheticPairSpec:
    kind: str
    base: str = "cylinder"
    resolution: int = 16
    seed: int = 0
    jitter: float | None = None  # vertex noise as a fraction of the bbox diagonal
    curvature: float | None = None  # bend curvature for isometric_bend

    def __post_init__(self):
        if self.kind not in PAIR_KINDS:
            raise ValueError(f"unknown pair kind {self.kind!r}")
        if self.base not in BASE_KINDS:
            raise ValueError(f"unknown base mesh {self.base!r}")
        if self.resolution < 2:
            raise ValueError("resolution must be at least 2")


def bumpy_sphere(subdivisions: int = 3, amplitude: float = 0.08) -> TriangleMesh:
    """Icosphere with a smooth symmetry-breaking radial modulation."""
    if subdivisions > 7:  # 10 * 4^7 + 2 vertices is already past desk scale
        raise ValueError(
            f"sphere subdivision level {subdivisions} is unreasonably large"
        )
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )

    for _ in range(subdivisions):
        verts_list = list(verts)
        midpoint: dict[tuple[int, int], int] = {}

        def midpoint_index(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                mid = verts_list[a] + verts_list[b]
                mid = mid / np.linalg.norm(mid)
                midpoint[key] = len(verts_list)
                verts_list.append(mid)
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab = midpoint_index(a, b)
            bc = midpoint_index(b, c)
            ca = midpoint_index(c, a)
            new_faces.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]])
        verts = np.array(verts_list)
        faces = np.array(new_faces, dtype=np.int64)

    x, y, z = verts[:, 0], verts[:, 1], verts[:, 2]
    bump = (
        1.0
        + amplitude * np.sin(3.0 * x + 0.9) * np.cos(2.0 * y - 0.4)
        + 0.6 * amplitude * np.sin(2.0 * z + 1.7) * np.cos(5.0 * x + 0.3)
    )
    return TriangleMesh(vertices=verts * bump[:, None], faces=faces)


def vase_cylinder(
    resolution: int = 16, height: float = 2.0, n_z: int | None = None
) -> TriangleMesh:
    """Open tube with a vase profile and azimuthal modulation (no symmetries).

    Vertices form an (n_z x resolution) grid; vertex index = row * resolution
    + column, rows ordered bottom to top.
    """
    n_theta = resolution
    n_z = n_z or resolution
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    zs = np.linspace(0.0, height, n_z)

    tt, zz = np.meshgrid(theta, zs)  # (n_z, n_theta)
    s = zz / height
    profile = 0.8 + 0.25 * np.sin(np.pi * s + 0.4)
    modulation = (
        1.0
        + 0.08 * np.sin(2.0 * tt + 0.9) * np.sin(1.3 * np.pi * s + 0.2)
        + 0.05 * np.cos(tt) * np.cos(0.7 * np.pi * s + 1.1)
    )
    r = profile * modulation
    verts = np.stack(
        [r * np.cos(tt), r * np.sin(tt), zz], axis=-1
    ).reshape(-1, 3)

    faces = []
    for row in range(n_z - 1):
        for col in range(n_theta):
            a = row * n_theta + col
            b = row * n_theta + (col + 1) % n_theta
            c = (row + 1) * n_theta + col
            d = (row + 1) * n_theta + (col + 1) % n_theta
            faces.append([a, b, d])
            faces.append([a, d, c])
    return TriangleMesh(vertices=verts, faces=np.array(faces, dtype=np.int64))


def wavy_plane(resolution: int = 16, extent: float = 2.0) -> TriangleMesh:
    """Grid patch with a gentle height field (breaks the flat degeneracy)."""
    xs = np.linspace(0.0, extent, resolution)
    xx, yy = np.meshgrid(xs, xs)
    zz = 0.15 * np.sin(2.0 * xx + 0.5) * np.cos(3.0 * yy + 1.2)
    verts = np.stack([xx, yy, zz], axis=-1).reshape(-1, 3)
    faces = []
    for row in range(resolution - 1):
        for col in range(resolution - 1):
            a = row * resolution + col
            b = a + 1
            c = a + resolution
            d = c + 1
            faces.append([a, b, d])
            faces.append([a, d, c])
    return TriangleMesh(vertices=verts, faces=np.array(faces, dtype=np.int64))


def base_mesh(spec: SyntheticPairSpec) -> TriangleMesh:
    if spec.base == "sphere":
        return bumpy_sphere(subdivisions=spec.resolution)
    if spec.base == "cylinder":
        return vase_cylinder(resolution=spec.resolution)
    return wavy_plane(resolution=spec.resolution)


def _bbox_diagonal(verts: np.ndarray) -> float:
    return float(np.linalg.norm(verts.max(axis=0) - verts.min(axis=0)))


def _jittered(verts: np.ndarray, fraction: float, rng) -> np.ndarray:
    if fraction <= 0:
        return verts.copy()
    sigma = fraction * _bbox_diagonal(verts)
    return verts + rng.normal(0.0, sigma, size=verts.shape)


def _random_rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def bend_about_axis(verts: np.ndarray, curvature: float) -> np.ndarray:
    """Bend the z-axis into a circular arc, moving cross-sections rigidly.

    The axis itself is mapped isometrically (arc length preserved); a point
    at radial offset x from the axis sees a relative longitudinal stretch of
    about curvature * x, so small curvature * radius keeps the map a
    near-isometry.
    """
    if curvature == 0:
        return verts.copy()
    radius = 1.0 / curvature
    x, y, z = verts[:, 0], verts[:, 1], verts[:, 2]
    angle = curvature * z
    out = np.empty_like(verts)
    out[:, 0] = radius - (radius - x) * np.cos(angle)
    out[:, 1] = y
    out[:, 2] = (radius - x) * np.sin(angle)
    return out


def _relabel(mesh: TriangleMesh, perm: np.ndarray) -> TriangleMesh:
    """New mesh whose vertex j is old vertex perm[j]; faces relabelled."""
    inverse = np.argsort(perm)
    return TriangleMesh(vertices=mesh.vertices[perm], faces=inverse[mesh.faces])


def _glue_bridge(
    mesh: TriangleMesh, n_theta: int, snap_fraction: float = 0.1
) -> TriangleMesh:
    """Weld the two spatially nearest far-apart rim vertices with a bridge.

    Picks the closest pair between the bottom and top rows of a (bent) tube,
    snaps both vertices near their midpoint, and adds two sliver triangles
    across the gap. The bridge makes a few edges non-manifold by design;
    vertex count and ordering are unchanged.
    """
    verts = mesh.vertices.copy()
    n = verts.shape[0]
    bottom = np.arange(2 * n_theta)
    top = np.arange(n - 2 * n_theta, n)
    tree = cKDTree(verts[top])
    dists, nearest = tree.query(verts[bottom], k=1)
    pick = int(np.argmin(dists))
    a = int(bottom[pick])
    b = int(top[nearest[pick]])

    edges = mesh.edges()
    lengths = np.linalg.norm(verts[edges[:, 0]] - verts[edges[:, 1]], axis=1)
    gap = snap_fraction * float(np.median(lengths))
    mid = 0.5 * (verts[a] + verts[b])
    direction = verts[b] - verts[a]
    norm = np.linalg.norm(direction)
    direction = direction / norm if norm > 0 else np.array([1.0, 0.0, 0.0])
    verts[a] = mid - 0.5 * gap * direction
    verts[b] = mid + 0.5 * gap * direction

    # one ring neighbour of each welded vertex, stepping along its own row
    u = a + 1 if (a + 1) % n_theta != 0 else a + 1 - n_theta
    w = b + 1 if (b + 1) % n_theta != 0 else b + 1 - n_theta
    bridge = np.array([[a, b, u], [b, a, w]], dtype=np.int64)
    return TriangleMesh(
        vertices=verts, faces=np.vstack([mesh.faces, bridge])
    )


def _touching_curvature(
    mesh: TriangleMesh, n_theta: int, height: float
) -> float:
    """Fold a tube until its two rims nearly touch (deterministic scan).

    Targets a rim-to-rim gap of half a median edge length so the later weld
    only nudges the two chosen vertices locally.
    """
    edges = mesh.edges()
    lengths = np.linalg.norm(
        mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]], axis=1
    )
    target = 0.5 * float(np.median(lengths))
    n = mesh.n
    bottom = np.arange(2 * n_theta)
    top = np.arange(n - 2 * n_theta, n)

    best_curvature, best_score = None, np.inf
    for curvature in np.linspace(0.3 * np.pi / height, 1.2 * np.pi / height, 60):
        bent = bend_about_axis(mesh.vertices, curvature)
        gap = float(cKDTree(bent[top]).query(bent[bottom], k=1)[0].min())
        score = abs(gap - target)
        if score < best_score:
            best_curvature, best_score = curvature, score
    return best_curvature


def generate_pair(
    spec: SyntheticPairSpec,
) -> tuple[TriangleMesh, TriangleMesh, HardCorrespondence]:
    """Build (M, N, ground truth M -> N) for the requested pair kind."""
    if spec.kind == "isometric_bend" and spec.base != "cylinder":
        raise ValueError("isometric_bend is defined on the cylinder base")
    if spec.kind == "topological_glue" and spec.base != "cylinder":
        raise ValueError("topological_glue is defined on the cylinder base")
    rng = np.random.default_rng(spec.seed)
    mesh_m = base_mesh(spec)
    n = mesh_m.n
    identity = np.arange(n, dtype=np.int64)

    if spec.kind == "identity":
        mesh_n = TriangleMesh(
            vertices=mesh_m.vertices.copy(), faces=mesh_m.faces.copy()
        )
        gt = identity

    elif spec.kind == "permuted":
        perm = rng.permutation(n)
        mesh_n = _relabel(mesh_m, perm)
        gt = np.argsort(perm)  # vertex i of M sits at slot inverse-perm[i] in N

    elif spec.kind == "rigid_noise":
        jitter = 1e-3 if spec.jitter is None else spec.jitter
        rotation = _random_rotation(rng)
        shift = 0.3 * _bbox_diagonal(mesh_m.vertices) * rng.uniform(-1, 1, 3)
        moved = mesh_m.vertices @ rotation.T + shift
        mesh_n = TriangleMesh(
            vertices=_jittered(moved, jitter, rng), faces=mesh_m.faces.copy()
        )
        gt = identity

    elif spec.kind == "isometric_bend":
        jitter = 1e-5 if spec.jitter is None else spec.jitter
        r_max = float(
            np.max(np.linalg.norm(mesh_m.vertices[:, :2], axis=1))
        )
        curvature = (0.005 / r_max) if spec.curvature is None else spec.curvature
        bent = bend_about_axis(mesh_m.vertices, curvature)
        mesh_n = TriangleMesh(
            vertices=_jittered(bent, jitter, rng), faces=mesh_m.faces.copy()
        )
        gt = identity

    else:  # topological_glue
        jitter = 1e-5 if spec.jitter is None else spec.jitter
        height = 2.0
        curvature = _touching_curvature(mesh_m, spec.resolution, height)
        bent = bend_about_axis(mesh_m.vertices, curvature)
        mesh_m = TriangleMesh(vertices=bent, faces=mesh_m.faces)
        glued = _glue_bridge(mesh_m, n_theta=spec.resolution)
        mesh_n = TriangleMesh(
            vertices=_jittered(glued.vertices, jitter, rng), faces=glued.faces
        )
        gt = identity

    return mesh_m, mesh_n, HardCorrespondence(indices=gt, n_target=n)


def relative_edge_length_change(
    mesh_a: TriangleMesh, mesh_b: TriangleMesh
) -> float:
    """Largest relative change in corresponding edge lengths (same indexing)."""
    edges = mesh_a.edges()
    length_a = np.linalg.norm(
        mesh_a.vertices[edges[:, 0]] - mesh_a.vertices[edges[:, 1]], axis=1
    )
    length_b = np.linalg.norm(
        mesh_b.vertices[edges[:, 0]] - mesh_b.vertices[edges[:, 1]], axis=1
    )
    return float(np.max(np.abs(length_b - length_a) / length_a))
