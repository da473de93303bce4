"""On-disk cache for eigenbases keyed by mesh content.

Layout per entry: a little-endian binary blob (header ``n, k`` as int64,
then eigenvalues, column-major eigenvectors and the mass diagonal as
float64) next to a JSON sidecar holding the mesh content hash, k, the
eigenpair residuals and a schema version. Writes go through a temp file
and an atomic rename so a crashed run never leaves a torn entry.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
import warnings
from pathlib import Path

import numpy as np

from .mesh import TriangleMesh
from .spectral import (
    Operators,
    SpectralBasis,
    basis_residuals,
    build_operators,
    eigendecompose,
)

SCHEMA_VERSION = 1
_HEADER = struct.Struct("<qq")  # n, k


def mesh_content_hash(mesh: TriangleMesh) -> str:
    """SHA-256 over vertex coordinates and face indices (shape-aware)."""
    digest = hashlib.sha256()
    digest.update(_HEADER.pack(mesh.n, mesh.m))
    digest.update(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
    digest.update(np.ascontiguousarray(mesh.faces, dtype="<i8").tobytes())
    return digest.hexdigest()


def _entry_paths(cache_dir: Path, mesh_hash: str, k: int) -> tuple[Path, Path]:
    stem = f"{mesh_hash[:16]}_k{k}"
    return cache_dir / f"{stem}.basis", cache_dir / f"{stem}.json"


def _atomic_write(path: Path, payload: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_basis(cache_dir: str | Path, mesh: TriangleMesh, basis: SpectralBasis) -> Path:
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    mesh_hash = mesh_content_hash(mesh)
    blob_path, sidecar_path = _entry_paths(cache_dir, mesh_hash, basis.k)

    blob = bytearray(_HEADER.pack(basis.n, basis.k))
    blob += np.ascontiguousarray(basis.eigenvalues, dtype="<f8").tobytes()
    blob += np.asfortranarray(basis.eigenvectors, dtype="<f8").tobytes(order="F")
    blob += np.ascontiguousarray(
        basis.operators.mass_diagonal, dtype="<f8"
    ).tobytes()
    _atomic_write(blob_path, bytes(blob))

    residuals = basis_residuals(basis.operators, basis)
    sidecar = {
        "schema_version": SCHEMA_VERSION,
        "mesh_hash": mesh_hash,
        "n": basis.n,
        "k": basis.k,
        "residual_max": float(residuals.max()),
        "residuals": [float(r) for r in residuals],
    }
    _atomic_write(
        sidecar_path,
        json.dumps(sidecar, indent=2, sort_keys=True).encode("utf-8") + b"\n",
    )
    return blob_path


def _warn_corrupt(path: Path, reason: str) -> None:
    warnings.warn(
        f"spectral cache entry {path.name} is unusable ({reason}); recomputing",
        RuntimeWarning,
        stacklevel=3,
    )


def load_basis(
    cache_dir: str | Path, mesh: TriangleMesh, k: int
) -> SpectralBasis | None:
    """Load a cached basis; returns None on a miss, a stale hash or a torn file.

    A plain miss (no files) is silent; files that exist under the right
    name but cannot be trusted raise a RuntimeWarning before the caller
    recomputes.
    """
    cache_dir = Path(cache_dir)
    mesh_hash = mesh_content_hash(mesh)
    blob_path, sidecar_path = _entry_paths(cache_dir, mesh_hash, k)
    if not blob_path.exists() or not sidecar_path.exists():
        return None
    try:
        sidecar = json.loads(sidecar_path.read_text())
    except (OSError, json.JSONDecodeError):
        _warn_corrupt(sidecar_path, "unparsable sidecar")
        return None
    if sidecar.get("schema_version") != SCHEMA_VERSION:
        return None  # version skew, not corruption
    if sidecar.get("mesh_hash") != mesh_hash or sidecar.get("k") != k:
        _warn_corrupt(sidecar_path, "sidecar disagrees with its entry name")
        return None

    raw = blob_path.read_bytes()
    if len(raw) < _HEADER.size:
        _warn_corrupt(blob_path, "truncated blob")
        return None
    n, k_stored = _HEADER.unpack_from(raw)
    expected = _HEADER.size + 8 * (k_stored + n * k_stored + n)
    if k_stored != k or n != mesh.n or len(raw) != expected:
        _warn_corrupt(blob_path, "blob header or size mismatch")
        return None

    offset = _HEADER.size
    eigenvalues = np.frombuffer(raw, dtype="<f8", count=k, offset=offset).copy()
    offset += 8 * k
    eigenvectors = (
        np.frombuffer(raw, dtype="<f8", count=n * k, offset=offset)
        .reshape((n, k), order="F")
        .copy()
    )
    offset += 8 * n * k
    mass = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).copy()

    operators = build_operators(mesh)
    if not np.allclose(operators.mass_diagonal, mass, rtol=1e-12, atol=0):
        _warn_corrupt(blob_path, "stored mass disagrees with the mesh")
        return None
    return SpectralBasis(
        eigenvalues=eigenvalues, eigenvectors=eigenvectors, operators=operators
    )


def get_or_compute_basis(
    mesh: TriangleMesh,
    k: int,
    cache_dir: str | Path | None = None,
    operators: Operators | None = None,
) -> SpectralBasis:
    """Fetch the first-k basis from cache, computing and storing on a miss."""
    if cache_dir is not None:
        cached = load_basis(cache_dir, mesh, k)
        if cached is not None:
            return cached
    if operators is None:
        operators = build_operators(mesh)
    basis = eigendecompose(operators, k)
    if cache_dir is not None:
        save_basis(cache_dir, mesh, basis)
    return basis
