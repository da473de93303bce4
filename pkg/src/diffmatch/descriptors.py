"""Pointwise spectral descriptors: heat and wave kernel signatures, raw XYZ."""

from __future__ import annotations

import numpy as np

from .mesh import TriangleMesh
from .spectral import SpectralBasis

DEFAULT_DIM = 128
_LOG_1E4 = 4.0 * np.log(10.0)


def _first_positive_eigenvalue(basis: SpectralBasis) -> tuple[int, float]:
    lam = basis.eigenvalues
    floor = max(lam[-1], 1.0) * 1e-12
    idx = np.nonzero(lam > floor)[0]
    if idx.size == 0:
        raise ValueError("basis has no positive eigenvalues; increase k")
    return int(idx[0]), float(lam[idx[0]])


def hks_times(basis: SpectralBasis, d: int = DEFAULT_DIM) -> np.ndarray:
    """Log-spaced times from 4 ln(10)/lambda_max down to 4 ln(10)/lambda_min+."""
    _, lam_low = _first_positive_eigenvalue(basis)
    lam_high = float(basis.eigenvalues[-1])
    t_min = _LOG_1E4 / lam_high
    t_max = _LOG_1E4 / lam_low
    return np.geomspace(t_min, t_max, d)


def hks(
    basis: SpectralBasis, d: int = DEFAULT_DIM, times: np.ndarray | None = None
) -> np.ndarray:
    """Heat kernel signature: HKS(x, t) = sum_i exp(-lambda_i t) phi_i(x)^2."""
    if times is None:
        times = hks_times(basis, d)
    times = np.asarray(times, dtype=np.float64)
    phi_sq = basis.eigenvectors**2  # (n, k)
    decay = np.exp(-np.outer(basis.eigenvalues, times))  # (k, d)
    return phi_sq @ decay


def wks(
    basis: SpectralBasis, d: int = DEFAULT_DIM, variance_scale: float = 7.0
) -> np.ndarray:
    """Wave kernel signature with Gaussian energy bands in log-eigenvalue space.

    Energies are spaced linearly across the log-spectrum interval shrunk by
    two standard deviations at each end, sigma = variance_scale * span / d;
    each band is normalised by its total weight, then columns are unit-L2.
    """
    i0, lam_low = _first_positive_eigenvalue(basis)
    log_lam = np.log(basis.eigenvalues[i0:])
    e_lo, e_hi = log_lam[0], log_lam[-1]
    if not e_hi > e_lo:
        raise ValueError("log-spectrum has zero extent; increase k")
    sigma = variance_scale * (e_hi - e_lo) / d
    energies = np.linspace(e_lo + 2.0 * sigma, e_hi - 2.0 * sigma, d)

    weights = np.exp(
        -((energies[None, :] - log_lam[:, None]) ** 2) / (2.0 * sigma**2)
    )  # (k - i0, d)
    scale = 1.0 / weights.sum(axis=0)
    phi_sq = basis.eigenvectors[:, i0:] ** 2
    desc = (phi_sq @ weights) * scale[None, :]

    norms = np.linalg.norm(desc, axis=0)
    norms[norms == 0] = 1.0
    return desc / norms[None, :]


def xyz(mesh: TriangleMesh) -> np.ndarray:
    """Vertex coordinates as a descriptor; only sensible for aligned pairs."""
    return mesh.vertices.copy()


def normalize_rows(desc: np.ndarray) -> np.ndarray:
    """Unit-L2 rows (cosine geometry); zero rows are left at zero."""
    desc = np.asarray(desc, dtype=np.float64)
    norms = np.linalg.norm(desc, axis=1, keepdims=True)
    safe = np.where(norms == 0, 1.0, norms)
    return desc / safe


def standardize_columns(desc: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance columns; constant columns go to zero.

    Spectral signatures share a large common profile across vertices, which
    leaves their rows nearly parallel; removing the per-column mean restores
    the spread that similarity-based matching needs.
    """
    desc = np.asarray(desc, dtype=np.float64)
    centered = desc - desc.mean(axis=0, keepdims=True)
    scale = centered.std(axis=0, keepdims=True)
    scale[scale == 0] = 1.0
    return centered / scale


def matching_features(desc: np.ndarray) -> np.ndarray:
    """Standardised then row-normalised copy, the form matching consumes."""
    return normalize_rows(standardize_columns(desc))


_BY_NAME = {"hks": hks, "wks": wks}


def compute_descriptor(
    name: str,
    mesh: TriangleMesh,
    basis: SpectralBasis | None,
    d: int = DEFAULT_DIM,
) -> np.ndarray:
    if name == "xyz":
        return xyz(mesh)
    if name not in _BY_NAME:
        raise ValueError(
            f"unknown descriptor {name!r}; expected one of xyz, hks, wks"
        )
    if basis is None:
        raise ValueError(f"descriptor {name!r} needs a spectral basis")
    return _BY_NAME[name](basis, d=d)


def save_descriptors_csv(path, desc: np.ndarray) -> None:
    """One vertex per line, comma-separated, full double precision."""
    np.savetxt(path, np.atleast_2d(desc), delimiter=",", fmt="%.17g")


def load_descriptors_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
