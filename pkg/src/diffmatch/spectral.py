"""Cotangent Laplace operators, truncated eigenbasis and heat diffusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.linalg import eigh
from scipy.sparse.linalg import eigsh, splu
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence

from .mesh import TriangleMesh

DEFAULT_K = 128
DENSE_FALLBACK_N = 2000
HEAT_KERNEL_CAP = 5000


class EigensolverError(Exception):
    """Sparse eigensolver failed to converge within its iteration budget."""

    def __init__(self, message, residuals=None):
        if residuals is not None and len(residuals):
            message += f" (residuals: max {max(residuals):.3e})"
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True)
class Operators:
    """Cotangent stiffness matrix and barycentric-lumped mass diagonal."""

    stiffness: sparse.csr_matrix  # (n, n), symmetric PSD, zero row sums
    mass_diagonal: np.ndarray  # (n,), strictly positive vertex areas

    @property
    def n(self) -> int:
        return self.mass_diagonal.shape[0]

    @property
    def mass(self) -> sparse.dia_matrix:
        return sparse.diags(self.mass_diagonal)

    def apply_mass(self, u: np.ndarray) -> np.ndarray:
        if u.ndim == 1:
            return self.mass_diagonal * u
        return self.mass_diagonal[:, None] * u


@dataclass(frozen=True)
class SpectralBasis:
    """First-k generalized eigenpairs of (stiffness, mass).

    Eigenvalues ascend from the zero mode; eigenvectors are M-orthonormal
    with a first-nonzero-positive sign convention so repeated runs agree.
    """

    eigenvalues: np.ndarray  # (k,)
    eigenvectors: np.ndarray  # (n, k)
    operators: Operators

    @property
    def k(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def n(self) -> int:
        return self.eigenvectors.shape[0]

    def project(self, u: np.ndarray) -> np.ndarray:
        """Spectral coefficients of u under the mass-weighted projector."""
        return self.eigenvectors.T @ self.operators.apply_mass(u)

    def synthesize(self, coeff: np.ndarray) -> np.ndarray:
        return self.eigenvectors @ coeff

    def bandlimit(self, u: np.ndarray) -> np.ndarray:
        return self.synthesize(self.project(u))

    def heat_multipliers(self, t: float) -> np.ndarray:
        return np.exp(-t * self.eigenvalues)

    def truncated(self, k: int) -> "SpectralBasis":
        """Restrict to the lowest k modes (no recomputation)."""
        if not 1 <= k <= self.k:
            raise ValueError(f"cannot truncate basis of size {self.k} to {k}")
        if k == self.k:
            return self
        return SpectralBasis(
            eigenvalues=self.eigenvalues[:k],
            eigenvectors=self.eigenvectors[:, :k],
            operators=self.operators,
        )


def build_operators(mesh: TriangleMesh) -> Operators:
    """Assemble the cotangent stiffness matrix and lumped mass diagonal.

    Edge weight w_ij is half the sum of cotangents of the angles opposite
    edge (i, j); the diagonal carries the negated row sums so constants lie
    in the kernel. Vertex mass is one third of the incident triangle area.
    """
    v, f = mesh.vertices, mesh.faces
    n = mesh.n

    corners = []
    for c in range(3):
        a = v[f[:, (c + 1) % 3]] - v[f[:, c]]
        b = v[f[:, (c + 2) % 3]] - v[f[:, c]]
        cross = np.linalg.norm(np.cross(a, b), axis=1)
        small = cross <= 0
        if small.any():
            raise ValueError(
                f"degenerate face {int(np.nonzero(small)[0][0])}: zero area"
            )
        corners.append(np.einsum("ij,ij->i", a, b) / cross)  # cot of corner c
    cot = np.stack(corners, axis=1)

    # corner c is opposite the edge joining the other two corners
    i = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
    j = np.concatenate([f[:, 2], f[:, 0], f[:, 1]])
    w = 0.5 * np.concatenate([cot[:, 0], cot[:, 1], cot[:, 2]])

    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([j, i, i, j])
    vals = np.concatenate([-w, -w, w, w])
    stiffness = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    stiffness.sum_duplicates()

    areas = mesh.face_areas()
    mass = np.zeros(n)
    np.add.at(mass, f[:, 0], areas / 3.0)
    np.add.at(mass, f[:, 1], areas / 3.0)
    np.add.at(mass, f[:, 2], areas / 3.0)
    if (mass <= 0).any():
        raise ValueError("mesh has vertices with no incident area")

    return Operators(stiffness=stiffness, mass_diagonal=mass)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Make the first non-negligible entry of every column positive."""
    out = vectors.copy()
    for col in range(out.shape[1]):
        column = out[:, col]
        nz = np.nonzero(np.abs(column) > 1e-8 * np.abs(column).max())[0]
        if nz.size and column[nz[0]] < 0:
            out[:, col] = -column
    return out


def basis_residuals(ops: Operators, basis: SpectralBasis) -> np.ndarray:
    """Backward-error residual per eigenpair.

    ||L phi - lambda M phi|| / ((||L||_1 + lambda ||M||_1) ||phi||), which is
    well defined for the zero mode too.
    """
    L = ops.stiffness
    residual = L @ basis.eigenvectors - ops.apply_mass(
        basis.eigenvectors
    ) * basis.eigenvalues[None, :]
    norm_l = sparse.linalg.norm(L, 1)
    norm_m = ops.mass_diagonal.max()
    denom = (norm_l + basis.eigenvalues * norm_m) * np.linalg.norm(
        basis.eigenvectors, axis=0
    )
    return np.linalg.norm(residual, axis=0) / denom


def eigendecompose(
    ops: Operators,
    k: int,
    dense_fallback_n: int = DENSE_FALLBACK_N,
    maxiter: int | None = None,
) -> SpectralBasis:
    """First k generalized eigenpairs of L phi = lambda M phi, ascending.

    Shift-invert Lanczos with a fixed start vector (deterministic); small
    problems and near-complete bases go through a dense solve. Raises
    EigensolverError when ARPACK stalls and the dense fallback is out of
    reach.
    """
    n = ops.n
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")

    if k > n - 2 or n <= 128:
        vals, vecs = _dense_eigenpairs(ops, k)
    else:
        L = ops.stiffness.tocsc()
        M = sparse.diags(ops.mass_diagonal).tocsc()
        v0 = np.full(n, 1.0 / np.sqrt(n))  # fixed start vector: reproducible runs
        try:
            vals, vecs = eigsh(
                L, k=k, M=M, sigma=-0.01, which="LM", v0=v0, maxiter=maxiter
            )
        except ArpackNoConvergence as err:
            if n <= dense_fallback_n:
                vals, vecs = _dense_eigenpairs(ops, k)
            else:
                partial = getattr(err, "eigenvalues", None)
                raise EigensolverError(
                    f"ARPACK did not converge for k={k}, n={n}",
                    residuals=list(np.atleast_1d(partial)) if partial is not None else None,
                ) from err
        except ArpackError as err:
            if n <= dense_fallback_n:
                vals, vecs = _dense_eigenpairs(ops, k)
            else:
                raise EigensolverError(str(err)) from err

    order = np.argsort(vals)
    vals = vals[order]
    vecs = vecs[:, order]
    if vals[0] < -1e-8:
        raise EigensolverError(
            f"negative eigenvalue {vals[0]:.3e} from a PSD pencil", residuals=None
        )
    vals = np.maximum(vals, 0.0)
    vecs = _fix_signs(vecs)
    return SpectralBasis(eigenvalues=vals, eigenvectors=vecs, operators=ops)


def _dense_eigenpairs(ops: Operators, k: int):
    L = ops.stiffness.toarray()
    L = 0.5 * (L + L.T)
    M = np.diag(ops.mass_diagonal)
    vals, vecs = eigh(L, M, subset_by_index=[0, k - 1])
    return vals, vecs


def diffuse_implicit(ops: Operators, u: np.ndarray, t: float) -> np.ndarray:
    """Backward-Euler heat step: solve (M + t L) x = M u.

    The system is SPD for t >= 0; t = 0 returns u unchanged.
    """
    if t < 0:
        raise ValueError(f"diffusion time must be non-negative, got {t}")
    u = np.asarray(u, dtype=np.float64)
    if t == 0:
        return u.copy()
    system = (sparse.diags(ops.mass_diagonal) + t * ops.stiffness).tocsc()
    rhs = ops.apply_mass(u)
    try:
        solver = splu(system)
    except RuntimeError as err:  # singular factorisation; defensive only
        raise EigensolverError(f"implicit diffusion solve failed: {err}") from err
    return solver.solve(rhs)


def diffuse_spectral(
    basis: SpectralBasis,
    u: np.ndarray,
    t: float,
    literal_projection: bool = False,
) -> np.ndarray:
    """Spectral heat step: Phi exp(-t Lambda) Phi^T M u.

    At t = 0 this is the band-limit projector, so band-limited inputs pass
    through unchanged. literal_projection drops the mass weighting (plain
    Phi^T u), in which case t = 0 is no longer a projector on span(Phi).
    """
    if t < 0:
        raise ValueError(f"diffusion time must be non-negative, got {t}")
    u = np.asarray(u, dtype=np.float64)
    if literal_projection:
        coeff = basis.eigenvectors.T @ u
    else:
        coeff = basis.project(u)
    decay = basis.heat_multipliers(t)
    if u.ndim == 1:
        return basis.synthesize(decay * coeff)
    return basis.synthesize(decay[:, None] * coeff)


def diffuse_spectral_columns(
    basis: SpectralBasis, u: np.ndarray, times: np.ndarray
) -> np.ndarray:
    """Diffuse column i of u for its own time times[i] (shared basis)."""
    u = np.asarray(u, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if u.ndim != 2 or times.shape != (u.shape[1],):
        raise ValueError("u must be (n, h) with one diffusion time per column")
    coeff = basis.project(u)
    decay = np.exp(-np.outer(basis.eigenvalues, times))
    return basis.synthesize(decay * coeff)


def heat_kernel(basis: SpectralBasis, t: float, size_cap: int = HEAT_KERNEL_CAP) -> np.ndarray:
    """Dense heat kernel Phi exp(-t Lambda) Phi^T (symmetrised)."""
    if t < 0:
        raise ValueError(f"diffusion time must be non-negative, got {t}")
    if basis.n > size_cap:
        raise ValueError(
            f"dense heat kernel of size {basis.n} exceeds cap {size_cap}"
        )
    scaled = basis.eigenvectors * basis.heat_multipliers(t)[None, :]
    kernel = scaled @ basis.eigenvectors.T
    return 0.5 * (kernel + kernel.T)
