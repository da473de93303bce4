"""Maps between shapes: soft/hard vertex correspondences and functional maps.

Orientation conventions used across the package (src = source shape, tgt =
target shape):

* a hard map is an index array of length ``n_src`` pointing into the target's
  vertices (vertex i of the source matches ``indices[i]`` of the target);
* a soft map ``pi`` is an ``(n_src, n_tgt)`` row-stochastic matrix, and
  ``pi @ f`` pulls a vertex function ``f`` on the target back to the source;
* a functional map ``C`` is ``(k_src, k_tgt)`` and sends spectral
  coefficients of a target function to the coefficients of its pullback,
  ``C = Phi_src^+ Pi Phi_tgt`` with the mass-weighted pseudoinverse
  ``Phi^+ = Phi^T M``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .spectral import SpectralBasis
from .validation import check_indices, check_matrix, check_row_stochastic

DEFAULT_TAU = 0.07
DEFAULT_FMAP_REGULARIZER = 1e-3


@dataclass(frozen=True)
class HardCorrespondence:
    """Vertex-to-vertex map stored as 0-based target indices."""

    indices: np.ndarray  # (n_src,) int64
    n_target: int

    def __post_init__(self):
        idx = check_indices(self.indices, "indices", self.n_target)
        object.__setattr__(self, "indices", idx)

    @property
    def n_source(self) -> int:
        return self.indices.shape[0]

    def save(self, path: str | Path) -> None:
        """One 0-based target index per line."""
        Path(path).write_text(
            "\n".join(str(int(i)) for i in self.indices) + "\n"
        )

    @classmethod
    def load(cls, path: str | Path, n_target: int) -> "HardCorrespondence":
        lines = [
            line.strip()
            for line in Path(path).read_text().splitlines()
            if line.strip()
        ]
        try:
            indices = np.array([int(line) for line in lines], dtype=np.int64)
        except ValueError as err:
            raise ValueError(f"{path}: non-integer correspondence entry") from err
        return cls(indices=indices, n_target=n_target)


@dataclass(frozen=True)
class SoftCorrespondence:
    """Row-stochastic match weights from source vertices to target vertices."""

    weights: np.ndarray  # (n_src, n_tgt)

    def __post_init__(self):
        w = check_row_stochastic(self.weights, "weights")
        object.__setattr__(self, "weights", w)

    def hard(self) -> HardCorrespondence:
        return hard_from_soft(self.weights)

    def save(self, path: str | Path) -> None:
        np.save(path, self.weights, allow_pickle=False)

    @classmethod
    def load(cls, path: str | Path) -> "SoftCorrespondence":
        return cls(weights=np.load(path, allow_pickle=False))


@dataclass(frozen=True)
class FunctionalMap:
    """Spectral-coefficient map; see the module docstring for orientation."""

    matrix: np.ndarray  # (k_src, k_tgt)

    def __post_init__(self):
        object.__setattr__(
            self, "matrix", check_matrix(self.matrix, "matrix")
        )

    def save(self, path: str | Path) -> None:
        np.save(path, self.matrix, allow_pickle=False)

    @classmethod
    def load(cls, path: str | Path) -> "FunctionalMap":
        return cls(matrix=np.load(path, allow_pickle=False))


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    """Numerically stable row-wise softmax."""
    shifted = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def soft_correspondence(
    feat_src: np.ndarray, feat_tgt: np.ndarray, tau: float = DEFAULT_TAU
) -> np.ndarray:
    """Temperature softmax over feature inner products, one row per source vertex."""
    feat_src = check_matrix(feat_src, "feat_src")
    feat_tgt = check_matrix(feat_tgt, "feat_tgt")
    if feat_src.shape[1] != feat_tgt.shape[1]:
        raise ValueError(
            f"feature widths differ: {feat_src.shape[1]} vs {feat_tgt.shape[1]}"
        )
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return softmax_rows((feat_src @ feat_tgt.T) / tau)


def hard_from_soft(pi: np.ndarray) -> HardCorrespondence:
    """Row-wise argmax; ties break toward the lower index."""
    pi = check_matrix(pi, "pi")
    return HardCorrespondence(
        indices=np.argmax(pi, axis=1).astype(np.int64), n_target=pi.shape[1]
    )


def nearest_neighbor_match(
    feat_src: np.ndarray, feat_tgt: np.ndarray
) -> HardCorrespondence:
    """Euclidean nearest target row for every source row."""
    feat_src = check_matrix(feat_src, "feat_src")
    feat_tgt = check_matrix(feat_tgt, "feat_tgt")
    _, idx = cKDTree(feat_tgt).query(feat_src, k=1)
    return HardCorrespondence(
        indices=np.asarray(idx, dtype=np.int64), n_target=feat_tgt.shape[0]
    )


def pointwise_to_fmap(
    basis_src: SpectralBasis,
    basis_tgt: SpectralBasis,
    correspondence: np.ndarray | HardCorrespondence,
) -> np.ndarray:
    """Encode a vertex map as a functional map C = Phi_src^+ Pi Phi_tgt.

    Accepts either a hard map (indices into the target) or a dense soft map;
    the returned matrix is (k_src, k_tgt).
    """
    if isinstance(correspondence, HardCorrespondence):
        if correspondence.n_target != basis_tgt.n:
            raise ValueError(
                f"correspondence targets {correspondence.n_target} vertices, "
                f"basis has {basis_tgt.n}"
            )
        pulled = basis_tgt.eigenvectors[correspondence.indices]  # Pi @ Phi_tgt
    else:
        pi = check_matrix(correspondence, "correspondence")
        if pi.shape != (basis_src.n, basis_tgt.n):
            raise ValueError(
                f"soft map shape {pi.shape} does not join bases with "
                f"{basis_src.n} and {basis_tgt.n} vertices"
            )
        pulled = pi @ basis_tgt.eigenvectors
    return basis_src.project(pulled)


def fmap_to_pointwise(
    basis_src: SpectralBasis, basis_tgt: SpectralBasis, fmap: np.ndarray
) -> HardCorrespondence:
    """Decode a functional map into a hard vertex map source -> target.

    Each source vertex carries the embedding row (Phi_src @ C) and is matched
    to the nearest row of Phi_tgt.
    """
    fmap = check_matrix(fmap, "fmap")
    if fmap.shape != (basis_src.k, basis_tgt.k):
        raise ValueError(
            f"fmap shape {fmap.shape} does not join bases of sizes "
            f"{basis_src.k} and {basis_tgt.k}"
        )
    embedded = basis_src.eigenvectors @ fmap  # (n_src, k_tgt)
    _, idx = cKDTree(basis_tgt.eigenvectors).query(embedded, k=1)
    return HardCorrespondence(
        indices=np.asarray(idx, dtype=np.int64), n_target=basis_tgt.n
    )


def unit_columns(a: np.ndarray) -> np.ndarray:
    """Scale each column to unit Euclidean norm (zero columns are kept as-is).

    Projected descriptors can differ in magnitude by orders of magnitude;
    equalising the columns makes every descriptor count the same in a
    least-squares fit, and the default functional-map regulariser weight is
    calibrated against columns scaled this way.
    """
    a = check_matrix(a, "a")
    norms = np.linalg.norm(a, axis=0)
    return a / np.where(norms > 0.0, norms, 1.0)


def solve_functional_map(
    coeff_src: np.ndarray,
    coeff_tgt: np.ndarray,
    evals_src: np.ndarray,
    evals_tgt: np.ndarray,
    regularizer: float = DEFAULT_FMAP_REGULARIZER,
) -> np.ndarray:
    """Least-squares functional map from corresponding descriptor coefficients.

    Minimises ||C A_tgt - A_src||_F^2 plus a Tikhonov term that penalises
    entry (i, j) by the squared eigenvalue gap (evals_tgt[j] - evals_src[i])^2,
    which favours maps that commute with the two Laplacians. Each row has its
    own SPD normal system. Inputs are the spectral coefficients A = basis
    projection of pointwise descriptors; callers that mix descriptors of
    uneven magnitude should pass them through :func:`unit_columns` first,
    which is what the default ``regularizer`` is calibrated for.
    """
    a_src = check_matrix(coeff_src, "coeff_src")
    a_tgt = check_matrix(coeff_tgt, "coeff_tgt")
    evals_src = np.asarray(evals_src, dtype=float)
    evals_tgt = np.asarray(evals_tgt, dtype=float)
    if a_src.shape[1] != a_tgt.shape[1]:
        raise ValueError("descriptor widths differ between shapes")
    if a_src.shape[0] != evals_src.shape[0] or a_tgt.shape[0] != evals_tgt.shape[0]:
        raise ValueError("coefficient rows must match eigenvalue counts")
    if regularizer < 0:
        raise ValueError(f"regularizer must be non-negative, got {regularizer}")

    gram = a_tgt @ a_tgt.T
    rhs = a_tgt @ a_src.T  # (k_tgt, k_src); column i pairs with row i of C

    k_src, k_tgt = evals_src.shape[0], evals_tgt.shape[0]
    fmap = np.empty((k_src, k_tgt))
    for i in range(k_src):
        gaps = evals_tgt - evals_src[i]
        system = gram + np.diag(regularizer * gaps**2)
        try:
            fmap[i] = np.linalg.solve(system, rhs[:, i])
        except np.linalg.LinAlgError:
            fmap[i] = np.linalg.lstsq(system, rhs[:, i], rcond=None)[0]
    return fmap
