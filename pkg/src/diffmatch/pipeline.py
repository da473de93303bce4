"""End-to-end plumbing: preprocess shapes, run a matching mode, evaluate.

This is the layer the CLI and the estimator facade both sit on. A Shape
bundles a unit-area mesh with its operators and truncated eigenbasis;
matching modes share that preprocessing and differ only in how they decode
a correspondence.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cache import get_or_compute_basis
from .correspondence import (
    HardCorrespondence,
    fmap_to_pointwise,
    nearest_neighbor_match,
    solve_functional_map,
    unit_columns,
)
from .descriptors import compute_descriptor, matching_features
from .energies import EnergyConfig
from .evaluation import (
    DEFAULT_MAX_THRESHOLD,
    DEFAULT_NUM_SAMPLES,
    ErrorProfile,
    geodesic_error,
    metrics_summary,
)
from .mesh import (
    MeshError,
    TriangleMesh,
    ValidationReport,
    load_mesh,
    normalize_to_unit_area,
    validate_mesh,
)
from .optimizer import OptimConfig, refine_pair
from .spectral import Operators, SpectralBasis, build_operators

MATCH_MODES = ("descriptor_nn", "fmap", "refine")
DEFAULT_BASIS_SIZE = 128
FATAL_ISSUES = frozenset(
    {
        "no_faces",
        "face_index_out_of_range",
        "repeated_vertex_in_face",
        "zero_area",
        "degenerate_face",
        "unreferenced_vertex",
        "disconnected",
    }
)


@dataclass(frozen=True)
class Shape:
    """A preprocessed mesh: unit area, operators and spectral basis attached."""

    mesh: TriangleMesh
    operators: Operators
    basis: SpectralBasis
    report: ValidationReport
    name: str = ""

    @property
    def n(self) -> int:
        return self.mesh.n


def prepare_shape(
    source: TriangleMesh | str | Path,
    k: int = DEFAULT_BASIS_SIZE,
    cache_dir: str | Path | None = None,
    name: str = "",
) -> Shape:
    """Load/validate/normalise a mesh and attach its spectral data.

    Non-manifold edges are tolerated (reported but not fatal: welded shapes
    are a supported input); anything that breaks the operators or geodesics
    is an error.
    """
    if isinstance(source, (str, Path)):
        mesh = load_mesh(source)
        name = name or Path(source).stem
    else:
        mesh = source
    report = validate_mesh(mesh)
    fatal = sorted(set(report.codes()) & FATAL_ISSUES)
    if fatal:
        raise MeshError(
            f"mesh {name or '<in-memory>'} failed validation: {', '.join(fatal)}"
        )
    mesh = normalize_to_unit_area(mesh)
    operators = build_operators(mesh)
    k = min(k, mesh.n)
    basis = get_or_compute_basis(mesh, k, cache_dir=cache_dir, operators=operators)
    return Shape(
        mesh=mesh, operators=operators, basis=basis, report=report, name=name
    )


@dataclass(frozen=True)
class MatchResult:
    map_mn: HardCorrespondence
    map_nm: HardCorrespondence
    decoder: str  # which decoding produced the hard maps
    fmap_mn: np.ndarray | None = None  # (k_N, k_M), M-coefficients -> N
    fmap_nm: np.ndarray | None = None  # (k_M, k_N), N-coefficients -> M
    trace: list | None = None


def _pair_descriptors(
    shape_m: Shape, shape_n: Shape, descriptor: str, d: int
) -> tuple[np.ndarray, np.ndarray]:
    desc_m = compute_descriptor(descriptor, shape_m.mesh, shape_m.basis, d=d)
    desc_n = compute_descriptor(descriptor, shape_n.mesh, shape_n.basis, d=d)
    if descriptor == "xyz":
        return desc_m, desc_n  # positions match by proximity, not similarity
    return matching_features(desc_m), matching_features(desc_n)


def match_descriptor_nn(
    shape_m: Shape, shape_n: Shape, descriptor: str = "wks", d: int = 128
) -> MatchResult:
    """Mutual nearest-neighbour lookup in descriptor space (no optimisation)."""
    desc_m, desc_n = _pair_descriptors(shape_m, shape_n, descriptor, d)
    return MatchResult(
        map_mn=nearest_neighbor_match(desc_m, desc_n),
        map_nm=nearest_neighbor_match(desc_n, desc_m),
        decoder="descriptor_nn",
    )


def match_fmap(
    shape_m: Shape,
    shape_n: Shape,
    descriptor: str = "wks",
    d: int = 128,
    spectral_k: int = 40,
    regularizer: float = 1e-3,
) -> MatchResult:
    """Least-squares functional maps from descriptors, decoded by spectral NN."""
    desc_m, desc_n = _pair_descriptors(shape_m, shape_n, descriptor, d)
    basis_m = shape_m.basis.truncated(min(spectral_k, shape_m.basis.k))
    basis_n = shape_n.basis.truncated(min(spectral_k, shape_n.basis.k))
    coeff_m = unit_columns(basis_m.project(desc_m))
    coeff_n = unit_columns(basis_n.project(desc_n))
    fmap_mn = solve_functional_map(
        coeff_n, coeff_m, basis_n.eigenvalues, basis_m.eigenvalues, regularizer
    )
    fmap_nm = solve_functional_map(
        coeff_m, coeff_n, basis_m.eigenvalues, basis_n.eigenvalues, regularizer
    )
    return MatchResult(
        map_mn=fmap_to_pointwise(basis_m, basis_n, fmap_nm),
        map_nm=fmap_to_pointwise(basis_n, basis_m, fmap_mn),
        decoder="fmap_nn",
        fmap_mn=fmap_mn,
        fmap_nm=fmap_nm,
    )


def match_refine(
    shape_m: Shape,
    shape_n: Shape,
    energy_config: EnergyConfig | None = None,
    optim_config: OptimConfig | None = None,
    descriptor: str = "wks",
) -> MatchResult:
    """Refine features by energy descent, decode by soft-map argmax."""
    energy_config = energy_config or EnergyConfig()
    optim_config = optim_config or OptimConfig()
    if descriptor == "wks":
        # refine_pair builds its own initialisation honouring optim.init
        # ("wks" or "eigfuncs"); explicit descriptors would override it.
        desc_m = desc_n = None
    else:
        desc_m, desc_n = _pair_descriptors(
            shape_m, shape_n, descriptor, optim_config.feature_dim
        )
    result = refine_pair(
        shape_m.basis,
        shape_n.basis,
        energy_config,
        optim_config,
        vertices_m=shape_m.mesh.vertices,
        vertices_n=shape_n.mesh.vertices,
        desc_m=desc_m,
        desc_n=desc_n,
    )
    return MatchResult(
        map_mn=result.map_mn,
        map_nm=result.map_nm,
        decoder="soft_argmax",
        trace=result.trace,
    )


def match_pair(
    shape_m: Shape,
    shape_n: Shape,
    mode: str = "descriptor_nn",
    descriptor: str = "wks",
    energy_config: EnergyConfig | None = None,
    optim_config: OptimConfig | None = None,
) -> MatchResult:
    if mode == "descriptor_nn":
        return match_descriptor_nn(shape_m, shape_n, descriptor=descriptor)
    if mode == "fmap":
        return match_fmap(shape_m, shape_n, descriptor=descriptor)
    if mode == "refine":
        return match_refine(
            shape_m,
            shape_n,
            energy_config=energy_config,
            optim_config=optim_config,
            descriptor=descriptor,
        )
    raise ValueError(f"unknown match mode {mode!r}; expected one of {MATCH_MODES}")


def evaluate_match(
    result: MatchResult,
    gt_mn: HardCorrespondence,
    shape_m: Shape,
    shape_n: Shape,
    max_threshold: float = DEFAULT_MAX_THRESHOLD,
    num_samples: int = DEFAULT_NUM_SAMPLES,
    target_distances: np.ndarray | None = None,
) -> tuple[ErrorProfile, dict]:
    """Score the M -> N direction of a match against ground truth."""
    profile = geodesic_error(
        result.map_mn,
        gt_mn,
        shape_n.mesh,
        max_threshold=max_threshold,
        num_samples=num_samples,
        target_distances=target_distances,
    )
    summary = metrics_summary(
        profile,
        result.map_mn,
        vertices_target=shape_n.mesh.vertices,
        stiffness_source=shape_m.operators.stiffness,
    )
    summary["decoder"] = result.decoder
    return profile, summary
