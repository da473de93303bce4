"""Smooth non-rigid shape matching via synchronous heat diffusion.

Match pairs of triangle meshes by requiring that heat diffusion commutes
with the correspondence: diffusing a function and then transferring it must
agree with transferring first and diffusing on the other shape. The package
covers the full pipeline - mesh IO and validation, cotangent operators and
spectral bases, descriptors, functional maps, matching energies with
analytic gradients, per-pair refinement, evaluation metrics, synthetic test
pairs, and a CLI.
"""

__version__ = "0.1.0"

from .cache import get_or_compute_basis, load_basis, mesh_content_hash, save_basis
from .correspondence import (
    FunctionalMap,
    HardCorrespondence,
    SoftCorrespondence,
    fmap_to_pointwise,
    hard_from_soft,
    nearest_neighbor_match,
    pointwise_to_fmap,
    soft_correspondence,
    solve_functional_map,
    unit_columns,
)
from .descriptors import (
    hks,
    hks_times,
    matching_features,
    normalize_rows,
    standardize_columns,
    wks,
    xyz,
)
from .energies import (
    EnergyBreakdown,
    EnergyConfig,
    RandomFunctionSet,
    e_diff,
    l_couple,
    l_cycle,
    l_diff,
    l_dirichlet,
    l_kernel,
    l_struct,
    l_total,
    sample_random_functions,
)
from .evaluation import (
    ErrorProfile,
    coverage,
    geodesic_error,
    map_smoothness,
    pck_and_auc,
)
from .matching import ShapePairMatcher
from .mesh import (
    DisconnectedMeshError,
    GeodesicField,
    MeshError,
    MeshIndexError,
    MeshParseError,
    TriangleMesh,
    ValidationReport,
    geodesic_distance_matrix,
    geodesic_distances,
    load_mesh,
    load_off,
    load_ply,
    normalize_to_unit_area,
    save_off,
    validate_mesh,
)
from .optimizer import (
    OptimConfig,
    OptimizationError,
    PairState,
    RefineResult,
    energy_and_gradient,
    refine_pair,
)
from .pipeline import (
    MatchResult,
    Shape,
    evaluate_match,
    match_descriptor_nn,
    match_fmap,
    match_pair,
    match_refine,
    prepare_shape,
)
from .spectral import (
    EigensolverError,
    Operators,
    SpectralBasis,
    basis_residuals,
    build_operators,
    diffuse_implicit,
    diffuse_spectral,
    diffuse_spectral_columns,
    eigendecompose,
    heat_kernel,
)
from .synthetic import SyntheticPairSpec, generate_pair

__all__ = [
    "__version__",
    "get_or_compute_basis", "load_basis", "mesh_content_hash", "save_basis",
    "FunctionalMap", "HardCorrespondence", "SoftCorrespondence",
    "fmap_to_pointwise", "hard_from_soft", "nearest_neighbor_match",
    "pointwise_to_fmap", "soft_correspondence", "solve_functional_map",
    "unit_columns",
    "hks", "hks_times", "matching_features", "normalize_rows",
    "standardize_columns", "wks", "xyz",
    "EnergyBreakdown", "EnergyConfig", "RandomFunctionSet", "e_diff",
    "l_couple", "l_cycle", "l_diff", "l_dirichlet", "l_kernel", "l_struct",
    "l_total", "sample_random_functions",
    "ErrorProfile", "coverage", "geodesic_error", "map_smoothness",
    "pck_and_auc",
    "ShapePairMatcher",
    "DisconnectedMeshError", "GeodesicField", "MeshError", "MeshIndexError",
    "MeshParseError", "TriangleMesh", "ValidationReport",
    "geodesic_distance_matrix", "geodesic_distances", "load_mesh", "load_off",
    "load_ply", "normalize_to_unit_area", "save_off", "validate_mesh",
    "OptimConfig", "OptimizationError", "PairState", "RefineResult",
    "energy_and_gradient", "refine_pair",
    "MatchResult", "Shape", "evaluate_match", "match_descriptor_nn",
    "match_fmap", "match_pair", "match_refine", "prepare_shape",
    "EigensolverError", "Operators", "SpectralBasis", "basis_residuals",
    "build_operators", "diffuse_implicit", "diffuse_spectral",
    "diffuse_spectral_columns", "eigendecompose", "heat_kernel",
    "SyntheticPairSpec", "generate_pair",
]
