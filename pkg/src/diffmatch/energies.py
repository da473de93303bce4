"""Scalar objectives that score a pair of soft maps between two shapes.

Notation inside this module mirrors the correspondence conventions: for
shapes M and N, ``pi_mn`` is (n_M, n_N) and pulls vertex functions on N back
to M, ``pi_nm`` the reverse; ``c_mn`` is (k_N, k_M) and maps spectral
coefficients on M to coefficients on N, ``c_nm`` the reverse. Probe
functions F live on M as an (n_M, h) matrix, one function per column.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse

from .spectral import (
    SpectralBasis,
    diffuse_spectral,
    diffuse_spectral_columns,
    heat_kernel,
)
from .validation import check_matrix, check_non_negative, check_positive

DEFAULT_SKETCH_WIDTH = 128
DEFAULT_MAX_TIME = 1e-2
NONISOMETRIC_MAX_TIME = 1e-4


def _fro2(x: np.ndarray) -> float:
    return float(np.sum(x * x))


@dataclass(frozen=True)
class RandomFunctionSet:
    """Random probe functions with one diffusion time per column.

    Every row (vertex) of F has unit Euclidean norm, so each vertex starts
    with the same amount of heat; times lie in [0, T].
    """

    F: np.ndarray  # (n, h)
    times: np.ndarray  # (h,)
    seed: int
    T: float

    def __post_init__(self):
        f = check_matrix(self.F, "F")
        times = np.asarray(self.times, dtype=np.float64)
        if times.shape != (f.shape[1],):
            raise ValueError(
                f"times has shape {times.shape}, expected ({f.shape[1]},)"
            )
        if (times < 0).any() or (times > self.T).any():
            raise ValueError("diffusion times must lie in [0, T]")
        object.__setattr__(self, "F", f)
        object.__setattr__(self, "times", times)

    @property
    def h(self) -> int:
        return self.F.shape[1]

    def with_times(self, times: np.ndarray) -> "RandomFunctionSet":
        t = np.asarray(times, dtype=np.float64)
        cap = max(self.T, float(t.max(initial=0.0)))
        return RandomFunctionSet(F=self.F, times=t, seed=self.seed, T=cap)


def sample_random_functions(
    n: int, h: int, T: float, seed: int
) -> RandomFunctionSet:
    """Draw an (n, h) standard-normal matrix, unit-normalise rows, draw times."""
    if h < 1:
        raise ValueError(f"sketch width must be >= 1, got {h}")
    check_non_negative(T, "T")
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((n, h))
    norms = np.linalg.norm(f, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    f /= norms
    times = rng.uniform(0.0, T, size=h) if T > 0 else np.zeros(h)
    return RandomFunctionSet(F=f, times=times, seed=seed, T=T)


@dataclass(frozen=True)
class EnergyConfig:
    h: int = DEFAULT_SKETCH_WIDTH
    T: float = DEFAULT_MAX_TIME
    tau: float = 0.07
    lambda_couple: float = 1.0
    lambda_struct: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.h < 1:
            raise ValueError(f"sketch width must be >= 1, got {self.h}")
        check_non_negative(self.T, "T")
        check_positive(self.tau, "tau")
        check_non_negative(self.lambda_couple, "lambda_couple")
        check_non_negative(self.lambda_struct, "lambda_struct")

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "T": self.T,
            "tau": self.tau,
            "lambda_couple": self.lambda_couple,
            "lambda_struct": self.lambda_struct,
            "seed": self.seed,
        }


def e_diff(
    basis_m: SpectralBasis,
    basis_n: SpectralBasis,
    f: np.ndarray,
    t: float,
    pi_mn: np.ndarray,
    pi_nm: np.ndarray,
) -> float:
    """Synchronous-diffusion residual at a single shared time.

    ||h_t^M(F) - Pi_MN h_t^N(Pi_NM F)||_F^2 with spectral diffusion on both
    shapes: diffusing on M then mapping must agree with mapping, diffusing
    on N and mapping back.
    """
    f = np.atleast_2d(np.asarray(f, dtype=np.float64).T).T  # promote (n,) -> (n, 1)
    own = diffuse_spectral(basis_m, f, t)
    roundtrip = pi_mn @ diffuse_spectral(basis_n, pi_nm @ f, t)
    return _fro2(own - roundtrip)


def l_diff_terms(
    basis_m: SpectralBasis,
    basis_n: SpectralBasis,
    funcs: RandomFunctionSet,
    pi_mn: np.ndarray,
    pi_nm: np.ndarray,
) -> np.ndarray:
    """Per-column synchronous-diffusion residuals, each at its own time."""
    own = diffuse_spectral_columns(basis_m, funcs.F, funcs.times)
    roundtrip = pi_mn @ diffuse_spectral_columns(
        basis_n, pi_nm @ funcs.F, funcs.times
    )
    diff = own - roundtrip
    return np.sum(diff * diff, axis=0)


def l_diff(
    basis_m: SpectralBasis,
    basis_n: SpectralBasis,
    funcs: RandomFunctionSet,
    pi_mn: np.ndarray,
    pi_nm: np.ndarray,
    funcs_reverse: RandomFunctionSet | None = None,
) -> float:
    """Multiscale synchronous-diffusion loss: per-column residuals summed.

    The loss starts from functions on M only; pass ``funcs_reverse`` (a set
    living on N) to add the mirrored term and symmetrise.
    """
    total = float(l_diff_terms(basis_m, basis_n, funcs, pi_mn, pi_nm).sum())
    if funcs_reverse is not None:
        total += float(
            l_diff_terms(basis_n, basis_m, funcs_reverse, pi_nm, pi_mn).sum()
        )
    return total


def l_kernel(
    basis_m: SpectralBasis,
    basis_n: SpectralBasis,
    times: Sequence[float] | np.ndarray,
    pi_nm: np.ndarray,
    kernels_m: Sequence[np.ndarray] | None = None,
    kernels_n: Sequence[np.ndarray] | None = None,
) -> float:
    """Heat-kernel matching: sum_i ||D_M^{t_i} - Pi_NM^T D_N^{t_i} Pi_NM||_F^2.

    Dense kernels may be passed in when the caller already holds them (they
    only depend on the bases and times, not on the maps).
    """
    times = np.asarray(times, dtype=np.float64)
    total = 0.0
    for i, t in enumerate(times):
        d_m = kernels_m[i] if kernels_m is not None else heat_kernel(basis_m, t)
        d_n = kernels_n[i] if kernels_n is not None else heat_kernel(basis_n, t)
        total += _fro2(d_m - pi_nm.T @ d_n @ pi_nm)
    return total


def l_dirichlet(
    pi_nm: np.ndarray,
    vertices_m: np.ndarray,
    stiffness_n: sparse.spmatrix,
) -> float:
    """Dirichlet smoothness of M's coordinates pulled onto N.

    tr((Pi_NM V_M)^T L_N (Pi_NM V_M)): zero when the pulled coordinates are
    constant (everything matched to one vertex), large for jagged maps.
    """
    pulled = pi_nm @ vertices_m
    return float(np.sum(pulled * (stiffness_n @ pulled)))


def l_cycle(
    f: np.ndarray,
    pi_mn: np.ndarray,
    pi_nm: np.ndarray,
) -> float:
    """Round-trip consistency ||F - Pi_MN Pi_NM F||_F^2."""
    f = np.asarray(f, dtype=np.float64)
    return _fro2(f - pi_mn @ (pi_nm @ f))


def l_couple(
    c_mn: np.ndarray,
    c_nm: np.ndarray,
    pi_mn: np.ndarray,
    pi_nm: np.ndarray,
    basis_m: SpectralBasis,
    basis_n: SpectralBasis,
) -> float:
    """Consistency of the spectral maps with the pointwise maps.

    ||C_MN - Phi_N^+ Pi_NM Phi_M||_F^2 + ||C_NM - Phi_M^+ Pi_MN Phi_N||_F^2.
    """
    induced_mn = basis_n.project(pi_nm @ basis_m.eigenvectors)
    induced_nm = basis_m.project(pi_mn @ basis_n.eigenvectors)
    return _fro2(c_mn - induced_mn) + _fro2(c_nm - induced_nm)


def l_struct(
    c_mn: np.ndarray,
    c_nm: np.ndarray,
    lambda_bij: float = 1.0,
    lambda_orth: float = 1.0,
) -> float:
    """Bijectivity plus orthogonality penalties on a pair of square maps."""
    c_mn = check_matrix(c_mn, "c_mn")
    c_nm = check_matrix(c_nm, "c_nm")
    if c_mn.shape[0] != c_mn.shape[1] or c_mn.shape != c_nm.shape[::-1]:
        raise ValueError(
            f"expected square maps of equal order, got {c_mn.shape} and {c_nm.shape}"
        )
    eye = np.eye(c_mn.shape[0])
    bij = _fro2(c_mn @ c_nm - eye) + _fro2(c_nm @ c_mn - eye)
    orth = _fro2(c_mn.T @ c_mn - eye) + _fro2(c_nm.T @ c_nm - eye)
    return lambda_bij * bij + lambda_orth * orth


@dataclass(frozen=True)
class EnergyBreakdown:
    """Per-term values of the combined objective, serialisable for logs."""

    l_diff: float
    l_couple: float
    l_struct: float
    l_total: float
    per_time_terms: list = field(default_factory=list)
    seed: int = 0
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "l_diff": self.l_diff,
            "l_couple": self.l_couple,
            "l_struct": self.l_struct,
            "l_total": self.l_total,
            "per_time_terms": list(self.per_time_terms),
            "seed": self.seed,
            "config": self.config,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EnergyBreakdown":
        raw = json.loads(text)
        return cls(
            l_diff=raw["l_diff"],
            l_couple=raw["l_couple"],
            l_struct=raw["l_struct"],
            l_total=raw["l_total"],
            per_time_terms=raw.get("per_time_terms", []),
            seed=raw.get("seed", 0),
            config=raw.get("config", {}),
        )


def l_total(
    basis_m: SpectralBasis,
    basis_n: SpectralBasis,
    funcs: RandomFunctionSet,
    pi_mn: np.ndarray,
    pi_nm: np.ndarray,
    c_mn: np.ndarray,
    c_nm: np.ndarray,
    config: EnergyConfig,
) -> EnergyBreakdown:
    """Combined objective: l_diff + lambda_couple*l_couple + lambda_struct*l_struct."""
    terms = l_diff_terms(basis_m, basis_n, funcs, pi_mn, pi_nm)
    diff = float(terms.sum())
    couple = l_couple(c_mn, c_nm, pi_mn, pi_nm, basis_m, basis_n)
    struct = l_struct(c_mn, c_nm)
    total = diff + config.lambda_couple * couple + config.lambda_struct * struct
    return EnergyBreakdown(
        l_diff=diff,
        l_couple=couple,
        l_struct=struct,
        l_total=total,
        per_time_terms=[float(t) for t in terms],
        seed=funcs.seed,
        config=config.to_dict(),
    )
