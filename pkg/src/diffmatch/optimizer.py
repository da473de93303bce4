"""Per-pair refinement: descend the matching energy over learnable features.

The free parameters are either per-vertex feature matrices E_M, E_N (soft
maps arise from a temperature softmax over their inner products, functional
maps from a least-squares solve on the same features) or, for small pairs,
the two score matrices themselves. All gradients are analytic: the chain
runs through the row softmax, through each per-row SPD solve of the
functional-map system (via its adjoint), and through the linear diffusion
operators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .correspondence import (
    DEFAULT_FMAP_REGULARIZER,
    HardCorrespondence,
    hard_from_soft,
    softmax_rows,
)
from .descriptors import matching_features, normalize_rows, wks
from .energies import (
    EnergyBreakdown,
    EnergyConfig,
    RandomFunctionSet,
    sample_random_functions,
)
from .spectral import SpectralBasis, heat_kernel

SMOOTHNESS_TERMS = ("diff", "kernel", "dirichlet", "cycle", "none")
PARAMETRISATIONS = ("features", "direct_scores")
INITIALISATIONS = ("wks", "eigfuncs")
DIRECT_SCORES_MAX_N = 1000
# Initial-feature calibration: target median best-vs-runner-up score gap in
# temperature units, and a cap on the squared scale for degenerate inputs.
INIT_LOGIT_GAP = 3.0
MAX_FEATURE_SCALE_SQ = 1e8
# Floor on the per-row functional-map systems, as a fraction of the mean
# gram diagonal; guards literal zero pivots without disturbing exact solves.
FMAP_SOLVE_RIDGE = 1e-12
# Relative amplitude of the spectral-embedding columns appended to the
# initial features. Descriptor columns alone span far fewer directions than
# the refinement band, which leaves rows of the functional-map systems
# supported on noise; a faint embedding copy represents every band
# direction. The solve equalises columns, so its conditioning is independent
# of this amplitude, while the soft maps see only an O(amplitude^2) nudge.
EMBED_FRACTION = 1e-3

TRACE_HEADER = "iter,l_diff,l_couple,l_struct,l_total,step_size"


class OptimizationError(RuntimeError):
    """Raised when the energy turns non-finite; carries the trace so far."""

    def __init__(self, message, breakdown=None, trace=None):
        super().__init__(message)
        self.breakdown = breakdown
        self.trace = trace or []


@dataclass(frozen=True)
class OptimConfig:
    max_iters: int = 60
    step_size: float = 1.0
    backtrack: float = 0.5
    grad_tol: float = 1e-8
    resample_each_iter: bool = False
    parametrisation: str = "features"
    feature_dim: int = 128
    spectral_k: int = 30
    fmap_regularizer: float = DEFAULT_FMAP_REGULARIZER
    smoothness_term: str = "diff"
    fixed_time: float | None = None
    init: str = "wks"
    kernel_width: int = 4
    max_backtracks: int = 40

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if not 0 < self.backtrack < 1:
            raise ValueError(f"backtrack must be in (0, 1), got {self.backtrack}")
        if self.parametrisation not in PARAMETRISATIONS:
            raise ValueError(f"unknown parametrisation {self.parametrisation!r}")
        if self.smoothness_term not in SMOOTHNESS_TERMS:
            raise ValueError(f"unknown smoothness term {self.smoothness_term!r}")
        if self.init not in INITIALISATIONS:
            raise ValueError(f"unknown initialisation {self.init!r}")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    l_diff: float
    l_couple: float
    l_struct: float
    l_total: float
    step_size: float


def save_trace_csv(path: str | Path, trace: Sequence[TraceRow]) -> None:
    lines = [TRACE_HEADER]
    for row in trace:
        lines.append(
            f"{row.iteration},{row.l_diff:.17g},{row.l_couple:.17g},"
            f"{row.l_struct:.17g},{row.l_total:.17g},{row.step_size:.17g}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class PairState:
    """Everything the refinement loop mutates for one shape pair.

    Soft and functional maps are always derived fresh from the current
    parameters when the energy is evaluated; nothing map-like is cached.
    """

    basis_m: SpectralBasis
    basis_n: SpectralBasis
    parametrisation: str = "features"
    e_m: np.ndarray | None = None  # (n_M, d)
    e_n: np.ndarray | None = None  # (n_N, d)
    scores_mn: np.ndarray | None = None  # (n_M, n_N) logits
    scores_nm: np.ndarray | None = None  # (n_N, n_M) logits
    vertices_m: np.ndarray | None = None
    vertices_n: np.ndarray | None = None
    iteration: int = 0
    trace: list = field(default_factory=list)

    def parameters(self) -> tuple[np.ndarray, np.ndarray]:
        if self.parametrisation == "features":
            return self.e_m, self.e_n
        return self.scores_mn, self.scores_nm

    def set_parameters(self, first: np.ndarray, second: np.ndarray) -> None:
        if self.parametrisation == "features":
            self.e_m, self.e_n = first, second
        else:
            self.scores_mn, self.scores_nm = first, second

    def soft_maps(self, tau: float) -> tuple[np.ndarray, np.ndarray]:
        if self.parametrisation == "features":
            scores = (self.e_m @ self.e_n.T) / tau
            return softmax_rows(scores), softmax_rows(scores.T)
        return (
            softmax_rows(self.scores_mn / tau),
            softmax_rows(self.scores_nm / tau),
        )


def _softmax_vjp(pi: np.ndarray, d_pi: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the scores of a row softmax, given d(loss)/d(pi)."""
    inner = np.sum(d_pi * pi, axis=1, keepdims=True)
    return pi * (d_pi - inner)


def _solve_fmap_rows(
    basis_src: SpectralBasis,
    basis_tgt: SpectralBasis,
    e_src: np.ndarray,
    e_tgt: np.ndarray,
    lam: float,
) -> tuple[np.ndarray, Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]]:
    """Functional map from features, plus its reverse-mode closure.

    Forward projects the features, scales each coefficient column to unit
    norm (matching solve_functional_map's calibration, see unit_columns),
    and runs the per-row SPD solves with a small mean-scaled ridge: feature
    matrices that span fewer directions than the spectral band leave some
    rows of the normal system supported on noise, and the ridge keeps those
    rows (and their sensitivities) bounded. With unit columns the gram trace
    is the feature count, so the ridge is a constant w.r.t. the features and
    contributes nothing to the gradient. The closure maps a gradient w.r.t.
    the map C back to gradients w.r.t. the two feature matrices: the adjoint
    of each linear solve is one more solve with the same symmetric matrix,
    and the column scaling contributes the usual normalisation vjp.
    """
    raw_src = basis_src.project(e_src)  # (k_s, d)
    raw_tgt = basis_tgt.project(e_tgt)  # (k_t, d)
    norm_src = np.linalg.norm(raw_src, axis=0)
    norm_tgt = np.linalg.norm(raw_tgt, axis=0)
    norm_src = np.where(norm_src > 0.0, norm_src, 1.0)
    norm_tgt = np.where(norm_tgt > 0.0, norm_tgt, 1.0)
    a_src = raw_src / norm_src
    a_tgt = raw_tgt / norm_tgt
    gram = a_tgt @ a_tgt.T
    rhs = a_tgt @ a_src.T
    k_s = basis_src.k
    ridge = FMAP_SOLVE_RIDGE * np.trace(gram) / basis_tgt.k
    systems = []
    c = np.empty((k_s, basis_tgt.k))
    for i in range(k_s):
        gaps = basis_tgt.eigenvalues - basis_src.eigenvalues[i]
        system = gram + np.diag(lam * gaps**2 + ridge)
        systems.append(system)
        c[i] = np.linalg.solve(system, rhs[:, i])

    def backward(d_c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mu = np.empty_like(c)
        for i in range(k_s):
            mu[i] = np.linalg.solve(systems[i], d_c[i])
        d_a_src = mu @ a_tgt
        d_a_tgt = mu.T @ a_src - (mu.T @ c + c.T @ mu) @ a_tgt
        d_raw_src = (d_a_src - a_src * np.sum(a_src * d_a_src, axis=0)) / norm_src
        d_raw_tgt = (d_a_tgt - a_tgt * np.sum(a_tgt * d_a_tgt, axis=0)) / norm_tgt
        d_e_src = basis_src.operators.apply_mass(basis_src.eigenvectors @ d_raw_src)
        d_e_tgt = basis_tgt.operators.apply_mass(basis_tgt.eigenvectors @ d_raw_tgt)
        return d_e_src, d_e_tgt

    return c, backward


def _fro2(x: np.ndarray) -> float:
    return float(np.sum(x * x))


def _evaluate(
    state: PairState,
    funcs: RandomFunctionSet,
    config: EnergyConfig,
    optim: OptimConfig,
    kernels_m: Sequence[np.ndarray] | None,
    kernels_n: Sequence[np.ndarray] | None,
    want_grad: bool,
) -> tuple[EnergyBreakdown, np.ndarray | None, np.ndarray | None]:
    bm, bn = state.basis_m, state.basis_n
    phi_m, phi_n = bm.eigenvectors, bn.eigenvectors
    tau = config.tau
    features = state.parametrisation == "features"

    if features:
        raw_scores = (state.e_m @ state.e_n.T) / tau
        pi_mn = softmax_rows(raw_scores)
        pi_nm = softmax_rows(raw_scores.T)
    else:
        pi_mn = softmax_rows(state.scores_mn / tau)
        pi_nm = softmax_rows(state.scores_nm / tau)

    induced_mn = bn.project(pi_nm @ phi_m)  # (k_N, k_M)
    induced_nm = bm.project(pi_mn @ phi_n)  # (k_M, k_N)
    if features:
        c_mn, adj_mn = _solve_fmap_rows(
            bn, bm, state.e_n, state.e_m, optim.fmap_regularizer
        )
        c_nm, adj_nm = _solve_fmap_rows(
            bm, bn, state.e_m, state.e_n, optim.fmap_regularizer
        )
        couple = _fro2(c_mn - induced_mn) + _fro2(c_nm - induced_nm)
    else:
        c_mn, c_nm = induced_mn, induced_nm
        adj_mn = adj_nm = None
        couple = 0.0  # maps are induced, so the coupling residual vanishes

    term = optim.smoothness_term
    per_time_terms: list[float] = []
    cache: dict = {}
    if term == "diff":
        pulled_f = pi_nm @ funcs.F
        decay_n = np.exp(-np.outer(bn.eigenvalues, funcs.times))
        z_cols = phi_n @ (decay_n * bn.project(pulled_f))
        decay_m = np.exp(-np.outer(bm.eigenvalues, funcs.times))
        own = phi_m @ (decay_m * bm.project(funcs.F))
        residual = own - pi_mn @ z_cols
        column_terms = np.sum(residual * residual, axis=0)
        smooth = float(column_terms.sum())
        per_time_terms = [float(t) for t in column_terms]
        cache.update(residual=residual, z_cols=z_cols, decay_n=decay_n)
    elif term == "cycle":
        pulled_f = pi_nm @ funcs.F
        residual = funcs.F - pi_mn @ pulled_f
        smooth = _fro2(residual)
        cache.update(residual=residual, pulled_f=pulled_f)
    elif term == "kernel":
        residuals = [
            d_m - pi_nm.T @ d_n @ pi_nm
            for d_m, d_n in zip(kernels_m, kernels_n)
        ]
        smooth = float(sum(_fro2(r) for r in residuals))
        cache.update(kernel_residuals=residuals)
    elif term == "dirichlet":
        pulled_v = pi_nm @ state.vertices_m
        stiff_pulled = bn.operators.stiffness @ pulled_v
        smooth = float(np.sum(pulled_v * stiff_pulled))
        cache.update(stiff_pulled=stiff_pulled)
    else:  # "none"
        smooth = 0.0

    eye = np.eye(c_mn.shape[0])
    bij_1 = c_mn @ c_nm - eye
    bij_2 = c_nm @ c_mn - eye
    orth_1 = c_mn.T @ c_mn - eye
    orth_2 = c_nm.T @ c_nm - eye
    struct = _fro2(bij_1) + _fro2(bij_2) + _fro2(orth_1) + _fro2(orth_2)

    total = smooth + config.lambda_couple * couple + config.lambda_struct * struct
    breakdown = EnergyBreakdown(
        l_diff=smooth,
        l_couple=couple,
        l_struct=struct,
        l_total=total,
        per_time_terms=per_time_terms,
        seed=funcs.seed,
        config=config.to_dict(),
    )
    if not np.isfinite(total):
        bad = [
            name
            for name, value in [
                ("l_diff", smooth),
                ("l_couple", couple),
                ("l_struct", struct),
            ]
            if not np.isfinite(value)
        ]
        raise OptimizationError(
            f"energy is non-finite (offending terms: {', '.join(bad)})",
            breakdown=breakdown,
            trace=state.trace,
        )
    if not want_grad:
        return breakdown, None, None

    d_pi_mn = np.zeros_like(pi_mn)
    d_pi_nm = np.zeros_like(pi_nm)
    if term == "diff":
        residual, z_cols = cache["residual"], cache["z_cols"]
        d_pi_mn -= 2.0 * residual @ z_cols.T
        d_z = -2.0 * pi_mn.T @ residual
        d_pulled = bn.operators.apply_mass(
            phi_n @ (cache["decay_n"] * (phi_n.T @ d_z))
        )
        d_pi_nm += d_pulled @ funcs.F.T
    elif term == "cycle":
        residual, pulled_f = cache["residual"], cache["pulled_f"]
        d_pi_mn -= 2.0 * residual @ pulled_f.T
        d_pi_nm -= 2.0 * (pi_mn.T @ residual) @ funcs.F.T
    elif term == "kernel":
        acc = np.zeros_like(pi_nm)
        for r, d_n in zip(cache["kernel_residuals"], kernels_n):
            acc += d_n @ pi_nm @ r
        d_pi_nm -= 4.0 * acc
    elif term == "dirichlet":
        d_pi_nm += 2.0 * cache["stiff_pulled"] @ state.vertices_m.T

    d_c_mn = np.zeros_like(c_mn)
    d_c_nm = np.zeros_like(c_nm)
    if config.lambda_struct > 0:
        w = config.lambda_struct
        d_c_mn += w * (
            2.0 * (bij_1 @ c_nm.T + c_nm.T @ bij_2) + 4.0 * c_mn @ orth_1
        )
        d_c_nm += w * (
            2.0 * (c_mn.T @ bij_1 + bij_2 @ c_mn.T) + 4.0 * c_nm @ orth_2
        )

    if features:
        grad_e_m = np.zeros_like(state.e_m)
        grad_e_n = np.zeros_like(state.e_n)
        if config.lambda_couple > 0:
            w = config.lambda_couple
            g_mn = 2.0 * (c_mn - induced_mn)
            g_nm = 2.0 * (c_nm - induced_nm)
            d_c_mn += w * g_mn
            d_c_nm += w * g_nm
            d_pi_nm -= w * bn.operators.apply_mass(phi_n @ g_mn @ phi_m.T)
            d_pi_mn -= w * bm.operators.apply_mass(phi_m @ g_nm @ phi_n.T)
        if d_c_mn.any():
            d_src, d_tgt = adj_mn(d_c_mn)
            grad_e_n += d_src
            grad_e_m += d_tgt
        if d_c_nm.any():
            d_src, d_tgt = adj_nm(d_c_nm)
            grad_e_m += d_src
            grad_e_n += d_tgt
        d_scores = (
            _softmax_vjp(pi_mn, d_pi_mn) + _softmax_vjp(pi_nm, d_pi_nm).T
        ) / tau
        grad_e_m += d_scores @ state.e_n
        grad_e_n += d_scores.T @ state.e_m
        return breakdown, grad_e_m, grad_e_n

    # direct scores: the functional maps are exactly the induced ones, so the
    # structural gradient flows straight back into the soft maps
    if d_c_mn.any():
        d_pi_nm += bn.operators.apply_mass(phi_n @ d_c_mn @ phi_m.T)
    if d_c_nm.any():
        d_pi_mn += bm.operators.apply_mass(phi_m @ d_c_nm @ phi_n.T)
    grad_mn = _softmax_vjp(pi_mn, d_pi_mn) / tau
    grad_nm = _softmax_vjp(pi_nm, d_pi_nm) / tau
    return breakdown, grad_mn, grad_nm


def energy_and_gradient(
    state: PairState,
    funcs: RandomFunctionSet,
    config: EnergyConfig,
    optim: OptimConfig | None = None,
    kernels_m: Sequence[np.ndarray] | None = None,
    kernels_n: Sequence[np.ndarray] | None = None,
) -> tuple[EnergyBreakdown, np.ndarray, np.ndarray]:
    """Energy breakdown plus analytic gradients w.r.t. the pair parameters."""
    optim = optim or OptimConfig()
    return _evaluate(
        state, funcs, config, optim, kernels_m, kernels_n, want_grad=True
    )


def initial_features(basis: SpectralBasis, dim: int, init: str) -> np.ndarray:
    """Starting features: a spectral descriptor or raw low eigenfunctions.

    Either way the features are standardised per column and then given unit
    rows, so scores land in a range where the softmax temperature bites.
    """
    if init == "wks":
        feats = wks(basis, d=dim)
    elif init == "eigfuncs":
        feats = basis.eigenvectors[:, : min(dim, basis.k)]
    else:
        raise ValueError(f"unknown initialisation {init!r}")
    return matching_features(feats)


@dataclass(frozen=True)
class RefineResult:
    map_mn: HardCorrespondence  # source M -> target N
    map_nm: HardCorrespondence  # source N -> target M
    state: PairState
    trace: list


def _sample_probe(
    n: int, config: EnergyConfig, optim: OptimConfig, seed: int
) -> RandomFunctionSet:
    funcs = sample_random_functions(n, config.h, config.T, seed)
    if optim.fixed_time is not None:
        funcs = funcs.with_times(np.full(config.h, optim.fixed_time))
    return funcs


def _kernel_stacks(
    state: PairState, funcs: RandomFunctionSet, optim: OptimConfig
):
    if optim.smoothness_term != "kernel":
        return None, None
    times = funcs.times[: min(optim.kernel_width, funcs.h)]
    kernels_m = [heat_kernel(state.basis_m, t) for t in times]
    kernels_n = [heat_kernel(state.basis_n, t) for t in times]
    return kernels_m, kernels_n


def _calibrated_feature_scale(e_m: np.ndarray, e_n: np.ndarray, tau: float) -> float:
    """Scale for unit-row features so the initial soft maps are usably peaked.

    Spectral descriptors of nearby vertices are nearly parallel, so raw
    cosine scores divided by a fixed temperature give an almost uniform
    softmax regardless of mesh resolution. Scaling both feature sets by s
    multiplies every score gap by s^2; we pick s so that the median gap
    between each row's best and runner-up score is INIT_LOGIT_GAP
    temperature units, which concentrates each row on its descriptor
    neighbourhood without saturating the softmax.
    """
    scores = e_m @ e_n.T
    if scores.shape[1] < 2:
        return 1.0
    top_two = np.partition(scores, scores.shape[1] - 2, axis=1)[:, -2:]
    median_gap = float(np.median(top_two[:, 1] - top_two[:, 0]))
    median_gap = max(median_gap, 1e-12)
    return math.sqrt(min(INIT_LOGIT_GAP * tau / median_gap, MAX_FEATURE_SCALE_SQ))


def refine_pair(
    basis_m: SpectralBasis,
    basis_n: SpectralBasis,
    config: EnergyConfig,
    optim: OptimConfig,
    vertices_m: np.ndarray | None = None,
    vertices_n: np.ndarray | None = None,
    desc_m: np.ndarray | None = None,
    desc_n: np.ndarray | None = None,
) -> RefineResult:
    """Gradient descent with backtracking line search on the pair parameters.

    Each iteration holds its probe-function draw fixed, so the line search
    sees a deterministic objective and accepted steps never increase it; a
    fresh draw per iteration is opt-in. Maps are decoded by row argmax of
    the final soft correspondences.
    """
    if optim.smoothness_term == "dirichlet" and vertices_m is None:
        raise ValueError("dirichlet smoothness needs vertices_m")
    k = min(optim.spectral_k, basis_m.k, basis_n.k)
    bm, bn = basis_m.truncated(k), basis_n.truncated(k)

    if desc_m is None:
        desc_m = initial_features(basis_m, optim.feature_dim, optim.init)
    if desc_n is None:
        desc_n = initial_features(basis_n, optim.feature_dim, optim.init)
    desc_m = normalize_rows(desc_m)
    desc_n = normalize_rows(desc_n)
    if desc_m.shape[1] != desc_n.shape[1]:
        raise ValueError("initial descriptors must share a feature dimension")
    scale = _calibrated_feature_scale(desc_m, desc_n, config.tau)
    desc_m = scale * desc_m
    desc_n = scale * desc_n

    state = PairState(
        basis_m=bm,
        basis_n=bn,
        parametrisation=optim.parametrisation,
        vertices_m=vertices_m,
        vertices_n=vertices_n,
    )
    if optim.parametrisation == "features":
        row_norms = np.concatenate(
            [
                np.linalg.norm(bm.eigenvectors, axis=1),
                np.linalg.norm(bn.eigenvectors, axis=1),
            ]
        )
        emb_scale = EMBED_FRACTION * scale / max(float(np.median(row_norms)), 1e-30)
        state.e_m = np.hstack([desc_m, emb_scale * bm.eigenvectors])
        state.e_n = np.hstack([desc_n, emb_scale * bn.eigenvectors])
    else:
        if max(bm.n, bn.n) > DIRECT_SCORES_MAX_N:
            raise ValueError(
                "direct_scores parametrisation is capped at "
                f"{DIRECT_SCORES_MAX_N} vertices"
            )
        warm = desc_m @ desc_n.T
        state.scores_mn, state.scores_nm = warm.copy(), warm.T.copy()

    funcs = _sample_probe(bm.n, config, optim, config.seed)
    kernels_m, kernels_n = _kernel_stacks(state, funcs, optim)

    last_step = optim.step_size
    for it in range(optim.max_iters):
        if optim.resample_each_iter and it > 0:
            funcs = _sample_probe(bm.n, config, optim, config.seed + it)
            kernels_m, kernels_n = _kernel_stacks(state, funcs, optim)

        breakdown, grad_a, grad_b = _evaluate(
            state, funcs, config, optim, kernels_m, kernels_n, want_grad=True
        )
        grad_norm_sq = _fro2(grad_a) + _fro2(grad_b)
        if np.sqrt(grad_norm_sq) <= optim.grad_tol:
            state.trace.append(_trace_row(it, breakdown, 0.0))
            break

        param_a, param_b = state.parameters()
        step = min(optim.step_size, 4.0 * last_step)
        accepted = False
        for _ in range(optim.max_backtracks):
            state.set_parameters(param_a - step * grad_a, param_b - step * grad_b)
            trial, _, _ = _evaluate(
                state, funcs, config, optim, kernels_m, kernels_n, want_grad=False
            )
            if trial.l_total <= breakdown.l_total - 1e-4 * step * grad_norm_sq:
                accepted = True
                break
            step *= optim.backtrack
        if not accepted:
            state.set_parameters(param_a, param_b)
            state.trace.append(_trace_row(it, breakdown, 0.0))
            break
        last_step = step
        state.trace.append(_trace_row(it, breakdown, step))
        state.iteration = it + 1

    if not state.trace or state.trace[-1].step_size != 0.0:
        final, _, _ = _evaluate(
            state, funcs, config, optim, kernels_m, kernels_n, want_grad=False
        )
        state.trace.append(_trace_row(state.iteration, final, 0.0))

    pi_mn, pi_nm = state.soft_maps(config.tau)
    return RefineResult(
        map_mn=hard_from_soft(pi_mn),
        map_nm=hard_from_soft(pi_nm),
        state=state,
        trace=state.trace,
    )


def _trace_row(iteration: int, b: EnergyBreakdown, step: float) -> TraceRow:
    return TraceRow(
        iteration=iteration,
        l_diff=b.l_diff,
        l_couple=b.l_couple,
        l_struct=b.l_struct,
        l_total=b.l_total,
        step_size=step,
    )
