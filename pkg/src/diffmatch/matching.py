"""Estimator facade over the matching pipeline, in scikit-learn style.

ShapePairMatcher is transductive: ``fit`` takes one (source, target) mesh
pair, runs the selected matching mode, and ``predict`` returns the hard
correspondence for that fitted pair. Hyperparameters follow the sklearn
convention of verbatim constructor storage so ``get_params`` /
``set_params`` and ``clone`` behave as expected.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .energies import EnergyConfig
from .evaluation import DEFAULT_MAX_THRESHOLD
from .mesh import TriangleMesh
from .optimizer import OptimConfig
from .pipeline import MATCH_MODES, evaluate_match, match_pair, prepare_shape


class NotFittedError(RuntimeError):
    pass


class ShapePairMatcher(BaseEstimator):
    """Match one pair of triangle meshes, sklearn-style.

    Parameters mirror the pipeline defaults; ``mode`` picks the decoder:
    plain descriptor nearest neighbours, a functional-map solve, or full
    energy refinement.
    """

    def __init__(
        self,
        mode: str = "descriptor_nn",
        descriptor: str = "wks",
        k: int = 128,
        spectral_k: int = 30,
        h: int = 128,
        T: float = 1e-2,
        tau: float = 0.07,
        lambda_couple: float = 1.0,
        lambda_struct: float = 1.0,
        max_iters: int = 60,
        step_size: float = 1.0,
        smoothness_term: str = "diff",
        resample_each_iter: bool = False,
        seed: int = 0,
        cache_dir: str | None = None,
    ):
        self.mode = mode
        self.descriptor = descriptor
        self.k = k
        self.spectral_k = spectral_k
        self.h = h
        self.T = T
        self.tau = tau
        self.lambda_couple = lambda_couple
        self.lambda_struct = lambda_struct
        self.max_iters = max_iters
        self.step_size = step_size
        self.smoothness_term = smoothness_term
        self.resample_each_iter = resample_each_iter
        self.seed = seed
        self.cache_dir = cache_dir

    def _check_pair(self, X):
        if not isinstance(X, (tuple, list)) or len(X) != 2:
            raise ValueError(
                "X must be a (source, target) pair of meshes or mesh paths"
            )
        for item in X:
            if not isinstance(item, (TriangleMesh, str, Path)):
                raise ValueError(
                    f"pair entries must be TriangleMesh or paths, got {type(item)!r}"
                )
        return X

    def fit(self, X, y=None):
        """Preprocess the pair and compute the correspondence."""
        source, target = self._check_pair(X)
        if self.mode not in MATCH_MODES:
            raise ValueError(
                f"mode must be one of {MATCH_MODES}, got {self.mode!r}"
            )
        self.shape_m_ = prepare_shape(source, k=self.k, cache_dir=self.cache_dir)
        self.shape_n_ = prepare_shape(target, k=self.k, cache_dir=self.cache_dir)
        energy = EnergyConfig(
            h=self.h,
            T=self.T,
            tau=self.tau,
            lambda_couple=self.lambda_couple,
            lambda_struct=self.lambda_struct,
            seed=self.seed,
        )
        optim = OptimConfig(
            max_iters=self.max_iters,
            step_size=self.step_size,
            resample_each_iter=self.resample_each_iter,
            spectral_k=self.spectral_k,
            smoothness_term=self.smoothness_term,
        )
        self.result_ = match_pair(
            self.shape_m_,
            self.shape_n_,
            mode=self.mode,
            descriptor=self.descriptor,
            energy_config=energy,
            optim_config=optim,
        )
        return self

    def _require_fitted(self):
        if not hasattr(self, "result_"):
            raise NotFittedError("call fit() before using the matcher")

    def predict(self, X=None) -> np.ndarray:
        """Target index for every source vertex of the fitted pair."""
        self._require_fitted()
        if X is not None:
            self._check_pair(X)
        return self.result_.map_mn.indices.copy()

    def predict_inverse(self) -> np.ndarray:
        """Source index for every target vertex (the reverse map)."""
        self._require_fitted()
        return self.result_.map_nm.indices.copy()

    def transform(self, functions_on_target: np.ndarray) -> np.ndarray:
        """Pull vertex functions on the target back to the source."""
        self._require_fitted()
        values = np.asarray(functions_on_target, dtype=np.float64)
        if values.shape[0] != self.shape_n_.n:
            raise ValueError(
                f"functions have {values.shape[0]} rows, target has {self.shape_n_.n}"
            )
        return values[self.result_.map_mn.indices]

    def fit_transform(self, X, functions_on_target: np.ndarray):
        return self.fit(X).transform(functions_on_target)

    def score(self, X=None, y=None) -> float:
        """PCK area under curve against ground-truth target indices ``y``.

        ``y`` may be a plain index array or a HardCorrespondence.
        """
        self._require_fitted()
        if y is None:
            raise ValueError("score() needs ground-truth target indices")
        from .correspondence import HardCorrespondence

        if isinstance(y, HardCorrespondence):
            gt = y
        else:
            gt = HardCorrespondence(
                indices=np.asarray(y, dtype=np.int64), n_target=self.shape_n_.n
            )
        profile, _ = evaluate_match(
            self.result_,
            gt,
            self.shape_m_,
            self.shape_n_,
            max_threshold=DEFAULT_MAX_THRESHOLD,
        )
        return profile.auc
