"""scikit-learn style wrappers around inference and learning.

``MarginalInference`` is fit on a model (not on data) and exposes the fitted
marginals; ``IsingMRFLearner`` is fit on a spin dataset and scores samples by
log-likelihood under the learned model.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, DensityMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import ContractViolation
from .exact import MAX_STATES, exact_inference
from .harness import METHODS, run_method
from .learn import BACKENDS, LearnConfig, learn_mrf
from .model import FactorGraph, PairwiseMRF, as_factor_graph, complete_edges, log_scores

__all__ = ["MarginalInference", "IsingMRFLearner", "check_dataset"]


def check_dataset(X, n: int | None = None) -> np.ndarray:
    """Validate a spin dataset (entries in {-1, 1}) and return state indices."""
    X = check_array(X, dtype=None, ensure_2d=True)
    if not np.all((X == 1) | (X == -1)):
        raise ContractViolation("dataset entries must be -1 or 1")
    if n is not None and X.shape[1] != n:
        raise ContractViolation(f"dataset has {X.shape[1]} columns, model has {n} variables")
    return ((X.astype(np.int64) + 1) // 2)


class MarginalInference(BaseEstimator):
    """Approximate marginals and ``log Z`` for one model with a named method."""

    def __init__(self, method="renn", damping=None, lam=5.0, lr=1e-3, max_iters=1000,
                 max_epochs=5000, tol=None, infinite_face=False, seed=0):
        self.method = method
        self.damping = damping
        self.lam = lam
        self.lr = lr
        self.max_iters = max_iters
        self.max_epochs = max_epochs
        self.tol = tol
        self.infinite_face = infinite_face
        self.seed = seed

    def fit(self, model, y=None):
        if not isinstance(model, (PairwiseMRF, FactorGraph)):
            raise ContractViolation("fit expects a PairwiseMRF or FactorGraph")
        if self.method not in METHODS:
            raise ContractViolation(f"unknown method {self.method!r}")
        res = run_method(model, self.method, damping=self.damping, lam=self.lam, lr=self.lr,
                         max_iters=self.max_iters, max_epochs=self.max_epochs, tol=self.tol,
                         infinite_face=self.infinite_face, seed=self.seed)
        self.result_ = res
        self.unary_marginals_ = res.unary
        self.pairwise_marginals_ = res.pairwise
        self.free_energy_ = res.free_energy
        self.log_partition_ = -res.free_energy
        self.converged_ = res.converged
        return self

    def transform(self, queries):
        """Marginal tables for a list of variable scopes."""
        check_is_fitted(self, "result_")
        return [self.result_.marginal(tuple(q)) for q in queries]


class IsingMRFLearner(DensityMixin, BaseEstimator):
    """Learn Ising ``h`` and ``J`` on a fixed edge set from spin data.

    ``edges=None`` means the complete graph on the data's columns.
    """

    def __init__(self, edges=None, backend="exact", epochs=200, lr=0.02, inner_steps=20,
                 seed=0):
        self.edges = edges
        self.backend = backend
        self.epochs = epochs
        self.lr = lr
        self.inner_steps = inner_steps
        self.seed = seed

    def fit(self, X, y=None):
        if self.backend not in BACKENDS:
            raise ContractViolation(f"unknown backend {self.backend!r}")
        S = check_dataset(X)
        n = S.shape[1]
        edges = complete_edges(n) if self.edges is None else sorted(
            tuple(sorted(e)) for e in self.edges)
        topo = ("complete", n) if self.edges is None and n >= 1 else ("custom",)
        structure = PairwiseMRF(n, np.zeros(n), tuple((i, j, 0.0) for i, j in edges),
                                topology=topo)
        cfg = LearnConfig(lr=self.lr, inner_steps=self.inner_steps, epochs=self.epochs,
                          backend=self.backend, seed=self.seed)
        res = learn_mrf(structure, S, None, cfg)
        self.model_ = res.model
        self.trace_ = res.trace
        self.n_features_in_ = n
        self.h_ = res.model.h.copy()
        self.J_ = res.model.J.copy()
        if 2 ** n <= MAX_STATES:
            self.log_partition_ = exact_inference(res.model).log_Z
        return self

    def score_samples(self, X):
        """Per-sample log-likelihood (needs the exact partition function)."""
        check_is_fitted(self, "model_")
        if not hasattr(self, "log_partition_"):
            raise ContractViolation("model too large for an exact partition function")
        S = check_dataset(X, self.n_features_in_)
        return log_scores(as_factor_graph(self.model_), S) - self.log_partition_

    def score(self, X, y=None):
        """Mean log-likelihood."""
        return float(np.mean(self.score_samples(X)))
