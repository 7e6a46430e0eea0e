"""Maximum-likelihood learning of Ising parameters with a pluggable log Z backend.

The outer objective is ``-mean log p̃(x; θ) + log Ẑ(θ)`` with ``log Ẑ = -F``.
Its gradient is ``E_model[φ] - E_data[φ]`` for the spin features
``φ = (s_i, s_i s_j)``. The model moments come from the backend: factor
beliefs for exact / mf / lbp / dbp, and ``Σ_R c_R E_{b_R}[φ_a]`` for region
backends (gbp, renn), which is the θ-gradient of ``-F_R`` at fixed beliefs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from . import tensor as T
from ._tables import marginalize
from .classic import loopy_bp, mean_field
from .errors import CapacityError, ContractViolation
from .exact import MAX_STATES, exact_inference
from .gbp import gbp_run
from .model import PairwiseMRF, as_factor_graph, log_scores, states_to_spins, write_model
from .regiongraph import build_region_graph, region_free_energy
from .renn import RennConfig, RennModel, renn_objective

__all__ = ["LearnConfig", "LearnResult", "learn_mrf", "nll_eval", "model_moments",
           "data_moments", "region_moments", "mle_single_edge", "BACKENDS"]

BACKENDS = ("exact", "mf", "lbp", "dbp", "gbp", "renn")


@dataclass
class LearnConfig:
    lr: float = 0.02
    inner_steps: int = 20
    epochs: int = 200
    batch_size: int | None = None       # None = full batch
    backend: str = "renn"
    seed: int = 0
    renn_lr: float = 1e-3
    lam: float = 5.0
    damping: float = 0.5                # for dbp
    max_iters: int = 1000
    infinite_face: bool = False
    restart_every: int = 5              # renn: fresh-network check period (0 = never)

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ContractViolation(f"unknown backend {self.backend!r}; choose from {BACKENDS}")
        if self.backend == "renn" and self.inner_steps < 1:
            raise ContractViolation("renn backend needs inner_steps >= 1")
        if self.epochs < 1:
            raise ContractViolation("epochs must be positive")


@dataclass
class LearnResult:
    model: PairwiseMRF
    trace: list[dict] = field(default_factory=list)
    final: dict = field(default_factory=dict)      # exact NLLs at the returned θ

    def trailer(self) -> list[str]:
        return [f"epoch {t['epoch']} nll {t['test_nll']!r}" for t in self.trace]

    def save(self, path):
        write_model(self.model, path, self.trailer())


def nll_eval(model, dataset, log_Z: float) -> float:
    """Mean of ``log_Z - log p̃(x)`` over the dataset."""
    X = np.asarray(dataset)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ContractViolation("dataset must be a non-empty 2-D array")
    return float(log_Z - log_scores(as_factor_graph(model), X).mean())


def data_moments(mrf: PairwiseMRF, X) -> tuple[np.ndarray, np.ndarray]:
    S = states_to_spins(X).astype(np.float64)
    if S.ndim != 2 or S.shape[1] != mrf.n:
        raise ContractViolation(f"dataset must have shape (m, {mrf.n})")
    e = mrf.edge_list
    pair = np.array([np.mean(S[:, i] * S[:, j]) for i, j in e])
    return S.mean(axis=0), pair


_SS = np.array([[1.0, -1.0], [-1.0, 1.0]])
_S = np.array([-1.0, 1.0])


def model_moments(mrf: PairwiseMRF, unary, factor_marginals) -> tuple[np.ndarray, np.ndarray]:
    """Spin moments from factor beliefs (pairwise factors first, in edge order)."""
    m = len(mrf.edges)
    pair = np.array([float((factor_marginals[k] * _SS).sum()) for k in range(m)])
    single = np.asarray(unary)[:, :2] @ _S
    return single, pair


def region_moments(mrf: PairwiseMRF, rg, beliefs) -> tuple[np.ndarray, np.ndarray]:
    """``Σ_R c_R E_{b_R}[φ_a]`` for every factor a (gradient of -F_R w.r.t. θ)."""
    fg = as_factor_graph(mrf)
    m = len(mrf.edges)
    acc = np.zeros(fg.num_factors)
    for r in rg.regions:
        if r.counting == 0:
            continue
        for a in r.factors:
            f = fg.factors[a]
            marg = marginalize(beliefs[r.id], r.vars, f.scope)
            feat = _SS if len(f.scope) == 2 else _S
            acc[a] += r.counting * float((marg * feat).sum())
    return acc[m:], acc[:m]


class _RennBackend:
    """A warm-started RENN whose region energies track the current θ.

    Every ``restart_every`` outer epochs a freshly initialized network is
    trained to convergence at the current θ and replaces the warm one if it
    reaches a lower objective. The region objective is non-convex and a warm
    network can stay in a basin that no longer holds the minimum; since the
    outer step rewards an overestimated F, such a stale basin gets exploited.
    """

    def __init__(self, mrf, config: LearnConfig):
        self.config = config
        self.rg = build_region_graph(mrf, include_infinite_face=config.infinite_face)
        self.calls = 0
        self._install(self._fresh(mrf, config.seed))

    def _fresh(self, mrf, seed):
        net = RennModel(self.rg, mrf, RennConfig(lam=self.config.lam, lr=self.config.renn_lr,
                                                 seed=seed))
        loss, _, _ = renn_objective(net.maps, net.b_root, self.config.lam)
        return net, loss, T.Adam(net.params, lr=self.config.renn_lr)

    def _install(self, triple):
        self.net, self.loss, self.opt = triple
        self.maps = self.net.maps

    @staticmethod
    def _train(triple, steps, tol=None, window=20):
        net, loss, opt = triple
        hist = []
        for _ in range(steps):
            net.tape.replay()
            value, grads = T.forward_backward(net.tape, loss)
            hist.append(value)
            if tol is not None and len(hist) > window:
                ref = hist[-1 - window]
                if abs(value - ref) / max(abs(ref), 1.0) < tol:
                    break
            opt.step(net.params, grads)
        net.tape.replay()
        return loss.item()

    def run(self, mrf, steps):
        self.maps.set_model(mrf)
        warm = self._train((self.net, self.loss, self.opt), steps)
        self.calls += 1
        every = self.config.restart_every
        if every and self.calls % every == 0:
            cand = self._fresh(mrf, self.config.seed + self.calls)
            value = self._train(cand, RennConfig().max_epochs, tol=RennConfig().tol)
            if value < warm:
                self._install(cand)
        flat = np.asarray(self.maps.M @ self.net.root_vector())
        beliefs = self.maps.split(np.clip(flat, 0.0, None))
        beliefs = {k: v / v.sum() for k, v in beliefs.items()}
        F = region_free_energy(self.rg, beliefs, mrf, energies=self.maps.energy)
        return region_moments(mrf, self.rg, beliefs), F


def _backend_step(mrf, config, state):
    b = config.backend
    if b == "exact":
        res = exact_inference(mrf)
        return model_moments(mrf, res.unary, res.factor_marginals), -res.log_Z
    if b == "mf":
        res = mean_field(mrf, max_iters=config.max_iters)
    elif b in ("lbp", "dbp"):
        res = loopy_bp(mrf, max_iters=config.max_iters,
                       damping=config.damping if b == "dbp" else 0.0)
    elif b == "gbp":
        if "rg" not in state:
            state["rg"] = build_region_graph(mrf, include_infinite_face=config.infinite_face)
        res = gbp_run(state["rg"], mrf, max_iters=config.max_iters)
        return region_moments(mrf, state["rg"], res.region_beliefs), res.free_energy
    else:
        if "renn" not in state:
            state["renn"] = _RennBackend(mrf, config)
        return state["renn"].run(mrf, config.inner_steps)
    return model_moments(mrf, res.unary, res.factor_marginals), res.free_energy


def learn_mrf(structure: PairwiseMRF, train, test=None, config: LearnConfig | None = None,
              init: str = "zero") -> LearnResult:
    """Fit ``h`` and ``J`` on ``structure``'s edges by Adam on the outer objective.

    Each epoch is one full-batch (or minibatch, if ``batch_size`` is set) θ step,
    preceded by a backend pass at the current θ. The trace records train NLL
    and test NLL under both the backend's ``log Ẑ`` and, when enumeration fits,
    the exact ``log Z``. ``test_nll`` is the backend-estimate column.
    """
    config = config or LearnConfig()
    X = np.asarray(train)
    Xt = np.asarray(test) if test is not None else X
    if X.ndim != 2 or X.shape[1] != structure.n or X.shape[0] == 0:
        raise ContractViolation(f"training data must have shape (m, {structure.n})")
    if init == "zero":
        mrf = structure.with_params(np.zeros(structure.n), np.zeros(len(structure.edges)))
    elif init == "structure":
        mrf = structure
    else:
        raise ContractViolation("init must be 'zero' or 'structure'")
    exact_ok = 2 ** structure.n <= MAX_STATES
    rng = np.random.default_rng(config.seed)
    theta = np.concatenate([mrf.h, mrf.J])
    opt = T.Adam([theta], lr=config.lr)
    state: dict = {}
    trace = []
    n = structure.n
    for epoch in range(1, config.epochs + 1):
        if config.batch_size and config.batch_size < X.shape[0]:
            batch = X[rng.choice(X.shape[0], config.batch_size, replace=False)]
        else:
            batch = X
        d1, d2 = data_moments(mrf, batch)
        try:
            (m1, m2), F = _backend_step(mrf, config, state)
        except (ArithmeticError, ValueError, CapacityError) as exc:
            raise type(exc)(f"epoch {epoch}: {exc}") from exc
        grad = np.concatenate([m1 - d1, m2 - d2])
        log_Zhat = -F
        row = {"epoch": epoch,
               "train_nll": nll_eval(mrf, X, log_Zhat),
               "test_nll": nll_eval(mrf, Xt, log_Zhat),
               "grad_norm": float(np.linalg.norm(grad))}
        if exact_ok:
            log_Z = exact_inference(mrf).log_Z
            row["test_nll_exact"] = nll_eval(mrf, Xt, log_Z)
            row["train_nll_exact"] = nll_eval(mrf, X, log_Z)
        trace.append(row)
        opt.step([theta], [grad])
        mrf = mrf.with_params(theta[:n], theta[n:])
    if exact_ok:
        log_Z = exact_inference(mrf).log_Z
        final = {"epoch": config.epochs + 1, "test_nll_exact": nll_eval(mrf, Xt, log_Z),
                 "train_nll_exact": nll_eval(mrf, X, log_Z)}
    else:
        final = {"epoch": config.epochs + 1}
    return LearnResult(mrf, trace, final)


def mle_single_edge(X) -> float:
    """Closed-form saturated MLE of J for two spins with h free."""
    S = states_to_spins(X)
    c = {(a, b): np.mean((S[:, 0] == a) & (S[:, 1] == b)) for a in (-1, 1) for b in (-1, 1)}
    return 0.25 * math.log(c[(1, 1)] * c[(-1, -1)] / (c[(1, -1)] * c[(-1, 1)]))
