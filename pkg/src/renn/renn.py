"""Region-based free-energy minimization with a small trainable network.

Root-region beliefs come from a softmax over each root's full joint logit
vector. Every lower region's belief is the average, over its parents, of the
parent beliefs marginalized to its scope. Composed down the levels, this makes
all non-root beliefs one fixed sparse linear map of the stacked root beliefs,
and the same holds for the parent/child consistency residuals.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
import time

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from ._tables import marginal_matrix
from .classic import InferenceResult, result_from_region_beliefs
from .errors import ContractViolation, NumericFault
from .model import as_factor_graph
from .regiongraph import (RegionGraph, extract_marginals, region_energy_table,
                          region_free_energy)

__all__ = ["RennConfig", "RennModel", "RegionMaps", "root_beliefs", "descend_beliefs",
           "renn_objective", "renn_infer", "extract_marginals", "select_lambda",
           "LAMBDA_MENU"]

LAMBDA_MENU = (1.0, 3.0, 5.0, 10.0)
_LOG_EPS = 1e-12


@dataclass
class RennConfig:
    lam: float = 5.0
    lr: float = 1e-3
    max_epochs: int = 5000
    tol: float = 1e-7
    window: int = 20
    d_e: int = 32
    d_h: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ContractViolation("lambda must be non-negative")
        if self.max_epochs < 1 or self.window < 1:
            raise ContractViolation("max_epochs and window must be positive")


def _marg_sparse(scope, target, cards):
    rows, size, tsize = marginal_matrix(tuple(scope), tuple(target), cards)
    return sp.csr_matrix((np.ones(size), (rows, np.arange(size))), shape=(tsize, size))


class RegionMaps:
    """Flat layouts and linear maps for one region graph and model.

    ``M`` maps stacked root beliefs to stacked beliefs of all regions (region
    order); ``D`` maps them to the stacked consistency residuals
    ``b_R - Σ_{S(P)\\S(R)} b_P`` over every (parent, child) edge.
    """

    def __init__(self, rg: RegionGraph, model):
        fg = as_factor_graph(model)
        self.rg = rg
        self.roots = [r.id for r in rg.regions if not rg.parents[r.id]]
        for r in rg.regions:
            if not rg.parents[r.id] and r.level != 0:
                raise ContractViolation(f"region {r.id} below level 0 has no parents")
        sizes = [int(np.prod(rg.shape(r.id))) for r in rg.regions]
        self.sizes = sizes
        self.offset = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        root_sizes = [sizes[k] for k in self.roots]
        self.root_offset = np.concatenate([[0], np.cumsum(root_sizes)]).astype(int)
        n_root = int(self.root_offset[-1])
        self.n_root = n_root
        A: dict[int, sp.csr_matrix] = {}
        for j, k in enumerate(self.roots):
            a, b = self.root_offset[j], self.root_offset[j + 1]
            A[k] = sp.csr_matrix((np.ones(b - a), (np.arange(b - a), np.arange(a, b))),
                                 shape=(b - a, n_root))
        marg = {}
        for p, c in rg.edges:
            marg[(p, c)] = _marg_sparse(rg.regions[p].vars, rg.regions[c].vars, rg.cards)
        for k in rg.order:
            if k in A:
                continue
            ps = rg.parents[k]
            A[k] = sum(marg[(p, k)] @ A[p] for p in ps) / len(ps)
            A[k] = sp.csr_matrix(A[k])
        self.M = sp.csr_matrix(sp.vstack([A[r.id] for r in rg.regions]))
        blocks = [A[c] - marg[(p, c)] @ A[p] for p, c in rg.edges]
        self.D = sp.csr_matrix(sp.vstack(blocks)) if blocks else sp.csr_matrix((0, n_root))
        self.counting = np.concatenate([np.full(sizes[r.id], float(r.counting))
                                        for r in rg.regions])
        self.c_energy = np.zeros(int(self.offset[-1]))
        self.set_model(fg)

    def set_model(self, model):
        """Refresh region energies for new potentials on the same structure.

        ``c_energy`` is updated in place so objectives already built on a tape
        see the new values on replay.
        """
        fg = as_factor_graph(model)
        self.energy = {r.id: region_energy_table(self.rg, r.id, fg) for r in self.rg.regions}
        self.energy_vec = np.concatenate([self.energy[r.id].reshape(-1) for r in self.rg.regions])
        self.c_energy[...] = self.counting * self.energy_vec

    def split(self, flat_all) -> dict[int, np.ndarray]:
        return {r.id: np.asarray(flat_all[self.offset[r.id]:self.offset[r.id + 1]])
                .reshape(self.rg.shape(r.id)) for r in self.rg.regions}

    def stack_roots(self, tables) -> np.ndarray:
        return np.concatenate([np.asarray(tables[k], dtype=np.float64).reshape(-1)
                               for k in self.roots])


class RennModel:
    """Variable embeddings, a shared tanh layer, and a zero-initialized affine head.

    ``h_i = tanh(e_i W1 + b1)``; the head maps the flattened ``[h_1..h_N]`` to
    one joint logit block per root region.
    """

    def __init__(self, rg: RegionGraph, model, config: RennConfig | None = None,
                 maps: RegionMaps | None = None):
        self.config = config = config or RennConfig()
        self.rg = rg
        self.maps = maps or RegionMaps(rg, model)
        n = len(rg.cards)
        rng = np.random.default_rng(config.seed)
        self.tape = T.Tape()
        tp = self.tape
        self.emb = tp.parameter(rng.standard_normal((n, config.d_e)), "embedding")
        self.W1 = tp.parameter(rng.standard_normal((config.d_e, config.d_h)) / np.sqrt(config.d_e), "W1")
        self.b1 = tp.parameter(np.zeros((1, config.d_h)), "b1")
        self.W2 = tp.parameter(np.zeros((n * config.d_h, self.maps.n_root)), "W2")
        self.b2 = tp.parameter(np.zeros((1, self.maps.n_root)), "b2")
        self._build_forward()

    @property
    def params(self):
        return self.tape.params

    def _build_forward(self):
        m = self.maps
        hidden = T.tanh(T.add(T.matmul(self.emb, self.W1), self.b1))
        flat = T.reshape(hidden, (1, -1))
        logits = T.reshape(T.add(T.matmul(flat, self.W2), self.b2), (-1,))
        # softmax per root, batched over roots of equal size
        groups: dict[int, list[int]] = {}
        for j, k in enumerate(m.roots):
            groups.setdefault(m.sizes[k], []).append(j)
        parts, order = [], []
        for size, js in sorted(groups.items()):
            idx = np.concatenate([np.arange(m.root_offset[j], m.root_offset[j + 1]) for j in js])
            block = T.reshape(T.gather(logits, idx), (len(js), size))
            parts.append(T.reshape(T.softmax(block), (-1,)))
            order.append(idx)
        stacked = T.concat(parts) if len(parts) > 1 else parts[0]
        perm = np.empty(m.n_root, dtype=int)
        perm[np.concatenate(order)] = np.arange(m.n_root)
        self.b_root = T.gather(stacked, perm)

    def root_vector(self) -> np.ndarray:
        return self.b_root.data

    def state(self):
        return [p.data.copy() for p in self.params]

    def load(self, state):
        for p, s in zip(self.params, state):
            p.data[...] = s
        self.tape.replay()


def root_beliefs(model: RennModel) -> dict[int, np.ndarray]:
    """Current root-region tables (each a softmax over the joint states)."""
    vec = model.root_vector()
    m = model.maps
    return {k: vec[m.root_offset[j]:m.root_offset[j + 1]].reshape(model.rg.shape(k)).copy()
            for j, k in enumerate(m.roots)}


def descend_beliefs(rg: RegionGraph, roots: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
    """Fill every lower region with the parent-averaged marginal, level by level."""
    from ._tables import marginalize
    out = {k: np.asarray(v, dtype=np.float64) for k, v in roots.items()}
    for k in rg.order:
        if k in out:
            continue
        ps = rg.parents[k]
        if not ps:
            raise ContractViolation(f"region {k} has no parents and no root belief")
        r = rg.regions[k]
        out[k] = sum(marginalize(out[p], rg.regions[p].vars, r.vars) for p in ps) / len(ps)
    return out


def renn_objective(maps: RegionMaps, b_root, lam: float):
    """``(loss, free_energy, penalty)`` tensors for stacked root beliefs ``b_root``.

    ``loss = Σ_R c_R Σ b_R (E_R + log(b_R + 1e-12)) + lam * Σ ||residual||²``.
    ``b_root`` may be a Tensor or a dict of root tables (then a fresh tape is used).
    """
    if not isinstance(b_root, T.Tensor):
        tape = T.Tape()
        b_root = tape.parameter(maps.stack_roots(b_root) if isinstance(b_root, dict)
                                else np.asarray(b_root, dtype=np.float64))
    b_all = T.linear(maps.M, b_root)
    energy = T.tsum(T.mul(maps.c_energy, b_all))
    ent = T.tsum(T.mul(maps.counting, T.mul(b_all, T.log(b_all, _LOG_EPS))))
    F = T.add(energy, ent)
    if maps.D.shape[0]:
        r = T.linear(maps.D, b_root)
        pen = T.tsum(T.mul(r, r))
    else:
        pen = T.scale(T.tsum(b_root), 0.0)
    loss = T.add(F, T.scale(pen, lam)) if lam else T.add(F, T.scale(pen, 0.0))
    return loss, F, pen


def renn_infer(model, rg: RegionGraph, config: RennConfig | None = None,
               maps: RegionMaps | None = None, method: str = "renn") -> InferenceResult:
    """Train the network on one model; return marginals at the best objective seen.

    Stops when the objective's relative change over ``window`` epochs drops
    below ``tol`` or after ``max_epochs``. The reported free energy is the
    region free energy of the returned beliefs, without the penalty.
    """
    t0 = time.perf_counter()
    config = config or RennConfig()
    fg = as_factor_graph(model)
    net = RennModel(rg, fg, config, maps)
    maps = net.maps
    loss, _, pen = renn_objective(maps, net.b_root, config.lam)
    opt = T.Adam(net.params, lr=config.lr)
    history = []
    best = (np.inf, None, 0)
    converged = False
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        try:
            if epoch > 1:
                net.tape.replay()
            value, grads = T.forward_backward(net.tape, loss)
        except NumericFault as exc:
            raise NumericFault(f"epoch {epoch}: {exc}") from exc
        history.append(value)
        if value < best[0]:
            best = (value, net.state(), epoch)
        if len(history) > config.window:
            ref = history[-1 - config.window]
            if abs(value - ref) / max(abs(ref), 1.0) < config.tol:
                converged = True
                break
        opt.step(net.params, grads)
    net.load(best[1])
    roots = root_beliefs(net)
    beliefs = maps.split(np.asarray(maps.M @ net.root_vector()))
    for k in beliefs:
        beliefs[k] = np.clip(beliefs[k], 0.0, None)
        beliefs[k] /= beliefs[k].sum()
    F = region_free_energy(rg, beliefs, fg, energies=maps.energy)
    residual = float(np.sum(np.asarray(maps.D @ net.root_vector()) ** 2))
    info = {"objective": best[0], "penalty": residual, "lambda": config.lam,
            "best_epoch": best[2], "history": history, "roots": roots}
    return result_from_region_beliefs(rg, fg, beliefs, F, method, epoch, converged,
                                      time.perf_counter() - t0, info)


def select_lambda(model, rg: RegionGraph, config: RennConfig | None = None,
                  menu=LAMBDA_MENU, method: str = "renn") -> InferenceResult:
    """Run each λ in ``menu`` and keep the run with the smallest final penalty residual."""
    config = config or RennConfig()
    maps = RegionMaps(rg, model)
    best = None
    for lam in menu:
        res = renn_infer(model, rg, replace(config, lam=float(lam)), maps, method)
        if best is None or res.info["penalty"] < best.info["penalty"]:
            best = res
    return best
