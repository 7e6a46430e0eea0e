"""Parent-to-child generalized belief propagation on a region graph.

Messages are stored as log-tables over the child scope and normalized in the
probability domain after every update.
"""
from __future__ import annotations

from dataclasses import dataclass
import time
import warnings

import numpy as np

from ._tables import expand, log_marginalize
from .classic import InferenceResult, result_from_region_beliefs
from .errors import NumericFault
from .model import as_factor_graph
from .regiongraph import RegionGraph, region_energy_table, region_free_energy

__all__ = ["RegionMessageStore", "build_message_sets", "gbp_run"]

_FLOOR = 1e-12


@dataclass
class RegionMessageStore:
    """One message per region-graph edge plus the message sets used to update it.

    ``N[e]`` holds the edges whose messages enter the numerator of edge ``e``
    and ``H[e]`` those in its denominator (the edge itself excluded).
    """

    edges: list[tuple[int, int]]
    N: list[list[int]]
    H: list[list[int]]
    log_m: list[np.ndarray]

    def index(self, parent: int, child: int) -> int:
        return self.edges.index((parent, child))

    def message(self, parent: int, child: int) -> np.ndarray:
        return np.exp(self.log_m[self.index(parent, child)])


def build_message_sets(rg: RegionGraph) -> RegionMessageStore:
    edges = list(rg.edges)
    N, H = [], []
    for P, R in edges:
        dP, dR = rg.descendants_hat(P), rg.descendants_hat(R)
        N.append([k for k, (I, J) in enumerate(edges) if J in dP - dR and I not in dP])
        H.append([k for k, (I, J) in enumerate(edges)
                  if J in dR and I in dP - dR and (I, J) != (P, R)])
    log_m = [np.full(rg.shape(R), -np.log(np.prod(rg.shape(R)))) for _, R in edges]
    return RegionMessageStore(edges, N, H, log_m)


def _normalize_log(t):
    t = t - t.max()
    return t - np.log(np.exp(t).sum())


def gbp_run(rg: RegionGraph, model, max_iters: int = 1000, tol: float = 1e-8,
            damping: float = 0.2) -> InferenceResult:
    """Sequential parent-to-child GBP; returns region beliefs and the region free energy.

    Edges are swept in (parent level, parent id, child id) order, each update
    using the latest messages. Stops when no message entry moves by ``tol``.
    """
    t0 = time.perf_counter()
    fg = as_factor_graph(model)
    store = build_message_sets(rg)
    regs = rg.regions
    energy = {r.id: region_energy_table(rg, r.id, fg) for r in regs}
    order = sorted(range(len(store.edges)),
                   key=lambda k: (regs[store.edges[k][0]].level,) + store.edges[k])
    # log Π_{a in A_P \ A_R} ψ_a over the parent scope
    local = [expand(energy[R], regs[R].vars, regs[P].vars) - energy[P] for P, R in store.edges]
    clamped = False
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        delta = 0.0
        for k in order:
            P, R = store.edges[k]
            sP, sR = regs[P].vars, regs[R].vars
            t = local[k]
            for e in store.N[k]:
                J = store.edges[e][1]
                t = t + expand(store.log_m[e], regs[J].vars, sP)
            t = log_marginalize(t, sP, sR)
            for e in store.H[k]:
                J = store.edges[e][1]
                t = t - expand(store.log_m[e], regs[J].vars, sR)
            new = np.exp(_normalize_log(t))
            old = np.exp(store.log_m[k])
            new = (1.0 - damping) * new + damping * old
            new /= new.sum()
            if not np.all(np.isfinite(new)):
                raise NumericFault(f"GBP message {P}->{R} became non-finite at sweep {it}")
            if new.min() < _FLOOR:
                new = np.maximum(new, _FLOOR)
                new /= new.sum()
                clamped = True
            delta = max(delta, float(np.abs(new - old).max()))
            store.log_m[k] = np.log(new)
        if delta < tol:
            converged = True
            break
    if clamped:
        warnings.warn("GBP message entries were clamped at 1e-12", RuntimeWarning, stacklevel=2)
    beliefs = region_beliefs(rg, store, energy)
    F = region_free_energy(rg, beliefs, fg, energies=energy)
    return result_from_region_beliefs(rg, fg, beliefs, F, "gbp", it, converged,
                                      time.perf_counter() - t0, {"messages": store})


def region_beliefs(rg: RegionGraph, store: RegionMessageStore, energy) -> dict[int, np.ndarray]:
    """``b_R ∝ ψ_{A_R} Π`` of every message from outside D̂(R) into D̂(R)."""
    out = {}
    for r in rg.regions:
        dR = rg.descendants_hat(r.id)
        t = -energy[r.id]
        for k, (I, J) in enumerate(store.edges):
            if J in dR and I not in dR:
                t = t + expand(store.log_m[k], rg.regions[J].vars, r.vars)
        out[r.id] = np.exp(_normalize_log(t))
    return out
