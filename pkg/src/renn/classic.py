"""Baseline inference: mean field, loopy / damped BP, and the Bethe free energy."""
from __future__ import annotations

from dataclasses import dataclass, field
import time
import warnings

import numpy as np

from ._tables import expand, marginalize, xlogx
from .errors import ContractViolation, NumericFault
from .model import FactorGraph, as_factor_graph

__all__ = ["InferenceResult", "MessageStore", "mean_field", "loopy_bp", "bethe_free_energy"]


@dataclass
class InferenceResult:
    """Marginal beliefs and a free-energy estimate (``-log Ẑ``) from one solver run."""

    unary: np.ndarray                       # n x K
    factor_marginals: list[np.ndarray]      # aligned with the factor graph's factors
    scopes: list[tuple[int, ...]]
    free_energy: float
    iterations: int = 0
    converged: bool = True
    wall_time: float = 0.0
    method: str = ""
    region_beliefs: dict | None = None
    info: dict = field(default_factory=dict)

    @property
    def log_Z(self) -> float:
        return -self.free_energy

    @property
    def pairwise(self) -> dict[tuple[int, int], np.ndarray]:
        return {s: t for s, t in zip(self.scopes, self.factor_marginals) if len(s) == 2}

    def marginal(self, scope) -> np.ndarray:
        scope = tuple(scope)
        if len(scope) == 1:
            return self.unary[scope[0]]
        for s, t in zip(self.scopes, self.factor_marginals):
            if s == scope:
                return t
            if len(s) == 2 and s == scope[::-1]:
                return t.T
        raise KeyError(scope)


def _contract_except(table, scope, beliefs, keep):
    """Sum ``table`` against ``Π_{j != keep} b_j`` over every scope variable but ``keep``."""
    out = table
    for k in range(len(scope) - 1, -1, -1):
        if scope[k] != keep:
            out = np.tensordot(out, beliefs[scope[k]], axes=([k], [0]))
    return out


def _product_table(scope, beliefs):
    out = np.ones(())
    for v in scope:
        out = np.multiply.outer(out, beliefs[v])
    return out


def mean_field(model, max_iters: int = 1000, tol: float = 1e-8) -> InferenceResult:
    """Naive mean field with coordinate updates in ascending variable order."""
    t0 = time.perf_counter()
    fg = as_factor_graph(model)
    b = [np.full(c, 1.0 / c) for c in fg.cards]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        delta = 0.0
        for i in range(fg.n):
            logit = np.zeros(fg.cards[i])
            for a in fg.var_factors[i]:
                f = fg.factors[a]
                logit = logit + _contract_except(f.log_table, f.scope, b, i)
            new = np.exp(logit - logit.max())
            new /= new.sum()
            delta = max(delta, float(np.abs(new - b[i]).max()))
            b[i] = new
        if not all(np.all(np.isfinite(x)) for x in b):
            raise NumericFault(f"mean field produced non-finite beliefs at sweep {it}")
        if delta < tol:
            converged = True
            break
    facs = [_product_table(f.scope, b) for f in fg.factors]
    energy = -sum(float((t * f.log_table).sum()) for t, f in zip(facs, fg.factors))
    entropy = sum(float(xlogx(x).sum()) for x in b)
    return InferenceResult(_pad(b, fg), facs, [f.scope for f in fg.factors], energy + entropy,
                           it, converged, time.perf_counter() - t0, "mf")


def _pad(b, fg):
    K = max(fg.cards) if fg.cards else 2
    out = np.zeros((fg.n, K))
    for i, x in enumerate(b):
        out[i, :len(x)] = x
    return out


class MessageStore:
    """Normalized factor-to-variable messages ``m[a][k]`` for the k-th scope variable of a."""

    def __init__(self, fg: FactorGraph, messages=None):
        self.fg = fg
        if messages is None:
            messages = [[np.full(fg.cards[v], 1.0 / fg.cards[v]) for v in f.scope]
                        for f in fg.factors]
        self.m = messages

    def copy(self) -> "MessageStore":
        return MessageStore(self.fg, [[x.copy() for x in row] for row in self.m])

    def incoming(self, i: int, exclude: int | None = None) -> np.ndarray:
        """``Π_{b ∈ ne_i \\ exclude} m_{b→i}`` (unnormalized)."""
        out = np.ones(self.fg.cards[i])
        for a in self.fg.var_factors[i]:
            if a != exclude:
                out = out * self.m[a][self.fg.factors[a].scope.index(i)]
        return out

    def max_change(self, other: "MessageStore") -> float:
        return max((float(np.abs(x - y).max()) for r, s in zip(self.m, other.m)
                    for x, y in zip(r, s)), default=0.0)


def _bp_sweep(fg, store, damping, psi):
    new = []
    for a, f in enumerate(fg.factors):
        q = {v: store.incoming(v, exclude=a) for v in f.scope}
        q = {v: x / x.sum() for v, x in q.items()}
        row = []
        for k, v in enumerate(f.scope):
            msg = _contract_except(psi[a], f.scope, q, v)
            msg = msg / msg.sum()
            msg = (1.0 - damping) * msg + damping * store.m[a][k]
            row.append(msg / msg.sum())
        new.append(row)
    return MessageStore(fg, new)


def loopy_bp(model, max_iters: int = 1000, tol: float = 1e-8, damping: float = 0.0,
             init: MessageStore | None = None) -> InferenceResult:
    """Synchronous sum-product BP with probability-domain damping.

    Each new message is ``(1 - damping) * update + damping * old``.
    """
    if not 0.0 <= damping < 1.0:
        raise ContractViolation("damping must lie in [0, 1)")
    t0 = time.perf_counter()
    fg = as_factor_graph(model)
    # potentials rescaled per factor; constants cancel in normalized messages
    psi = [np.exp(f.log_table - f.log_table.max()) for f in fg.factors]
    store = init.copy() if init is not None else MessageStore(fg)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        new = _bp_sweep(fg, store, damping, psi)
        if any(not np.all(np.isfinite(x)) for row in new.m for x in row):
            raise NumericFault(f"loopy BP produced non-finite messages at iteration {it}")
        delta = new.max_change(store)
        store = new
        if delta < tol:
            converged = True
            break
    unary = []
    for i in range(fg.n):
        x = store.incoming(i)
        unary.append(x / x.sum())
    facs = []
    for a, f in enumerate(fg.factors):
        t = psi[a]
        for k, v in enumerate(f.scope):
            q = store.incoming(v, exclude=a)
            t = t * expand(q / q.sum(), (v,), f.scope)
        facs.append(t / t.sum())
    F, consistent = _bethe(fg, unary, facs)
    method = "dbp" if damping > 0 else "lbp"
    return InferenceResult(_pad(unary, fg), facs, [f.scope for f in fg.factors], F, it,
                           converged, time.perf_counter() - t0, method,
                           info={"messages": store, "consistent": consistent})


def _bethe(fg, unary, facs, tol=1e-6):
    total = 0.0
    consistent = True
    for a, f in enumerate(fg.factors):
        b = facs[a]
        total += float(xlogx(b).sum() - (b * f.log_table).sum())
        for v in f.scope:
            if np.abs(marginalize(b, f.scope, (v,)) - unary[v][:fg.cards[v]]).max() > tol:
                consistent = False
    for i in range(fg.n):
        d = len(fg.var_factors[i])
        total -= (d - 1) * float(xlogx(unary[i][:fg.cards[i]]).sum())
    return total, consistent


def bethe_free_energy(model, unary, factor_beliefs, tol: float = 1e-6) -> float:
    """``Σ_a Σ b_a ln(b_a/ψ_a) - Σ_i (d_i - 1) Σ b_i ln b_i`` with ``0 ln 0 = 0``.

    Beliefs are checked for normalization; local inconsistency beyond ``tol``
    only emits a ``RuntimeWarning``.
    """
    fg = as_factor_graph(model)
    facs = [np.asarray(t, dtype=np.float64) for t in factor_beliefs]
    if len(facs) != fg.num_factors:
        raise ContractViolation("need one belief table per factor")
    unary = [np.asarray(u, dtype=np.float64) for u in unary]
    for t in list(facs) + [u[:c] for u, c in zip(unary, fg.cards)]:
        if abs(t.sum() - 1.0) > tol or np.any(t < 0):
            raise ContractViolation("beliefs must be normalized")
    F, consistent = _bethe(fg, unary, facs, tol)
    if not consistent:
        warnings.warn("beliefs are not locally consistent; Bethe value is not a free energy "
                      "of any consistent belief set", RuntimeWarning, stacklevel=2)
    return F


def result_from_region_beliefs(rg, model, beliefs, free_energy, method, iterations=0,
                               converged=True, wall_time=0.0, info=None) -> InferenceResult:
    """Package region beliefs as unary and per-factor marginals."""
    from .regiongraph import extract_marginals
    fg = as_factor_graph(model)
    unary = extract_marginals(rg, beliefs, [(i,) for i in range(fg.n)])
    facs = extract_marginals(rg, beliefs, [f.scope for f in fg.factors])
    return InferenceResult(_pad(unary, fg), facs, [f.scope for f in fg.factors], free_energy,
                           iterations, converged, wall_time, method, dict(beliefs), info or {})
