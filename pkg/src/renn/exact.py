"""Brute-force ground truth: partition function, marginals, sampling, NLL.

Enumeration is split into a prefix of leading variables (one chunk per prefix
state) and a block of trailing "inner" variables enumerated as a whole. Factors
living entirely in the inner block are scored once; only factors touching the
prefix are re-scored per chunk. The log-sum-exp is streamed with a running
maximum so accumulators never overflow.
"""
from __future__ import annotations

from dataclasses import dataclass
import itertools
import math

import numpy as np

from .errors import CapacityError, ContractViolation
from .model import FactorGraph, as_factor_graph, log_scores

MAX_STATES = 2 ** 25
_INNER_STATES = 2 ** 20


@dataclass
class ExactResult:
    log_Z: float
    unary: np.ndarray                      # n x K (ragged cards padded with 0)
    factor_marginals: list[np.ndarray]     # one table per factor, in factor order
    scopes: list[tuple[int, ...]]

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


class _Enumerator:
    def __init__(self, fg: FactorGraph, max_states=MAX_STATES):
        total = math.prod(fg.cards)
        if total > max_states:
            raise CapacityError(f"{total} joint states exceed the budget of {max_states}")
        self.fg = fg
        n = fg.n
        # choose the longest suffix that fits the inner budget
        p = n
        size = 1
        while p > 0 and size * fg.cards[p - 1] <= _INNER_STATES:
            p -= 1
            size *= fg.cards[p]
        self.p = p
        self.inner_cards = fg.cards[p:]
        self.inner_size = size
        if n - p:
            grids = np.indices(self.inner_cards, dtype=np.int32).reshape(n - p, -1)
            self.digits = grids.T                       # inner_size x (n - p)
        else:
            self.digits = np.zeros((1, 0), dtype=np.int32)
        self.inner_score = np.zeros(size)
        self.inner_f, self.prefix_f, self.mixed_f = [], [], []
        for a, f in enumerate(fg.factors):
            inner_axes = [k for k, v in enumerate(f.scope) if v >= p]
            if len(inner_axes) == len(f.scope):
                idx = self._inner_index(f.scope, f.log_table.shape)
                self.inner_score += f.log_table.reshape(-1)[idx]
                self.inner_f.append((a, idx))
            elif not inner_axes:
                self.prefix_f.append(a)
            else:
                k0 = inner_axes[0]
                sub_scope = f.scope[k0:]
                idx = self._inner_index(sub_scope, f.log_table.shape[k0:])
                self.mixed_f.append((a, k0, idx))

    def _inner_index(self, scope, shape):
        if not scope:
            return np.zeros(self.inner_size, dtype=np.int64)
        cols = [self.digits[:, v - self.p] for v in scope]
        return np.ravel_multi_index(cols, shape).astype(np.int64)

    def prefixes(self):
        return itertools.product(*[range(c) for c in self.fg.cards[:self.p]])

    def chunk_scores(self, prefix):
        fs = self.fg.factors
        s = self.inner_score.copy()
        const = 0.0
        for a in self.prefix_f:
            f = fs[a]
            const += f.log_table[tuple(prefix[v] for v in f.scope)]
        for a, k0, idx in self.mixed_f:
            f = fs[a]
            sub = f.log_table[tuple(prefix[v] for v in f.scope[:k0])]
            s += sub.reshape(-1)[idx]
        if const:
            s += const
        return s


def exact_inference(model, max_states=MAX_STATES) -> ExactResult:
    fg = as_factor_graph(model)
    en = _Enumerator(fg, max_states)
    fs = fg.factors
    K = max(fg.cards)
    unary = np.zeros((fg.n, K))
    facs = [np.zeros(f.log_table.shape) for f in fs]
    W_inner = np.zeros(en.inner_size)
    Zsum = 0.0
    M = -np.inf
    for prefix in en.prefixes():
        s = en.chunk_scores(prefix)
        cmax = float(s.max())
        if cmax > M:
            if M > -np.inf:
                r = math.exp(M - cmax)
                W_inner *= r
                unary[:en.p] *= r
                Zsum *= r
                for a in en.prefix_f:
                    facs[a] *= r
                for a, _, _ in en.mixed_f:
                    facs[a] *= r
            M = cmax
        w = np.exp(s - M)
        wsum = float(w.sum())
        Zsum += wsum
        W_inner += w
        for v in range(en.p):
            unary[v, prefix[v]] += wsum
        for a in en.prefix_f:
            facs[a][tuple(prefix[v] for v in fs[a].scope)] += wsum
        for a, k0, idx in en.mixed_f:
            f = fs[a]
            sub_shape = f.log_table.shape[k0:]
            acc = np.bincount(idx, weights=w, minlength=int(np.prod(sub_shape)))
            facs[a][tuple(prefix[v] for v in f.scope[:k0])] += acc.reshape(sub_shape)
    for a, idx in en.inner_f:
        size = fs[a].log_table.size
        facs[a] += np.bincount(idx, weights=W_inner, minlength=size).reshape(fs[a].log_table.shape)
    for v in range(en.p, fg.n):
        col = en.digits[:, v - en.p]
        unary[v, :fg.cards[v]] = np.bincount(col, weights=W_inner, minlength=fg.cards[v])
    log_Z = M + math.log(Zsum)
    return ExactResult(log_Z, unary / Zsum, [t / Zsum for t in facs], [f.scope for f in fs])


def exact_sample(model, count: int, seed, max_states=MAX_STATES) -> np.ndarray:
    """``count`` i.i.d. exact draws as a ``count x n`` array of state indices."""
    fg = as_factor_graph(model)
    en = _Enumerator(fg, max_states)
    rng = np.random.default_rng(seed)
    prefixes = list(en.prefixes())
    chunk_lse = np.empty(len(prefixes))
    for k, prefix in enumerate(prefixes):
        s = en.chunk_scores(prefix)
        m = s.max()
        chunk_lse[k] = m + math.log(np.exp(s - m).sum())
    pc = np.exp(chunk_lse - chunk_lse.max())
    pc /= pc.sum()
    which = rng.choice(len(prefixes), size=count, p=pc)
    out = np.empty((count, fg.n), dtype=np.int64)
    for k in np.unique(which):
        rows = np.flatnonzero(which == k)
        s = en.chunk_scores(prefixes[k])
        w = np.exp(s - s.max())
        picks = rng.choice(en.inner_size, size=rows.size, p=w / w.sum())
        out[rows, :en.p] = prefixes[k]
        out[rows, en.p:] = en.digits[picks]
    return out


def gibbs_sample(model, count: int, burn_in: int = 1000, thin: int = 1, seed=0) -> np.ndarray:
    """Single-site Gibbs chain with a systematic ascending sweep.

    One sample is recorded every ``thin`` sweeps after ``burn_in`` sweeps.
    """
    fg = as_factor_graph(model)
    if thin < 1 or burn_in < 0 or count < 0:
        raise ContractViolation("need thin >= 1, burn_in >= 0, count >= 0")
    rng = np.random.default_rng(seed)
    n = fg.n
    # per variable: list of (table as nested lists/ndarray, axis of i, other vars)
    plan = []
    for i in range(n):
        terms = []
        for a in fg.var_factors[i]:
            f = fg.factors[a]
            axis = f.scope.index(i)
            others = [v for v in f.scope if v != i]
            table = np.moveaxis(f.log_table, axis, -1)
            terms.append((table.tolist() if table.ndim <= 2 else table, others))
        plan.append(terms)
    x = [int(v) for v in rng.integers(0, fg.cards, size=n)]
    sweeps = burn_in + count * thin
    out = np.empty((count, n), dtype=np.int64)
    kept = 0
    exp = math.exp
    for sweep in range(sweeps):
        u = rng.random(n)
        for i in range(n):
            logits = [0.0] * fg.cards[i]
            for table, others in plan[i]:
                if not others:
                    row = table
                elif len(others) == 1:
                    row = table[x[others[0]]]
                else:
                    row = table[tuple(x[v] for v in others)].tolist()
                for k in range(len(logits)):
                    logits[k] += row[k]
            m = max(logits)
            ws = [exp(l - m) for l in logits]
            r = u[i] * sum(ws)
            acc = 0.0
            choice = len(ws) - 1
            for k, wk in enumerate(ws):
                acc += wk
                if r < acc:
                    choice = k
                    break
            x[i] = choice
        if sweep >= burn_in and (sweep - burn_in) % thin == thin - 1:
            out[kept] = x
            kept += 1
    return out


def nll_exact(model, dataset, log_Z: float | None = None) -> float:
    """Mean of ``log Z - log_score(x)`` over the dataset."""
    fg = as_factor_graph(model)
    X = np.asarray(dataset)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ContractViolation("dataset must be a non-empty 2-D array of assignments")
    if log_Z is None:
        log_Z = exact_inference(fg).log_Z
    return float(log_Z - log_scores(fg, X).mean())


def exact_marginals(model, scopes, max_states=MAX_STATES) -> list[np.ndarray]:
    """Exact marginal tables over arbitrary variable scopes (each sorted on return).

    Enumerates the joint in the same chunks as :func:`exact_inference`, so
    memory stays bounded by the inner chunk size.
    """
    fg = as_factor_graph(model)
    en = _Enumerator(fg, max_states)
    plans = []
    for scope in scopes:
        scope = tuple(sorted(int(v) for v in scope))
        if len(set(scope)) != len(scope) or any(not 0 <= v < fg.n for v in scope):
            raise ContractViolation(f"bad marginal scope {scope}")
        k0 = sum(v < en.p for v in scope)
        shape = tuple(fg.cards[v] for v in scope)
        plans.append((scope, k0, en._inner_index(scope[k0:], shape[k0:]), shape))
    tables = [np.zeros(shape) for *_, shape in plans]
    M = -np.inf
    Zsum = 0.0
    for prefix in en.prefixes():
        s = en.chunk_scores(prefix)
        cmax = float(s.max())
        if cmax > M:
            if M > -np.inf:
                r = math.exp(M - cmax)
                Zsum *= r
                for t in tables:
                    t *= r
            M = cmax
        w = np.exp(s - M)
        Zsum += float(w.sum())
        for t, (scope, k0, idx, shape) in zip(tables, plans):
            acc = np.bincount(idx, weights=w, minlength=int(np.prod(shape[k0:])))
            t[tuple(prefix[v] for v in scope[:k0])] += acc.reshape(shape[k0:])
    return [t / Zsum for t in tables]
