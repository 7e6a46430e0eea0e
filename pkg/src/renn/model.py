"""Pairwise Ising-style MRFs, their factor graphs, and text formats.

Spins are ``-1/+1``; state index 0 is spin -1 and state index 1 is spin +1.
All potentials are stored as log-tables.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractViolation, ModelDomainError, ModelParseError

SPINS = np.array([-1.0, 1.0])


def parse_topology(topology):
    """Normalize ``'grid:R,C'``, ``'complete:N'``, or tuples to a tuple tag."""
    if isinstance(topology, str):
        kind, _, dims = topology.partition(":")
        kind = kind.strip().lower()
        try:
            nums = tuple(int(d) for d in dims.split(",") if d.strip())
        except ValueError:
            raise ContractViolation(f"bad topology dims in {topology!r}") from None
        topology = (kind, *nums)
    kind = topology[0]
    if kind == "grid":
        if len(topology) != 3 or min(topology[1:]) < 1:
            raise ContractViolation(f"grid topology needs two positive dims: {topology}")
    elif kind == "complete":
        if len(topology) != 2 or topology[1] < 1:
            raise ContractViolation(f"complete topology needs one positive size: {topology}")
    elif kind != "custom":
        raise ContractViolation(f"unknown topology {kind!r}")
    return tuple(topology)


def topology_str(topology) -> str:
    kind, *dims = parse_topology(topology)
    if kind == "custom":
        return "custom"
    return f"{kind}:" + ",".join(str(d) for d in dims)


def grid_edges(rows: int, cols: int) -> list[tuple[int, int]]:
    """Row-major grid edges: per row, horizontal edges then vertical ones down."""
    edges = []
    for r in range(rows):
        for c in range(cols - 1):
            edges.append((r * cols + c, r * cols + c + 1))
        if r < rows - 1:
            for c in range(cols):
                edges.append((r * cols + c, (r + 1) * cols + c))
    return edges


def complete_edges(n: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def topology_edges(topology) -> tuple[int, list[tuple[int, int]]]:
    kind, *dims = parse_topology(topology)
    if kind == "grid":
        return dims[0] * dims[1], grid_edges(*dims)
    if kind == "complete":
        return dims[0], complete_edges(dims[0])
    raise ContractViolation("custom topology has no generator")


@dataclass(eq=False)
class PairwiseMRF:
    """Binary pairwise MRF ``p(x) ∝ exp(Σ J_ij s_i s_j + Σ h_i s_i)``."""

    n: int
    h: np.ndarray
    edges: tuple[tuple[int, int, float], ...]
    K: int = 2
    topology: tuple = ("custom",)

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.float64).reshape(-1)
        self.edges = tuple((int(i), int(j), float(J)) for i, j, J in self.edges)
        self.topology = parse_topology(self.topology)
        if self.h.shape != (self.n,):
            raise ContractViolation(f"h has {self.h.size} entries for n={self.n}")
        if self.K != 2:
            raise ContractViolation("PairwiseMRF is spin-valued (K=2)")
        seen = set()
        for i, j, J in self.edges:
            if not (0 <= i < j < self.n):
                raise ContractViolation(f"edge ({i},{j}) must satisfy 0 <= i < j < n")
            if (i, j) in seen:
                raise ContractViolation(f"duplicate edge ({i},{j})")
            if not math.isfinite(J):
                raise ContractViolation(f"non-finite coupling on edge ({i},{j})")
            seen.add((i, j))
        if not np.all(np.isfinite(self.h)):
            raise ContractViolation("non-finite node potential")

    @property
    def edge_list(self) -> list[tuple[int, int]]:
        return [(i, j) for i, j, _ in self.edges]

    @property
    def J(self) -> np.ndarray:
        return np.array([J for _, _, J in self.edges], dtype=np.float64)

    def with_params(self, h, J) -> "PairwiseMRF":
        J = np.asarray(J, dtype=np.float64)
        edges = tuple((i, j, float(v)) for (i, j), v in zip(self.edge_list, J))
        return PairwiseMRF(self.n, np.array(h, dtype=np.float64), edges, topology=self.topology)

    def __eq__(self, other):
        if not isinstance(other, PairwiseMRF):
            return NotImplemented
        return (self.n == other.n and self.K == other.K
                and np.array_equal(self.h, other.h) and self.edges == other.edges)

    def __repr__(self):
        return f"PairwiseMRF(n={self.n}, edges={len(self.edges)}, topology={topology_str(self.topology)})"


@dataclass(eq=False)
class Factor:
    scope: tuple[int, ...]
    log_table: np.ndarray
    unary: bool = False
    label: str | None = None


@dataclass(eq=False)
class FactorGraph:
    """Bipartite variable/factor structure with log-potential tables.

    Factor scopes are kept sorted; tables are transposed to match on entry.
    """

    cards: tuple[int, ...]
    factors: list[Factor]
    var_factors: list[list[int]] = field(init=False)

    def __post_init__(self):
        self.cards = tuple(int(c) for c in self.cards)
        fixed = []
        for a, f in enumerate(self.factors):
            scope = tuple(int(v) for v in f.scope)
            table = np.asarray(f.log_table, dtype=np.float64)
            if len(set(scope)) != len(scope):
                raise ContractViolation(f"factor {a} repeats a variable")
            if any(not (0 <= v < self.n) for v in scope):
                raise ContractViolation(f"factor {a} scope {scope} out of range")
            if table.shape != tuple(self.cards[v] for v in scope):
                raise ContractViolation(
                    f"factor {a} table shape {table.shape} does not match scope {scope}")
            order = np.argsort(scope, kind="stable")
            if list(order) != list(range(len(scope))):
                scope = tuple(scope[k] for k in order)
                table = np.transpose(table, order)
            fixed.append(Factor(scope, np.ascontiguousarray(table), f.unary, f.label))
        self.factors = fixed
        self.var_factors = [[] for _ in range(self.n)]
        for a, f in enumerate(self.factors):
            for v in f.scope:
                self.var_factors[v].append(a)

    @property
    def n(self) -> int:
        return len(self.cards)

    @property
    def num_factors(self) -> int:
        return len(self.factors)

    def pairwise_factor_ids(self) -> list[int]:
        return [a for a, f in enumerate(self.factors) if not f.unary]

    def unary_factor_of(self, i: int) -> list[int]:
        return [a for a in self.var_factors[i] if self.factors[a].unary]

    def edge_index(self) -> dict[tuple[int, int], int]:
        """Map from 2-variable scope to its (first) factor id."""
        out = {}
        for a, f in enumerate(self.factors):
            if len(f.scope) == 2 and f.scope not in out:
                out[f.scope] = a
        return out

    def graph_edges(self) -> list[tuple[int, int]]:
        """Variable-graph edges implied by multi-variable factors."""
        edges = set()
        for f in self.factors:
            for x in range(len(f.scope)):
                for y in range(x + 1, len(f.scope)):
                    edges.add((f.scope[x], f.scope[y]))
        return sorted(edges)


def random_ising(topology, gamma: float, seed: int) -> PairwiseMRF:
    """Draw ``J_ij ~ N(0, 1)`` per edge and ``h_i ~ N(0, gamma^2)`` per node."""
    if gamma < 0:
        raise ContractViolation("gamma must be non-negative")
    topo = parse_topology(topology)
    n, edges = topology_edges(topo)
    rng = np.random.default_rng(seed)
    J = rng.standard_normal(len(edges))
    h = gamma * rng.standard_normal(n)
    return PairwiseMRF(n, h, tuple((i, j, v) for (i, j), v in zip(edges, J)), topology=topo)


def to_factor_graph(mrf: PairwiseMRF) -> FactorGraph:
    """One pairwise factor per edge (in edge order), then one unary factor per node."""
    factors = []
    outer = np.outer(SPINS, SPINS)
    for k, (i, j, J) in enumerate(mrf.edges):
        label = _letters(k)
        factors.append(Factor((i, j), J * outer, label=label))
    for i in range(mrf.n):
        factors.append(Factor((i,), mrf.h[i] * SPINS, unary=True, label=f"u{i}"))
    return FactorGraph((2,) * mrf.n, factors)


def _letters(k: int) -> str:
    s = ""
    k += 1
    while k:
        k, r = divmod(k - 1, 26)
        s = chr(65 + r) + s
    return s


def as_factor_graph(model) -> FactorGraph:
    if isinstance(model, FactorGraph):
        return model
    if isinstance(model, PairwiseMRF):
        return to_factor_graph(model)
    raise ContractViolation(f"expected PairwiseMRF or FactorGraph, got {type(model).__name__}")


def log_score(fg: FactorGraph, x) -> float:
    """Unnormalized log-probability ``Σ_a log ψ_a(x_a)`` of one assignment."""
    x = np.asarray(x, dtype=np.int64)
    if x.shape != (fg.n,):
        raise ContractViolation(f"assignment length {x.size} != n={fg.n}")
    return float(sum(f.log_table[tuple(x[list(f.scope)])] for f in fg.factors))


def log_scores(fg: FactorGraph, X) -> np.ndarray:
    """Vectorized :func:`log_score` over the rows of ``X``."""
    X = np.asarray(X, dtype=np.int64)
    if X.ndim != 2 or X.shape[1] != fg.n:
        raise ContractViolation(f"dataset must have shape (m, {fg.n})")
    out = np.zeros(X.shape[0])
    for f in fg.factors:
        out += f.log_table[tuple(X[:, v] for v in f.scope)]
    return out


def mrf_log_score(mrf: PairwiseMRF, x) -> float:
    s = SPINS[np.asarray(x, dtype=np.int64)]
    val = float(mrf.h @ s)
    for i, j, J in mrf.edges:
        val += J * s[i] * s[j]
    return val


# ---- native text format ------------------------------------------------------

def serialize_model(model) -> str:
    if not isinstance(model, PairwiseMRF):
        raise ContractViolation("only PairwiseMRF has a native serialization (UAI is read-only)")
    lines = [f"# topology {topology_str(model.topology)}", f"ising {model.n}"]
    lines += [f"node {i} {float(v)!r}" for i, v in enumerate(model.h)]
    lines += [f"edge {i} {j} {J!r}" for i, j, J in model.edges]
    return "\n".join(lines) + "\n"


_TOPO_RE = re.compile(r"#\s*topology\s+(\S+)")


def parse_model(text: str):
    """Parse the native ``ising`` format or a UAI ``MARKOV`` file."""
    for raw in text.splitlines():
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        head = stripped.split()[0]
        if head == "ising":
            return _parse_native(text)
        if head.upper() == "MARKOV":
            return _parse_uai(text)
        break
    raise ModelParseError("unrecognized model format (expected 'ising' or 'MARKOV' header)", 1)


def _num(tok, lineno, kind=float):
    try:
        return kind(tok)
    except ValueError:
        raise ModelParseError(f"expected {kind.__name__}, got {tok!r}", lineno) from None


def _parse_native(text: str) -> PairwiseMRF:
    n = None
    h = None
    edges = []
    topology = ("custom",)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        m = _TOPO_RE.match(raw.strip())
        if m and n is None:
            try:
                topology = parse_topology(m.group(1))
            except ContractViolation:
                topology = ("custom",)
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        if toks[0] == "ising":
            if n is not None or len(toks) != 2:
                raise ModelParseError("malformed or repeated 'ising <n>' header", lineno)
            n = _num(toks[1], lineno, int)
            if n < 1:
                raise ModelParseError("variable count must be positive", lineno)
            h = np.zeros(n)
            continue
        if n is None:
            raise ModelParseError("'ising <n>' header must come first", lineno)
        if toks[0] == "node" and len(toks) == 3:
            i = _num(toks[1], lineno, int)
            if not 0 <= i < n:
                raise ModelParseError(f"node index {i} out of range", lineno)
            h[i] = _num(toks[2], lineno)
        elif toks[0] == "edge" and len(toks) == 4:
            i, j = _num(toks[1], lineno, int), _num(toks[2], lineno, int)
            if i > j:
                i, j = j, i
            edges.append((i, j, _num(toks[3], lineno)))
        else:
            raise ModelParseError(f"unrecognized line {line!r}", lineno)
    if n is None:
        raise ModelParseError("missing 'ising <n>' header", 1)
    try:
        return PairwiseMRF(n, h, tuple(edges), topology=topology)
    except ContractViolation as exc:
        raise ModelParseError(str(exc)) from None


def _parse_uai(text: str) -> FactorGraph:
    tokens = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        for tok in raw.split("#", 1)[0].split():
            tokens.append((tok, lineno))
    pos = 0

    def take(kind=int):
        nonlocal pos
        if pos >= len(tokens):
            last = tokens[-1][1] if tokens else 1
            raise ModelParseError("unexpected end of file", last)
        tok, ln = tokens[pos]
        pos += 1
        return _num(tok, ln, kind), ln

    tok, ln = tokens[0]
    pos = 1
    if tok.upper() != "MARKOV":
        raise ModelParseError("expected MARKOV preamble", ln)
    n, _ = take()
    cards = [take()[0] for _ in range(n)]
    num_factors, _ = take()
    scopes = []
    for _ in range(num_factors):
        k, ln = take()
        scope = [take()[0] for _ in range(k)]
        for v in scope:
            if not 0 <= v < n:
                raise ModelParseError(f"scope variable {v} out of range", ln)
        scopes.append(scope)
    factors = []
    for scope in scopes:
        size, ln = take()
        expect = int(np.prod([cards[v] for v in scope])) if scope else 1
        if size != expect:
            raise ModelParseError(f"table has {size} entries, scope needs {expect}", ln)
        vals = []
        for _ in range(size):
            v, ln = take(float)
            if not v > 0:
                raise ModelDomainError(f"line {ln}: non-positive table entry {v} (log undefined)")
            vals.append(v)
        table = np.log(np.array(vals)).reshape([cards[v] for v in scope])
        factors.append(Factor(tuple(scope), table, unary=len(scope) == 1))
    if pos != len(tokens):
        raise ModelParseError("trailing tokens after last table", tokens[pos][1])
    return FactorGraph(tuple(cards), factors)


def read_model(path):
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())


def write_model(model, path, trailer: Iterable[str] = ()):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_model(model))
        for line in trailer:
            fh.write(f"# {line}\n")


# ---- datasets ------------------------------------------------------------------

def states_to_spins(X) -> np.ndarray:
    return SPINS[np.asarray(X, dtype=np.int64)].astype(np.int64)


def spins_to_states(S) -> np.ndarray:
    S = np.asarray(S)
    if not np.all((S == 1) | (S == -1)):
        raise ContractViolation("spin dataset entries must be -1 or 1")
    return ((S + 1) // 2).astype(np.int64)


def write_dataset(X, path):
    """One assignment per line, space-separated spins."""
    S = states_to_spins(X)
    with open(path, "w", encoding="utf-8") as fh:
        for row in S:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def read_dataset(path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                rows.append([int(t) for t in line.split()])
            except ValueError:
                raise ModelParseError("dataset entries must be integers", lineno) from None
    if not rows:
        raise ContractViolation(f"dataset {path} is empty")
    if len({len(r) for r in rows}) != 1:
        raise ModelParseError("dataset rows have differing lengths")
    return spins_to_states(np.array(rows))


def edges_of(model) -> Sequence[tuple[int, int]]:
    if isinstance(model, PairwiseMRF):
        return model.edge_list
    return as_factor_graph(model).graph_edges()
