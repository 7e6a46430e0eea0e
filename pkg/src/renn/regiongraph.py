"""Region graphs: root-region selection, cluster variation, counting numbers,
validity checks, and the region-based free energy.

A region is a pair (variable set, factor set). Pairwise factors enter a region
explicitly (a cycle root carries exactly its cycle edges); a unary factor is
attached to every region that contains its variable, except in the Bethe
construction where each factor is its own region.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
import itertools
from typing import Mapping, Sequence
import warnings

import networkx as nx
import numpy as np

from ._tables import expand, marginalize, xlogx
from .errors import ContractViolation
from .model import FactorGraph, as_factor_graph, grid_edges

__all__ = [
    "Region", "RegionGraph", "BeliefTable", "RootSelection", "ValidityReport",
    "faces_planar_grid", "star_cycle_basis_complete", "root_regions_general",
    "cluster_variation", "bethe_region_graph", "counting_numbers",
    "check_validity", "region_energy", "region_energy_table",
    "region_free_energy", "build_region_graph", "dump_region_graph",
    "extract_marginals", "marginals_from_joint",
]


@dataclass
class Region:
    id: int
    vars: tuple[int, ...]
    factors: tuple[int, ...]
    level: int
    counting: int = 0

    @property
    def scope(self) -> tuple[int, ...]:
        return self.vars


@dataclass
class BeliefTable:
    scope: tuple[int, ...]
    table: np.ndarray

    def __post_init__(self):
        self.scope = tuple(self.scope)
        self.table = np.asarray(self.table, dtype=np.float64)
        if list(self.scope) != sorted(self.scope):
            raise ContractViolation("belief scope must be sorted")
        if self.table.ndim != len(self.scope):
            raise ContractViolation("belief table rank does not match scope")
        if np.any(self.table < 0) or abs(self.table.sum() - 1.0) > 1e-9:
            raise ContractViolation("belief table must be non-negative and sum to 1")


class RegionGraph:
    """A DAG of regions; edges point from a region to a strict sub-region."""

    def __init__(self, regions: Sequence[Region], edges: Sequence[tuple[int, int]],
                 cards: Sequence[int]):
        self.regions = list(regions)
        self.edges = sorted(set((int(p), int(c)) for p, c in edges))
        self.cards = tuple(cards)
        for k, r in enumerate(self.regions):
            if r.id != k:
                raise ContractViolation("region ids must be 0..len-1 in order")
        self.parents: list[list[int]] = [[] for _ in self.regions]
        self.children: list[list[int]] = [[] for _ in self.regions]
        for p, c in self.edges:
            rp, rc = self.regions[p], self.regions[c]
            if not (set(rc.vars) <= set(rp.vars) and set(rc.factors) <= set(rp.factors)
                    and (rc.vars, rc.factors) != (rp.vars, rp.factors)):
                raise ContractViolation(f"edge {p}->{c} is not parent-to-strict-subregion")
            if rc.level <= rp.level:
                raise ContractViolation(f"edge {p}->{c} does not descend in level")
            self.parents[c].append(p)
            self.children[p].append(c)
        self.order = sorted(range(len(self.regions)), key=lambda k: (self.regions[k].level, k))
        self.ancestors: list[frozenset[int]] = [frozenset()] * len(self.regions)
        for k in self.order:
            anc = set(self.parents[k])
            for p in self.parents[k]:
                anc |= self.ancestors[p]
            self.ancestors[k] = frozenset(anc)
        self.descendants: list[frozenset[int]] = [frozenset()] * len(self.regions)
        for k in reversed(self.order):
            desc = set(self.children[k])
            for c in self.children[k]:
                desc |= self.descendants[c]
            self.descendants[k] = frozenset(desc)

    def __len__(self):
        return len(self.regions)

    @property
    def num_levels(self) -> int:
        return 1 + max(r.level for r in self.regions)

    @property
    def levels(self) -> list[list[int]]:
        out = [[] for _ in range(self.num_levels)]
        for r in self.regions:
            out[r.level].append(r.id)
        return out

    @property
    def roots(self) -> list[int]:
        return [r.id for r in self.regions if not self.parents[r.id]]

    def descendants_hat(self, k: int) -> frozenset[int]:
        return self.descendants[k] | {k}

    def shape(self, k: int) -> tuple[int, ...]:
        return tuple(self.cards[v] for v in self.regions[k].vars)

    def find(self, vars, factors=None) -> int:
        vars = tuple(sorted(vars))
        for r in self.regions:
            if r.vars == vars and (factors is None or set(r.factors) == set(factors)):
                return r.id
        raise KeyError(vars)


# ---- root-region selection -----------------------------------------------------

def faces_planar_grid(rows: int, cols: int, include_infinite_face=False) -> list[tuple[int, ...]]:
    """Unit 4-cycles of a row-major grid, optionally plus the perimeter cycle."""
    if rows < 2 or cols < 2:
        raise ContractViolation("grid faces need rows, cols >= 2")
    faces = []
    for r in range(rows - 1):
        for c in range(cols - 1):
            v = r * cols + c
            faces.append((v, v + 1, v + cols + 1, v + cols))
    if include_infinite_face and (rows, cols) != (2, 2):
        top = [c for c in range(cols)]
        right = [r * cols + cols - 1 for r in range(1, rows)]
        bottom = [(rows - 1) * cols + c for c in range(cols - 2, -1, -1)]
        left = [r * cols for r in range(rows - 2, 0, -1)]
        faces.append(tuple(top + right + bottom + left))
    return faces


def star_cycle_basis_complete(n: int, root: int = 0, edges=None) -> list[tuple[int, int, int]]:
    """Triangles ``(root, j, k)`` closing each off-star edge of a complete graph."""
    if n < 3:
        raise ContractViolation("complete-graph star basis needs n >= 3")
    if not 0 <= root < n:
        raise ContractViolation(f"root {root} out of range")
    if edges is not None:
        have = {tuple(sorted(e[:2])) for e in edges}
        if len(have) != n * (n - 1) // 2 or any((i, j) not in have
                                                 for i in range(n) for j in range(i + 1, n)):
            raise ContractViolation("graph is not complete")
    others = [v for v in range(n) if v != root]
    return [(root, j, k) for j, k in itertools.combinations(others, 2)]


@dataclass
class RootSelection:
    cycles: list[tuple[int, ...]]
    fallback: bool = False        # some edges could not be placed on a cycle
    seed: str = ""

    def __iter__(self):
        return iter(self.cycles)

    def __len__(self):
        return len(self.cycles)


def _adjacency(n, edges):
    adj = [set() for _ in range(n)]
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    return [sorted(a) for a in adj]


def _bfs_path(adj, src, is_target, can_expand, edge_ok):
    """Shortest path (lowest-index neighbour first) from src to a target node."""
    prev = {src: None}
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if w in prev or not edge_ok(u, w):
                continue
            prev[w] = u
            if is_target(w):
                path = [w]
                while prev[path[-1]] is not None:
                    path.append(prev[path[-1]])
                return path[::-1]
            if can_expand(w):
                queue.append(w)
    return None


def _detect_grid(nodes, edge_set):
    n = len(nodes)
    if nodes != list(range(n)):
        return None
    for rows in range(2, n // 2 + 1):
        if n % rows:
            continue
        cols = n // rows
        if cols < 2:
            continue
        if all(e in edge_set for e in grid_edges(rows, cols)):
            return rows, cols
    return None


def _shortest_cycle(adj, edges):
    best = None
    for i, j in edges:
        path = _bfs_path(adj, i, lambda w: w == j, lambda w: True,
                         lambda u, w: {u, w} != {i, j})
        if path is not None and (best is None or len(path) < len(best)):
            best = path
    return tuple(best) if best else None


def _seed_cycles(nodes, edges, adj):
    """Tree-robust basis of a planar or complete subgraph of one component."""
    k = len(nodes)
    edge_set = set(edges)
    if k >= 3 and len(edges) == k * (k - 1) // 2:
        r = nodes[0]
        return [(r, a, b) for a, b in itertools.combinations(nodes[1:], 2)], "complete"
    grid = _detect_grid(nodes, edge_set)
    if grid is not None:
        return faces_planar_grid(*grid), f"grid:{grid[0]},{grid[1]}"
    g = nx.Graph()
    g.add_edges_from(edges)
    cliques = sorted((tuple(sorted(c)) for c in nx.find_cliques(g)), key=lambda c: (-len(c), c))
    if cliques and len(cliques[0]) >= 3:
        c = cliques[0]
        return [(c[0], a, b) for a, b in itertools.combinations(c[1:], 2)], f"clique:{len(c)}"
    cyc = _shortest_cycle(adj, edges)
    if cyc is not None:
        return [cyc], "cycle"
    return [], "tree"


def root_regions_general(n: int, edges) -> RootSelection:
    """Root cycles for a general pairwise graph (greedy cycle closing).

    Each connected component is seeded with the tree-robust basis of a planar
    (grid or single cycle) or complete (largest clique) subgraph. Then, while
    an unused edge leaves a visited node, the shortest cycle through it that
    returns to the visited part via used edges is added. Edges that lie on no
    cycle become 2-variable roots and set ``fallback``.
    """
    edges = sorted({tuple(sorted(e[:2])) for e in edges})
    adj = _adjacency(n, edges)
    g = nx.Graph()
    g.add_nodes_from(range(n))
    g.add_edges_from(edges)
    cycles: list[tuple[int, ...]] = []
    fallback = False
    seeds = []
    for comp in sorted((sorted(c) for c in nx.connected_components(g)), key=lambda c: c[0]):
        if len(comp) == 1:
            cycles.append((comp[0],))
            continue
        comp_edges = [e for e in edges if e[0] in comp]
        seed, kind = _seed_cycles(comp, comp_edges, adj)
        seeds.append(kind)
        visited, used = set(), set()
        if not seed:
            # no cycle anywhere: spanning-tree fallback
            for e in comp_edges:
                cycles.append(e)
            fallback = True
            continue
        for cyc in seed:
            cycles.append(tuple(cyc))
            visited.update(cyc)
            used.update(_cycle_edges(cyc))
        while True:
            cand = None
            for s, t in comp_edges:
                if (s, t) in used:
                    continue
                if s in visited:
                    cand = (s, t)
                    break
                if t in visited:
                    cand = (t, s)
                    break
            if cand is None:
                break
            s, t = cand
            used_ok = lambda u, w: (min(u, w), max(u, w)) in used
            if t in visited:
                path2 = _bfs_path(adj, s, lambda w: w == t, lambda w: True, used_ok)
                cyc = tuple(path2)           # s ... t, closed by edge (t, s)
            else:
                def unused_ok(u, w, s=s, t=t):
                    return (min(u, w), max(u, w)) not in used and {u, w} != {s, t}
                path1 = _bfs_path(adj, t, lambda w: w in visited,
                                  lambda w: w not in visited, unused_ok)
                if path1 is None:
                    # bridge into an acyclic part: keep the edge as its own root
                    cycles.append((s, t))
                    used.add((min(s, t), max(s, t)))
                    visited.add(t)
                    fallback = True
                    continue
                u = path1[-1]
                if u == s:
                    cyc = tuple([s] + path1[:-1])
                else:
                    path2 = _bfs_path(adj, s, lambda w: w == u, lambda w: True, used_ok)
                    cyc = tuple([s] + path1 + path2[::-1][1:-1])
            cycles.append(cyc)
            visited.update(cyc)
            used.update(_cycle_edges(cyc))
    if fallback:
        warnings.warn("some edges lie on no cycle; using 2-variable fallback roots",
                      RuntimeWarning, stacklevel=2)
    return RootSelection(cycles, fallback, ",".join(seeds))


def _cycle_edges(cyc):
    if len(cyc) == 1:
        return []
    if len(cyc) == 2:
        return [tuple(sorted(cyc))]
    return [tuple(sorted((cyc[k], cyc[(k + 1) % len(cyc)]))) for k in range(len(cyc))]


# ---- cluster variation ---------------------------------------------------------------

def _root_key(fg: FactorGraph, root, edge_ix):
    if isinstance(root, (set, frozenset)):
        vs = frozenset(int(v) for v in root)
        pair = frozenset(a for a, f in enumerate(fg.factors)
                         if not f.unary and set(f.scope) <= vs)
        return vs, pair
    seq = [int(v) for v in root]
    pair = set()
    for e in _cycle_edges(seq):
        if e not in edge_ix:
            raise ContractViolation(f"root cycle {tuple(seq)} uses non-edge {e}")
        pair.add(edge_ix[e])
    return frozenset(seq), frozenset(pair)


def _atoms(fg, x, y):
    vs = x[0] & y[0]
    ps = x[1] & y[1]
    out = set()
    covered = set()
    for a in ps:
        sc = fg.factors[a].scope
        out.add((frozenset(sc), frozenset([a])))
        covered.update(sc)
    for v in vs - covered:
        out.add((frozenset([v]), frozenset()))
    return out


def _lt(x, y):
    return x[0] <= y[0] and x[1] <= y[1] and x != y


def _sort_key(k):
    return (-len(k[0]), tuple(sorted(k[0])), tuple(sorted(k[1])))


def cluster_variation(model, roots) -> RegionGraph:
    """Region graph from root regions by repeated pairwise intersection.

    ``roots`` holds cycles (ordered sequences; the region gets exactly the
    cycle's edge factors) or ``set``/``frozenset`` variable sets (the region
    gets every pairwise factor inside). Level ``l`` is the set of pairwise
    intersections of level ``l-1`` regions, split into single-factor and
    single-variable pieces, minus anything contained in another candidate.
    Edges join each region to its supersets one level up.

    If some variable or factor ends up without a unique smallest containing
    region, that node's own region is added below; superset regions that are
    not yet ancestors receive a direct edge. Neither step fires for grid faces
    or complete-graph star bases.
    """
    fg = as_factor_graph(model)
    edge_ix = fg.edge_index()
    keys = []
    for r in roots:
        k = _root_key(fg, r, edge_ix)
        if k not in keys:
            keys.append(k)
    covered = set().union(*[k[0] for k in keys]) if keys else set()
    for v in range(fg.n):
        if v not in covered:
            raise ContractViolation(f"variable {v} is not covered by any root region")
    for x, y in itertools.permutations(keys, 2):
        if _lt(x, y):
            raise ContractViolation(
                f"root {sorted(x[0])} is a sub-region of root {sorted(y[0])}")
    levels = [sorted(keys, key=_sort_key)]
    existing = set(keys)
    while True:
        prev = levels[-1]
        cands = set()
        for j in range(len(prev)):
            for k in range(j + 1, len(prev)):
                cands |= _atoms(fg, prev[j], prev[k])
        cands -= existing
        cands = {c for c in cands if not any(_lt(c, d) for d in cands)}
        if not cands:
            break
        levels.append(sorted(cands, key=_sort_key))
        existing |= cands
    level_of = {k: l for l, ks in enumerate(levels) for k in ks}

    # unique smallest containing region per variable and pairwise factor
    nodes = [("v", v) for v in range(fg.n)] + [("f", a) for a in fg.pairwise_factor_ids()]
    changed = True
    while changed:
        changed = False
        for kind, idx in nodes:
            cont = [k for k in level_of if (idx in k[0] if kind == "v" else idx in k[1])]
            if not cont:
                continue
            minimal = [k for k in cont if not any(_lt(o, k) for o in cont)]
            if len(minimal) > 1:
                if kind == "v":
                    new = (frozenset([idx]), frozenset())
                else:
                    new = (frozenset(fg.factors[idx].scope), frozenset([idx]))
                level_of[new] = 1 + max(level_of[k] for k in cont)
                changed = True
    return _assemble(fg, level_of)


def _assemble(fg, level_of) -> RegionGraph:
    keys = sorted(level_of, key=lambda k: (level_of[k],) + _sort_key(k))
    by_level: dict[int, list] = {}
    for k in keys:
        by_level.setdefault(level_of[k], []).append(k)
    idx = {k: i for i, k in enumerate(keys)}
    edges = set()
    for k in keys:
        l = level_of[k]
        for p in by_level.get(l - 1, []):
            if _lt(k, p):
                edges.add((idx[p], idx[k]))
    # repair: every strict superset must be an ancestor
    parents = {i: set() for i in range(len(keys))}
    for p, c in edges:
        parents[c].add(p)
    anc: dict[int, set] = {}
    repaired = False
    for k in keys:
        i = idx[k]
        a = set()
        for p in parents[i]:
            a |= anc[p] | {p}
        missing = {idx[o] for o in keys if _lt(k, o)} - a
        while missing:
            mins = [m for m in missing if not any(_lt(keys[o], keys[m]) for o in missing)]
            for m in sorted(mins):
                parents[i].add(m)
                edges.add((m, i))
                a |= anc[m] | {m}
            repaired = True
            missing -= a
        anc[i] = a
    levels = {idx[k]: level_of[k] for k in keys}
    if repaired:
        for k in keys:
            i = idx[k]
            levels[i] = 1 + max((levels[p] for p in parents[i]), default=-1)
    order = sorted(range(len(keys)), key=lambda i: (levels[i],) + _sort_key(keys[i]))
    remap = {old: new for new, old in enumerate(order)}
    regions = []
    for new, old in enumerate(order):
        vs, ps = keys[old]
        facs = set(ps)
        for v in vs:
            facs.update(fg.unary_factor_of(v))
        regions.append(Region(new, tuple(sorted(vs)), tuple(sorted(facs)), levels[old]))
    rg = RegionGraph(regions, [(remap[p], remap[c]) for p, c in edges], fg.cards)
    return counting_numbers(rg)


def bethe_region_graph(model) -> RegionGraph:
    """Large regions = each factor with its scope; small regions = single variables."""
    fg = as_factor_graph(model)
    regions = [Region(a, f.scope, (a,), 0) for a, f in enumerate(fg.factors)]
    edges = []
    for i in range(fg.n):
        rid = len(regions)
        lvl = 1 if fg.var_factors[i] else 0
        regions.append(Region(rid, (i,), (), lvl))
        edges += [(a, rid) for a in fg.var_factors[i]]
    return counting_numbers(RegionGraph(regions, edges, fg.cards))


def counting_numbers(rg: RegionGraph) -> RegionGraph:
    """Set ``c_R = 1 - Σ_{ancestors} c`` top-down; roots get 1."""
    for k in rg.order:
        rg.regions[k].counting = 1 - sum(rg.regions[a].counting for a in rg.ancestors[k])
    return rg


@dataclass
class ValidityReport:
    valid: bool
    offenders: list[tuple[str, int, int]] = field(default_factory=list)

    def __bool__(self):
        return self.valid


def check_validity(rg: RegionGraph, model) -> ValidityReport:
    """Check that every variable and factor is counted exactly once."""
    fg = as_factor_graph(model)
    var_tot = np.zeros(fg.n, dtype=np.int64)
    fac_tot = np.zeros(fg.num_factors, dtype=np.int64)
    for r in rg.regions:
        var_tot[list(r.vars)] += r.counting
        fac_tot[list(r.factors)] += r.counting
    offenders = [("variable", i, int(t)) for i, t in enumerate(var_tot) if t != 1]
    offenders += [("factor", a, int(t)) for a, t in enumerate(fac_tot) if t != 1]
    return ValidityReport(not offenders, offenders)


def build_region_graph(model, kind="auto", include_infinite_face=False) -> RegionGraph:
    """Region graph for a model: ``bethe``, or ``auto`` cycle roots + cluster variation."""
    if kind == "bethe":
        return bethe_region_graph(model)
    if kind != "auto":
        raise ContractViolation(f"unknown region-graph kind {kind!r}")
    topo = getattr(model, "topology", ("custom",))
    fg = as_factor_graph(model)
    if topo[0] == "grid" and min(topo[1:]) >= 2:
        roots = faces_planar_grid(topo[1], topo[2], include_infinite_face)
    elif topo[0] == "complete" and topo[1] >= 3:
        roots = star_cycle_basis_complete(topo[1])
    else:
        roots = root_regions_general(fg.n, fg.graph_edges()).cycles
    return cluster_variation(fg, roots)


# ---- free energy ---------------------------------------------------------------------

def region_energy_table(rg: RegionGraph, k: int, model) -> np.ndarray:
    """``E_R(x_R) = -Σ_{a in A_R} log ψ_a`` as a dense table over the region scope."""
    fg = as_factor_graph(model)
    r = rg.regions[k]
    E = np.zeros(rg.shape(k))
    for a in r.factors:
        f = fg.factors[a]
        E = E - expand(f.log_table, f.scope, r.vars)
    return E


def region_energy(rg: RegionGraph, k: int, model, x_R) -> float:
    return float(region_energy_table(rg, k, model)[tuple(x_R)])


def _belief_array(b):
    return b.table if isinstance(b, BeliefTable) else np.asarray(b, dtype=np.float64)


def region_free_energy(rg: RegionGraph, beliefs: Mapping[int, object], model,
                       energies=None) -> float:
    """``Σ_R c_R Σ_x b_R (E_R + ln b_R)`` with ``0 ln 0 = 0``."""
    fg = as_factor_graph(model)
    total = 0.0
    for r in rg.regions:
        if r.id not in beliefs:
            raise ContractViolation(f"no belief for region {r.id}")
        b = _belief_array(beliefs[r.id])
        if b.shape != rg.shape(r.id):
            raise ContractViolation(f"belief for region {r.id} has wrong shape {b.shape}")
        if abs(b.sum() - 1.0) > 1e-6 or np.any(b < 0):
            raise ContractViolation(f"belief for region {r.id} is not normalized")
        if r.counting == 0:
            continue
        E = energies[r.id] if energies is not None else region_energy_table(rg, r.id, fg)
        total += r.counting * float((b * E).sum() + xlogx(b).sum())
    return total


def marginals_from_joint(rg: RegionGraph, joint: np.ndarray) -> dict[int, np.ndarray]:
    """Every region's marginal of a full joint table (axes = variables 0..n-1)."""
    allv = tuple(range(joint.ndim))
    return {r.id: marginalize(joint, allv, r.vars) for r in rg.regions}


def dump_region_graph(rg: RegionGraph) -> str:
    lines = []
    for r in rg.regions:
        lines.append(f"region {r.id} level {r.level} c {r.counting} "
                     f"vars {' '.join(map(str, r.vars))} factors {' '.join(map(str, r.factors))}")
    lines += [f"edge {p} {c}" for p, c in rg.edges]
    return "\n".join(lines) + "\n"


def extract_marginals(rg: RegionGraph, beliefs: Mapping[int, object], queries) -> list[np.ndarray]:
    """Average, over every region covering each query scope, that region's marginal."""
    from .errors import QueryError
    out = []
    for q in queries:
        q = tuple(sorted(int(v) for v in q))
        tabs = [marginalize(_belief_array(beliefs[r.id]), r.vars, q)
                for r in rg.regions if set(q) <= set(r.vars)]
        if not tabs:
            raise QueryError(f"query scope {q} is not covered by any region")
        t = sum(tabs) / len(tabs)
        out.append(t / t.sum())
    return out
