
import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from renn._tables import marginalize
from renn.classic import bethe_free_energy
from renn.errors import ContractViolation, QueryError
from renn.exact import exact_inference
from renn.model import PairwiseMRF, grid_edges, random_ising, to_factor_graph
from renn.regiongraph import (BeliefTable, Region, RegionGraph, bethe_region_graph,
                              build_region_graph, check_validity, cluster_variation,
                              counting_numbers, dump_region_graph, extract_marginals,
                              faces_planar_grid, marginals_from_joint, region_energy,
                              region_free_energy, root_regions_general, star_cycle_basis_complete)

from conftest import brute_joint, random_graph, random_tree


def fig1_model(seed=0):
    return random_ising("grid:2,3", 1.0, seed)


def cycle_vector(cyc, eix):
    v = np.zeros(len(eix), dtype=np.uint8)
    for k in range(len(cyc)):
        a, b = cyc[k], cyc[(k + 1) % len(cyc)]
        v[eix[(min(a, b), max(a, b))]] ^= 1
    return v


def gf2_rank(rows):
    M = np.array(rows, dtype=np.uint8) % 2
    rank = 0
    for col in range(M.shape[1] if M.size else 0):
        piv = [r for r in range(rank, M.shape[0]) if M[r, col]]
        if not piv:
            continue
        M[[rank, piv[0]]] = M[[piv[0], rank]]
        for r in range(M.shape[0]):
            if r != rank and M[r, col]:
                M[r] ^= M[rank]
        rank += 1
    return rank


# ---- root selection ----------------------------------------------------------------

def test_two_by_three_faces():
    assert faces_planar_grid(2, 3) == [(0, 1, 4, 3), (1, 2, 5, 4)]
    assert len(faces_planar_grid(5, 5)) == 16
    inf = faces_planar_grid(2, 3, include_infinite_face=True)
    assert len(inf) == 3 and set(inf[-1]) == set(range(6))


def test_star_basis():
    assert star_cycle_basis_complete(4) == [(0, 1, 2), (0, 1, 3), (0, 2, 3)]
    assert len(star_cycle_basis_complete(4)) == 6 - 4 + 1
    assert len(star_cycle_basis_complete(9)) == 28
    with pytest.raises(ContractViolation):
        star_cycle_basis_complete(4, edges=[(0, 1), (1, 2)])


def test_general_selection_on_grid_and_complete():
    assert root_regions_general(12, grid_edges(3, 4)).cycles == faces_planar_grid(3, 4)
    edges = [(i, j) for i in range(6) for j in range(i + 1, 6)]
    assert root_regions_general(6, edges).cycles == star_cycle_basis_complete(6)


def test_grid_plus_chord():
    edges = grid_edges(3, 3) + [(0, 4)]
    sel = root_regions_general(9, edges)
    faces = faces_planar_grid(3, 3)
    assert sel.cycles[:4] == faces
    extra = sel.cycles[4:]
    assert len(extra) == 1 and {0, 4} <= set(extra[0])
    assert len(sel.cycles) == len(edges) - 9 + 1
    assert not sel.fallback


def test_tree_fallback_warns():
    m = random_tree(6, 0)
    with pytest.warns(RuntimeWarning):
        sel = root_regions_general(6, m.edge_list)
    assert sel.fallback and sorted(sel.cycles) == sorted(m.edge_list)


def test_bridge_between_triangles():
    edges = [(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (3, 5), (4, 5)]
    with pytest.warns(RuntimeWarning):
        sel = root_regions_general(6, edges)
    assert (2, 3) in sel.cycles
    assert sum(len(c) >= 3 for c in sel.cycles) == 2


def _graphs():
    return st.tuples(st.integers(3, 9), st.floats(0.2, 0.9), st.integers(0, 10_000))


@settings(max_examples=40, deadline=None)
@given(_graphs())
def test_general_selection_is_cycle_basis(args):
    n, p, seed = args
    m = random_graph(n, p, seed)
    edges = m.edge_list
    sel = root_regions_general(n, edges)
    eix = {e: k for k, e in enumerate(edges)}
    loops = [c for c in sel.cycles if len(c) >= 3]
    g = nx.Graph()
    g.add_nodes_from(range(n))
    g.add_edges_from(edges)
    dim = len(edges) - n + nx.number_connected_components(g)
    assert len(loops) == dim
    assert gf2_rank([cycle_vector(c, eix) for c in loops]) == dim
    for c in loops:
        assert len(set(c)) == len(c)
    covered = set()
    for c in sel.cycles:
        if len(c) == 2:
            covered.add(tuple(sorted(c)))
        elif len(c) >= 3:
            covered.update(tuple(sorted((c[k], c[(k + 1) % len(c)]))) for k in range(len(c)))
    assert covered == set(edges)


def test_selection_is_deterministic():
    m = random_graph(8, 0.5, 3)
    assert root_regions_general(8, m.edge_list).cycles == root_regions_general(8, m.edge_list).cycles


# ---- cluster variation -------------------------------------------------------------

def test_fig1_two_roots():
    m = fig1_model()
    rg = cluster_variation(m, faces_planar_grid(2, 3))
    assert rg.num_levels == 2
    (child,) = rg.levels[1]
    r = rg.regions[child]
    fg = to_factor_graph(m)
    assert r.vars == (1, 4)
    assert [fg.factors[a].label for a in r.factors] == ["D", "u1", "u4"]
    assert r.counting == -1
    assert [rg.regions[k].counting for k in rg.roots] == [1, 1]


def test_fig1_three_roots():
    rg = cluster_variation(fig1_model(), faces_planar_grid(2, 3, include_infinite_face=True))
    assert rg.num_levels == 3
    lvl1, lvl2 = rg.levels[1], rg.levels[2]
    assert len(lvl1) == 7 and all(len(rg.regions[k].vars) == 2 for k in lvl1)
    assert all(rg.regions[k].counting == -1 for k in lvl1)
    assert len(lvl2) == 6 and all(rg.regions[k].counting == 1 for k in lvl2)
    assert check_validity(rg, fig1_model())


def test_disjoint_roots_have_no_children():
    m = PairwiseMRF(6, np.zeros(6), ((0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0),
                                      (3, 4, 1.0), (3, 5, 1.0), (4, 5, 1.0)))
    rg = cluster_variation(m, [(0, 1, 2), (3, 4, 5)])
    assert rg.num_levels == 1 and len(rg) == 2


def test_set_roots_take_internal_factors():
    m = random_ising("complete:4", 1.0, 0)
    rg = cluster_variation(m, [frozenset(range(4))])
    assert len(rg) == 1 and len(rg.regions[0].factors) == 6 + 4


def test_cvm_rejects_bad_roots():
    m = random_ising("grid:2,3", 1.0, 0)
    with pytest.raises(ContractViolation):
        cluster_variation(m, [(0, 1, 4, 3)])             # variables 2 and 5 uncovered
    with pytest.raises(ContractViolation):
        cluster_variation(m, [(0, 2, 5, 3)])             # not a cycle of the graph


def test_bethe_counting_numbers():
    m = random_ising("grid:3,3", 1.0, 0)
    fg = to_factor_graph(m)
    rg = bethe_region_graph(m)
    for r in rg.regions:
        if r.factors:
            assert r.counting == 1
        else:
            assert r.counting == 1 - len(fg.var_factors[r.vars[0]])
    assert check_validity(rg, m)


@pytest.mark.parametrize("rows,cols", [(r, c) for r in range(2, 7) for c in range(2, 7)])
@pytest.mark.parametrize("inf", [False, True])
def test_grid_graphs_valid(rows, cols, inf):
    m = random_ising(f"grid:{rows},{cols}", 1.0, 0)
    rg = build_region_graph(m, include_infinite_face=inf)
    assert check_validity(rg, m)


@pytest.mark.parametrize("n", range(4, 11))
def test_complete_graphs_valid(n):
    m = random_ising(f"complete:{n}", 1.0, 0)
    assert check_validity(build_region_graph(m), m)


@settings(max_examples=40, deadline=None)
@given(_graphs())
def test_general_cvm_valid(args):
    n, p, seed = args
    m = random_graph(n, p, seed)
    rg = build_region_graph(m)
    rep = check_validity(rg, m)
    assert rep.valid, rep.offenders
    for p_, c in rg.edges:
        assert set(rg.regions[c].vars) < set(rg.regions[p_].vars) or \
            set(rg.regions[c].factors) < set(rg.regions[p_].factors)
    # ancestors are exactly the strict supersets
    for r in rg.regions:
        sup = {o.id for o in rg.regions
               if set(r.vars) <= set(o.vars) and set(r.factors) <= set(o.factors) and o.id != r.id}
        assert sup == set(rg.ancestors[r.id])


def test_factor_closure():
    m = random_ising("grid:4,4", 1.0, 0)
    fg = to_factor_graph(m)
    rg = build_region_graph(m, include_infinite_face=True)
    for r in rg.regions:
        for a in r.factors:
            assert set(fg.factors[a].scope) <= set(r.vars)
        # unary factors attach wherever their variable appears
        for v in r.vars:
            assert set(fg.unary_factor_of(v)) <= set(r.factors)


def test_missing_factor_is_invalid():
    m = PairwiseMRF(2, [0.0, 0.0], ((0, 1, 1.0),))
    regions = [Region(0, (0, 1), (1, 2), 0)]             # pairwise factor 0 left out
    rg = counting_numbers(RegionGraph(regions, [], (2, 2)))
    rep = check_validity(rg, m)
    assert not rep.valid and ("factor", 0, 0) in rep.offenders


def test_region_graph_rejects_bad_edges():
    regions = [Region(0, (0,), (), 0), Region(1, (0, 1), (), 1)]
    with pytest.raises(ContractViolation):
        RegionGraph(regions, [(0, 1)], (2, 2))


def test_dump_format():
    rg = cluster_variation(fig1_model(), faces_planar_grid(2, 3))
    lines = dump_region_graph(rg).splitlines()
    assert lines[0] == "region 0 level 0 c 1 vars 0 1 3 4 factors 0 2 3 5 7 8 10 11"
    assert lines[2] == "region 2 level 1 c -1 vars 1 4 factors 3 8 11"
    assert lines[3:] == ["edge 0 2", "edge 1 2"]


# ---- free energy ---------------------------------------------------------------------

def random_joint(cards, seed):
    return np.random.default_rng(seed).dirichlet(np.ones(int(np.prod(cards)))).reshape(cards)


def test_region_energy_single_edge():
    m = PairwiseMRF(2, [0.5, 0.0], ((0, 1, 1.0),))
    rg = cluster_variation(m, [(0, 1)])
    assert region_energy(rg, 0, m, (1, 1)) == -1.5


def test_zero_potentials_uniform_beliefs():
    for m in [random_ising("grid:4,4", 0.0, 0).with_params(np.zeros(16), np.zeros(24)),
              random_ising("complete:6", 0.0, 0).with_params(np.zeros(6), np.zeros(15))]:
        for rg in [build_region_graph(m), bethe_region_graph(m)]:
            b = {r.id: np.full(rg.shape(r.id), 0.5 ** len(r.vars)) for r in rg.regions}
            assert np.isclose(region_free_energy(rg, b, m), -m.n * np.log(2), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(3, 8), st.floats(0.3, 1.0), st.integers(0, 10_000))
def test_bethe_equivalence(n, p, seed):
    m = random_graph(n, p, seed)
    fg = to_factor_graph(m)
    joint = random_joint(fg.cards, seed)
    rg = bethe_region_graph(m)
    beliefs = marginals_from_joint(rg, joint)
    allv = tuple(range(n))
    unary = np.array([marginalize(joint, allv, (v,)) for v in range(n)])
    facs = [marginalize(joint, allv, f.scope) for f in fg.factors]
    assert abs(region_free_energy(rg, beliefs, m) - bethe_free_energy(m, unary, facs)) < 1e-10


def exact_region_F(m, rg):
    joint, log_Z = brute_joint(m)
    return region_free_energy(rg, marginals_from_joint(rg, joint), m), log_Z


@pytest.mark.parametrize("seed", range(5))
def test_exact_marginals_give_log_Z_on_tree_like_graphs(seed):
    tree = random_tree(9, seed)
    F, log_Z = exact_region_F(tree, bethe_region_graph(tree))
    assert abs(F + log_Z) < 1e-8
    with pytest.warns(RuntimeWarning):
        rg = build_region_graph(tree)
    F, log_Z = exact_region_F(tree, rg)
    assert abs(F + log_Z) < 1e-8
    g = random_ising("grid:2,3", 1.0, seed)
    F, log_Z = exact_region_F(g, build_region_graph(g))
    assert abs(F + log_Z) < 1e-8
    k = random_ising("complete:5", 1.0, seed)
    F, log_Z = exact_region_F(k, cluster_variation(k, [frozenset(range(5))]))
    assert abs(F + log_Z) < 1e-8


def test_free_energy_input_checks():
    m = fig1_model()
    rg = build_region_graph(m)
    joint, _ = brute_joint(m)
    b = marginals_from_joint(rg, joint)
    bad = dict(b)
    bad[0] = b[0] * 1.1
    with pytest.raises(ContractViolation):
        region_free_energy(rg, bad, m)
    bad[0] = np.ones(3)
    with pytest.raises(ContractViolation):
        region_free_energy(rg, bad, m)
    del bad[0]
    with pytest.raises(ContractViolation):
        region_free_energy(rg, bad, m)


def test_belief_table_checks():
    BeliefTable((0, 1), np.full((2, 2), 0.25))
    with pytest.raises(ContractViolation):
        BeliefTable((1, 0), np.full((2, 2), 0.25))
    with pytest.raises(ContractViolation):
        BeliefTable((0,), np.array([0.5, 0.6]))


# ---- marginal extraction -----------------------------------------------------------

def test_extract_exact_marginals():
    m = random_ising("grid:3,3", 1.0, 1)
    rg = build_region_graph(m)
    joint, _ = brute_joint(m)
    b = marginals_from_joint(rg, joint)
    ex = exact_inference(m)
    got = extract_marginals(rg, b, [(v,) for v in range(9)] + list(ex.pairwise))
    for v in range(9):
        np.testing.assert_allclose(got[v], ex.unary[v], atol=1e-9)
    for t, ref in zip(got[9:], ex.pairwise.values()):
        np.testing.assert_allclose(t, ref, atol=1e-9)
    root = rg.regions[rg.roots[0]]
    np.testing.assert_allclose(extract_marginals(rg, b, [root.vars])[0], b[root.id], atol=1e-15)
    with pytest.raises(QueryError):
        extract_marginals(rg, b, [(0, 8)])
