import numpy as np
import pytest

from renn.classic import loopy_bp
from renn.exact import exact_inference
from renn.gbp import build_message_sets, gbp_run
from renn.model import random_ising
from renn.regiongraph import (bethe_region_graph, build_region_graph, cluster_variation,
                              faces_planar_grid)

from conftest import random_tree


def l1(res, ex):
    return float(np.abs(res.unary - ex.unary).mean())


def test_two_face_graph_message_sets_empty():
    rg = cluster_variation(random_ising("grid:2,3", 1.0, 0), faces_planar_grid(2, 3))
    store = build_message_sets(rg)
    assert len(store.edges) == 2
    assert all(not n for n in store.N) and all(not h for h in store.H)


def test_three_level_message_sets_by_hand():
    m = random_ising("grid:2,3", 1.0, 0)
    rg = cluster_variation(m, faces_planar_grid(2, 3, include_infinite_face=True))
    face0 = rg.find((0, 1, 3, 4))
    perim = rg.find(range(6))
    pair = {e: rg.find(e) for e in [(0, 1), (0, 3), (3, 4), (1, 4)]}
    s1, s4 = rg.find((1,)), rg.find((4,))
    store = build_message_sets(rg)
    k = store.index(face0, pair[(1, 4)])
    N = {store.edges[e] for e in store.N[k]}
    H = {store.edges[e] for e in store.H[k]}
    assert N == {(perim, pair[(0, 1)]), (perim, pair[(0, 3)]), (perim, pair[(3, 4)])}
    assert H == {(pair[(0, 1)], s1), (pair[(3, 4)], s4)}


def test_single_root_is_exact():
    m = random_ising("complete:5", 1.0, 3)
    rg = cluster_variation(m, [frozenset(range(5))])
    store = build_message_sets(rg)
    assert store.edges == []
    r = gbp_run(rg, m)
    ex = exact_inference(m)
    assert abs(r.free_energy + ex.log_Z) < 1e-8
    np.testing.assert_allclose(r.unary, ex.unary, atol=1e-10)


def test_two_face_graph_is_exact():
    m = random_ising("grid:2,3", 1.0, 5)
    r = gbp_run(build_region_graph(m), m, tol=1e-12)
    ex = exact_inference(m)
    assert r.converged
    assert abs(r.free_energy + ex.log_Z) < 1e-8
    np.testing.assert_allclose(r.unary, ex.unary, atol=1e-9)


@pytest.mark.parametrize("seed", range(4))
def test_bethe_graph_matches_bp_on_trees(seed):
    m = random_tree(9, seed)
    r = gbp_run(bethe_region_graph(m), m, tol=1e-12)
    b = loopy_bp(m)
    assert r.converged
    assert np.max(np.abs(r.unary - b.unary)) < 1e-5
    assert abs(r.free_energy - b.free_energy) < 1e-5


def test_bethe_graph_matches_bp_on_loopy_grid():
    m = random_ising("grid:3,3", 0.5, 2)
    r = gbp_run(bethe_region_graph(m), m, tol=1e-12)
    b = loopy_bp(m, tol=1e-12)
    assert r.converged and b.converged
    assert np.max(np.abs(r.unary - b.unary)) < 1e-5


def test_faces_graph_beats_bp_on_small_grids():
    errs_g, errs_b = [], []
    for seed in range(5):
        m = random_ising("grid:3,3", 0.1, seed)
        ex = exact_inference(m)
        errs_g.append(l1(gbp_run(build_region_graph(m), m), ex))
        errs_b.append(l1(loopy_bp(m), ex))
    assert np.mean(errs_g) < np.mean(errs_b)


def test_converged_free_energy_is_stationary():
    m = random_ising("grid:3,3", 0.5, 0)
    rg = build_region_graph(m)
    r = gbp_run(rg, m, tol=1e-12)
    assert r.converged
    more = gbp_run(rg, m, max_iters=r.iterations + 1, tol=0.0)
    assert abs(more.free_energy - r.free_energy) < 1e-8


def test_beliefs_normalized_and_messages_positive():
    m = random_ising("grid:3,3", 1.0, 1)
    r = gbp_run(build_region_graph(m), m, max_iters=30)
    for b in r.region_beliefs.values():
        assert np.isclose(b.sum(), 1.0) and np.all(b >= 0)
    for lm in r.info["messages"].log_m:
        assert np.all(np.isfinite(lm))
        assert np.isclose(np.exp(lm).sum(), 1.0)
