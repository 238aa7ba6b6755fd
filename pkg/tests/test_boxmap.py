import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse import csr_matrix

from chaingraph.boxmap import (
    BOTTOM,
    ISOLATED,
    SADDLE,
    TOP,
    BoxMap,
    BudgetExceeded,
    Condensation,
    InvariantViolation,
    Node,
    SamplingConfig,
    adjacency_reduction,
    build_box_map,
    chain_edges,
    chain_graph,
    merge_touching,
    classify_top_bottom,
    connectedness_check,
    prune_to_chain_recurrent,
    recurrent_mask,
    recurrent_nodes,
    refine,
    scc_condensation,
    stencil,
    transitive_closure,
)
from chaingraph.geometry import Grid, GridError
from chaingraph.systems import SystemSpec, TimeTMap, step_points

LOGISTIC4 = SystemSpec("LogisticMap", {"a": 4.0})
CUBIC = SystemSpec("Polynomial1DFlow", {"c1": 1.0, "c3": -1.0}, TimeTMap(1.0))


def line(n_depth=4):
    return Grid.from_bounds([0.0], [1.0], n_depth)


# -- synthetic maps ----------------------------------------------------------------------


class TestCondensation:
    def test_two_cycle(self):
        bm = BoxMap.from_successors(line(), {0: [1], 1: [0]})
        cond = scc_condensation(bm)
        assert cond.n_sccs == 1 and cond.sizes.tolist() == [2]

    def test_chain(self):
        bm = BoxMap.from_successors(line(), {0: [1], 1: [2], 2: []})
        cond = scc_condensation(bm)
        assert cond.n_sccs == 3 and cond.dag.nnz == 2

    def test_only_self_loops_recur(self):
        bm = BoxMap.from_successors(line(), {0: [1], 1: [2], 2: [2]})
        nodes = recurrent_nodes(scc_condensation(bm), bm)
        assert [n.boxes.tolist() for n in nodes] == [[2]]

    def test_condensing_again_gives_singletons(self):
        bm = BoxMap.from_successors(line(), {0: [1, 3], 1: [0, 2], 2: [2], 3: [4], 4: [3]})
        cond = scc_condensation(bm)
        dag_map = BoxMap.from_successors(Grid.from_bounds([0.0], [1.0], 3),
                                         {i: cond.dag[i].indices.tolist() for i in range(cond.n_sccs)})
        again = scc_condensation(dag_map)
        assert again.n_sccs == cond.n_sccs and np.all(again.sizes == 1)

    def test_invalid_successor(self):
        with pytest.raises(GridError):
            BoxMap.from_successors(line(2), {0: [7]})


class TestEdges:
    def tower(self):
        # 0 -> 1 -> 2 with transient boxes between the recurrent ones
        return BoxMap.from_successors(line(), {0: [0, 3], 3: [5], 5: [5, 6], 6: [8], 8: [8]})

    def test_full_relation_through_transients(self):
        g = chain_graph(self.tower())
        assert g.edge_pairs == [(0, 1), (0, 2), (1, 2)]
        assert list(g.reduced_edges) == [(0, 1), (1, 2)]
        assert [n.annotation for n in g.nodes] == [TOP, SADDLE, BOTTOM]

    def test_cycle_between_nodes_is_an_error(self):
        # a corrupted condensation whose DAG has a 2-cycle
        dag = csr_matrix(np.array([[0, 1], [1, 0]], dtype=np.int8))
        cond = Condensation(np.array([0, 1]), 2, dag, np.array([True, True]))
        nodes = [Node(0, np.array([0]), np.zeros((1, 1)), 0.0, scc=0), Node(1, np.array([1]), np.zeros((1, 1)), 0.0, scc=1)]
        with pytest.raises(InvariantViolation):
            chain_edges(nodes, cond)
        with pytest.raises(InvariantViolation):
            adjacency_reduction([(0, 1), (1, 0)])

    def test_no_self_edges_and_disjoint(self):
        g = chain_graph(self.tower())
        assert all(a != b for a, b in g.edge_pairs)
        allb = np.concatenate([n.boxes for n in g.nodes])
        assert allb.size == np.unique(allb).size


class TestReduction:
    def test_tower(self):
        assert adjacency_reduction([(0, 1), (1, 2), (0, 2)]) == [(0, 1), (1, 2)]

    def test_single(self):
        assert adjacency_reduction([(3, 5)]) == [(3, 5)]

    def test_empty(self):
        assert adjacency_reduction([]) == []


class TestAnnotations:
    def test_tower(self):
        assert classify_top_bottom([0, 1, 2], [(0, 1), (1, 2), (0, 2)]) == {0: TOP, 1: SADDLE, 2: BOTTOM}

    def test_star(self):
        ann = classify_top_bottom(range(5), [(0, 1), (0, 2), (0, 3), (0, 4), (3, 1), (4, 2), (3, 2), (4, 1)])
        assert ann[0] == TOP and ann[1] == ann[2] == BOTTOM and ann[3] == ann[4] == SADDLE

    def test_isolated(self):
        assert classify_top_bottom([0], []) == {0: ISOLATED}


class TestConnectedness:
    def test_tower_connected(self):
        assert connectedness_check(chain_graph(TestEdges().tower())).connected

    def test_two_disjoint_triples(self):
        g = Grid.from_bounds([0.0], [1.0], 5)
        succ = {}
        for base in (2, 20):
            # middle box repels into both neighbours, which are fixed
            succ.update({base: [base], base + 1: [base, base + 1, base + 2], base + 2: [base + 2]})
        res = connectedness_check(chain_graph(BoxMap.from_successors(g, succ)))
        assert not res.connected
        assert res.components == ((0, 1, 2), (3, 4, 5))
        assert res.min_distance == pytest.approx(15 * g.widths[0])

    def test_empty(self):
        g = chain_graph(BoxMap.from_successors(line(), {0: [1], 1: []}))
        with pytest.raises(GridError):
            connectedness_check(g)


class TestPrune:
    def test_transient_chain(self):
        bm = BoxMap.from_successors(line(), {0: [1], 1: [2], 2: [2]})
        assert prune_to_chain_recurrent(bm).boxes.tolist() == [2]

    def test_keeps_connecting_boxes(self):
        bm = TestEdges().tower()
        assert prune_to_chain_recurrent(bm).boxes.tolist() == [0, 3, 5, 6, 8]

    def test_drops_dead_ends(self):
        bm = BoxMap.from_successors(line(), {0: [0, 1, 4], 1: [2], 2: [2], 4: [5], 5: []})
        assert prune_to_chain_recurrent(bm).boxes.tolist() == [0, 1, 2]


# -- real systems ------------------------------------------------------------------------


def test_stencil_sizes():
    assert stencil(1).shape == (3, 1)
    assert stencil(2).shape == (4 + 1 + 4, 2)
    assert stencil(3).shape == (8 + 1 + 6, 3)


def test_identity_single_node():
    grid = Grid.from_bounds([0, 0], [1, 1], 4)
    bm = build_box_map(SystemSpec("IdentityMap", {"dim": 2}), grid)
    assert all(b in bm.successors(b) for b in bm.boxes)
    g = chain_graph(bm)
    assert len(g.nodes) == 1 and g.nodes[0].size == grid.n_boxes


def test_logistic_four_is_one_node():
    bm = build_box_map(LOGISTIC4, line(10))
    g = chain_graph(bm)
    assert len(g.nodes) == 1 and g.edges == ()
    assert g.nodes[0].size == 2**10 and g.nodes[0].annotation == ISOLATED


def test_cubic_transients_outside_unit_interval():
    grid = Grid.from_bounds([-2.0], [2.0], 10)
    bm = build_box_map(CUBIC, grid)
    rec = bm.boxes[recurrent_mask(bm)]
    x = grid.centers(rec)[:, 0]
    delta = 4 * grid.widths[0]
    assert np.all(np.abs(x) <= 1 + delta)
    g = chain_graph(bm)
    cents = sorted(round(float(n.centroid[0]), 2) for n in g.nodes)
    assert cents == [-1.0, 0.0, 1.0]
    zero = g.node_at([0.0]).id
    assert sorted(g.edge_pairs) == sorted([(zero, g.node_at([-1.0]).id), (zero, g.node_at([1.0]).id)])
    assert connectedness_check(g).connected


def test_cubic_prune_keeps_unit_interval():
    grid = Grid.from_bounds([-2.0], [2.0], 8)
    kept = prune_to_chain_recurrent(build_box_map(CUBIC, grid))
    x = grid.centers(kept.boxes)[:, 0]
    assert x.min() > -1.1 and x.max() < 1.1
    assert np.any(np.abs(x) < 0.05) and np.any(x > 0.95) and np.any(x < -0.95)


def test_logistic_tower_structure():
    spec = SystemSpec("LogisticMap", {"a": 3.2})
    g = chain_graph(build_box_map(spec, line(12)))
    zero, fp = g.node_at([0.0]), g.node_at([0.6875])
    p2a, p2b = g.node_at([0.5130445]), g.node_at([0.7994555])
    assert zero.annotation == TOP
    assert p2a is p2b and p2a.annotation == BOTTOM
    assert (zero.id, fp.id) in g.edge_pairs and (fp.id, p2a.id) in g.edge_pairs
    assert connectedness_check(g).connected


def test_escaped_boxes_are_recorded():
    spec = SystemSpec("LogisticMap", {"a": 4.0})
    grid = Grid.from_bounds([0.0], [0.5], 4)
    bm = build_box_map(spec, grid)
    assert bm.escaped.size > 0
    assert all(bm.successors(b).size == 0 for b in bm.escaped)


def test_edge_budget():
    with pytest.raises(BudgetExceeded):
        build_box_map(SystemSpec("IdentityMap", {"dim": 2}), Grid.from_bounds([0, 0], [1, 1], 5),
                      SamplingConfig(max_edges=10))


def test_refinement_monotone():
    grid = Grid.from_bounds([-2.0], [2.0], 8)
    coarse = build_box_map(CUBIC, grid)
    kept = prune_to_chain_recurrent(coarse)
    fine_grid = grid.subdivide()
    full = build_box_map(CUBIC, fine_grid)
    rec_fine = full.boxes[recurrent_mask(full)]
    assert np.all(np.isin(grid.parents(rec_fine, fine_grid), kept.boxes))
    res = refine(CUBIC, grid, rounds=2)
    assert res.complete and res.box_map.grid.depth == (10,)
    assert [h["depth"] for h in res.history] == [[8], [9], [10]]


def test_refine_budget_stops():
    grid = Grid.from_bounds([0.0], [1.0], 6)
    res = refine(SystemSpec("IdentityMap"), grid, SamplingConfig(max_edges=200), rounds=3)
    assert not res.complete and "budget" in res.stopped
    assert res.box_map.n_edges <= 200


def test_threads_deterministic():
    grid = Grid.from_bounds([-2.0], [2.0], 9)
    a = build_box_map(CUBIC, grid, SamplingConfig(extra=3, seed=5, chunk_points=500, threads=1))
    b = build_box_map(CUBIC, grid, SamplingConfig(extra=3, seed=5, chunk_points=500, threads=3))
    assert np.array_equal(a.indptr, b.indptr) and np.array_equal(a.indices, b.indices)


# -- properties --------------------------------------------------------------------------


SOUNDNESS_CASES = [
    ("logistic", SystemSpec("LogisticMap", {"a": 3.7}), Grid.from_bounds([0.0], [1.0], 10)),
    ("cubic", CUBIC, Grid.from_bounds([-2.0], [2.0], 10)),
    ("pendulum", SystemSpec("PendulumPoincare", {"gamma": 0.2, "rho": 2.0}),
     Grid.from_bounds([-np.pi, -6.0], [np.pi, 6.0], 6, periodic=[True, False])),
    ("rotation", SystemSpec("CircleRotationFlow", {"omega": 0.3}, TimeTMap(1.0)),
     Grid.from_bounds([0.0], [2 * np.pi], 8, periodic=[True])),
    ("galerkin-mean", SystemSpec("ChafeeInfanteGalerkin", {"lambda": 0.5, "N": 4}, TimeTMap(4.0), projection=(0,)),
     Grid.from_bounds([-2.0], [2.0], 8)),
]


@pytest.mark.parametrize("name,spec,grid", SOUNDNESS_CASES, ids=[c[0] for c in SOUNDNESS_CASES])
def test_outer_approximation_soundness(name, spec, grid):
    bm = build_box_map(spec, grid)
    rng = np.random.default_rng(11)
    pts = grid.lo + rng.random((1000, grid.dim)) * (grid.hi - grid.lo)
    img, ok = step_points(spec, pts)
    src, dst = grid.boxes_of(pts), grid.boxes_of(img)
    checked = 0
    for s, d, good in zip(src, dst, ok):
        if not good or d < 0:
            assert s in bm.escaped or d < 0
            continue
        if s in bm.escaped:
            continue
        assert d in bm.successors(s)
        checked += 1
    assert checked > 500


def brute_reduction(n, edges):
    closure = transitive_closure(n, edges)
    return sorted((a, b) for a, b in closure
                  if not any((a, c) in closure and (c, b) in closure for c in range(n)))


random_dags = st.integers(1, 12).flatmap(
    lambda n: st.tuples(st.just(n), st.lists(
        st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)).filter(lambda e: e[0] < e[1]), max_size=30)))


@settings(max_examples=100, deadline=None)
@given(random_dags)
def test_reduction_against_brute_force(dag):
    n, edges = dag
    red = adjacency_reduction(edges, n)
    assert red == brute_reduction(n, edges)
    assert transitive_closure(n, red) == transitive_closure(n, edges)


@settings(max_examples=100, deadline=None)
@given(random_dags)
def test_closure_idempotent_and_acyclic(dag):
    n, edges = dag
    c = transitive_closure(n, edges)
    assert transitive_closure(n, c) == c
    assert all(a != b for a, b in c)


random_maps = st.integers(2, 16).flatmap(
    lambda n: st.dictionaries(st.integers(0, n - 1), st.lists(st.integers(0, n - 1), max_size=3),
                              min_size=1, max_size=n))


@settings(max_examples=150, deadline=None)
@given(random_maps)
def test_prune_idempotent(succ):
    bm = BoxMap.from_successors(Grid.from_bounds([0.0], [1.0], 4), succ)
    once = prune_to_chain_recurrent(bm)
    twice = prune_to_chain_recurrent(once)
    assert np.array_equal(once.boxes, twice.boxes)
    assert np.array_equal(recurrent_mask(bm)[bm.positions(once.boxes)], recurrent_mask(once))


@settings(max_examples=150, deadline=None)
@given(random_maps)
def test_graph_is_partial_order(succ):
    g = chain_graph(BoxMap.from_successors(Grid.from_bounds([0.0], [1.0], 4), succ))
    edges = set(g.edge_pairs)
    assert transitive_closure(len(g.nodes), edges) == edges
    assert set(g.reduced_edges) <= edges
    for a, b in itertools.permutations(range(len(g.nodes)), 2):
        assert not ((a, b) in edges and (b, a) in edges)


class TestMergeTouching:
    def test_fringe_folded_near_weak_fixed_point(self):
        bm = build_box_map(SystemSpec("Polynomial1DFlow", {"c1": 1.0, "c3": -1.0}, TimeTMap(0.5)),
                           Grid.from_bounds([-2.0], [2.0], 10))
        plain, merged = chain_graph(bm), chain_graph(bm, merge=True)
        assert len(plain.nodes) > 3
        assert len(merged.nodes) == 3
        assert sorted(merged.edge_pairs) == sorted((merged.node_at([0.0]).id, merged.node_at([x]).id) for x in (-1.0, 1.0))

    def test_separated_nodes_stay_apart(self):
        grid = Grid.from_bounds([0.0], [1.0], 4)
        bm = BoxMap.from_successors(grid, {0: [0], 1: [0, 1, 2], 5: [5, 6], 6: [5]})
        assert len(chain_graph(bm, merge=True).nodes) == 2

    def test_touching_self_loops_join(self):
        grid = Grid.from_bounds([0.0], [1.0], 4)
        bm = BoxMap.from_successors(grid, {3: [3], 4: [4], 9: [9]})
        g = chain_graph(bm, merge=True)
        assert sorted(n.size for n in g.nodes) == [1, 2]

    def test_no_recurrent_neighbours(self):
        grid = Grid.from_bounds([0.0], [1.0], 4)
        bm = BoxMap.from_successors(grid, {2: [2], 7: [7]})
        cond = scc_condensation(bm)
        assert merge_touching(bm, cond) is cond


@settings(max_examples=150, deadline=None)
@given(random_maps)
def test_merge_coarsens_and_stays_acyclic(succ):
    bm = BoxMap.from_successors(Grid.from_bounds([0.0], [1.0], 4), succ)
    plain, merged = chain_graph(bm), chain_graph(bm, merge=True)
    edges = set(merged.edge_pairs)
    assert transitive_closure(len(merged.nodes), edges) == edges
    for a, b in itertools.permutations(range(len(merged.nodes)), 2):
        assert not ((a, b) in edges and (b, a) in edges)
    # every plain node sits inside exactly one merged node
    for n in plain.nodes:
        owners = [m.id for m in merged.nodes if np.intersect1d(m.boxes, n.boxes).size]
        assert len(owners) == 1
        assert np.all(np.isin(n.boxes, merged.node(owners[0]).boxes))


def test_outer_approximation_soundness_lorenz():
    # time-1 map on the preset ball at depth 8; only the sampled points' cells are enclosed
    spec = SystemSpec("LorenzFlow", {"r": 28.0}, TimeTMap(1.0))
    grid = Grid.from_bounds([-80.0, -80.0, -53.0], [80.0, 80.0, 107.0], 8)
    rng = np.random.default_rng(11)
    d = rng.normal(size=(1000, 3))
    pts = [0.0, 0.0, 27.0] + 80 * d / np.linalg.norm(d, axis=1)[:, None] * rng.random((1000, 1)) ** (1 / 3)
    src = grid.boxes_of(pts)
    bm = build_box_map(spec, grid, boxes=src)
    img, ok = step_points(spec, pts)
    dst = grid.boxes_of(img)
    missed = [i for i in range(1000) if ok[i] and dst[i] >= 0 and dst[i] not in bm.successors(int(src[i]))]
    assert not missed, f"{len(missed)} of 1000 images outside the enclosure"
