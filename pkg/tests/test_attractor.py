import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaingraph.attractor import (
    AttractorApprox,
    PreconditionError,
    compare_graphs,
    connectedness_of_attractor,
    global_attractor_outer,
    invariant_part,
    nodes_inside,
    time_T_graph_equality,
    verify_trapping,
)
from chaingraph.boxmap import BoxMap, build_box_map, chain_graph
from chaingraph.geometry import Grid, boxes_in_ball
from chaingraph.systems import SystemInputError, SystemSpec, TimeTMap, logistic_trapping_interval

CUBIC = SystemSpec("Polynomial1DFlow", {"c1": 1.0, "c3": -1.0}, TimeTMap(1.0))


def cubic_map(depth, lo=-2.0, hi=2.0):
    return build_box_map(CUBIC, Grid.from_bounds([lo], [hi], depth))


class TestTrapping:
    def test_logistic_interval(self):
        a = 3.3
        box, _ = logistic_trapping_interval(a)
        # |l'(a/4)| > 2, so widening the top by d moves its image ~2d below the bottom;
        # widen the bottom more than twice as much as the top
        grid = Grid.from_bounds([box.lo[0] - 0.03], [box.hi[0] + 0.005], 10)
        bm = build_box_map(SystemSpec("LogisticMap", {"a": a}), grid)
        v = verify_trapping(bm, bm.boxes)
        assert v.forward_invariant and v.escaped_count == 0 and v.margin >= 0

    def test_lorenz_ball(self):
        spec = SystemSpec("LorenzFlow", {"r": 28.0}, TimeTMap(1.0))
        grid = Grid.from_bounds([-80, -80, -53], [80, 80, 107], 5)
        region = boxes_in_ball(grid, [0, 0, 27], 80)
        bm = build_box_map(spec, grid, boxes=region)
        v = verify_trapping(bm, region)
        assert v.forward_invariant and v.margin > 0

    def test_interval_without_fixed_point(self):
        bm = cubic_map(8, 0.5, 0.6)
        v = verify_trapping(bm, bm.boxes)
        assert not v.forward_invariant
        assert v.leaving_count > 0 or v.escaped_count > 0

    def test_precondition(self):
        bm = cubic_map(8, 0.5, 0.6)
        with pytest.raises(PreconditionError) as err:
            global_attractor_outer(bm)
        assert not err.value.verdict.forward_invariant


class TestAttractor:
    def test_cubic_unit_interval(self):
        bm = cubic_map(12)
        grid = bm.grid
        att = global_attractor_outer(bm)
        lows = grid.cell_lows(att.boxes)[:, 0]
        w = grid.widths[0]
        assert att.converged
        assert lows.min() >= -1 - 2 * w and lows.max() + w <= 1 + 2 * w
        assert lows.min() <= -1 and lows.max() + w >= 1

    def test_logistic_whole_interval(self):
        bm = build_box_map(SystemSpec("LogisticMap", {"a": 4.0}), Grid.from_bounds([0.0], [1.0], 10))
        assert global_attractor_outer(bm).boxes.size == 2**10

    def test_galerkin_constants(self):
        spec = SystemSpec("ChafeeInfanteGalerkin", {"lambda": 0.5, "N": 4}, TimeTMap(4.0), projection=(0, 1))
        grid = Grid.from_bounds([-2, -2], [2, 2], 6)
        bm = build_box_map(spec, grid)
        att = global_attractor_outer(bm)
        c = grid.centers(att.boxes)
        assert np.abs(c[:, 1]).max() <= grid.widths[1]
        assert c[:, 0].min() == pytest.approx(-1, abs=2 * grid.widths[0])
        assert c[:, 0].max() == pytest.approx(1, abs=2 * grid.widths[0])

    def test_history_monotone(self):
        att = global_attractor_outer(cubic_map(10))
        h = att.history
        assert all(b <= a for a, b in zip(h, h[1:]))
        assert att.iterations <= h[0] + 1

    def test_max_iters(self):
        att = invariant_part(cubic_map(10), max_iters=1)
        assert att.iterations == 1 and not att.converged


class TestConnectedness:
    def test_interval(self):
        bm = cubic_map(10)
        assert connectedness_of_attractor(global_attractor_outer(bm), bm.grid)

    def test_two_intervals(self):
        grid = Grid.from_bounds([0.0], [1.0], 5)
        approx = AttractorApprox(np.array([1, 2, 3, 10, 11]), grid.depth, 1, True)
        assert not connectedness_of_attractor(approx, grid)


class TestTimeT:
    def test_cubic_half_vs_one(self):
        rep = time_T_graph_equality(CUBIC, 1.0, 0.5, Grid.from_bounds([-2.0], [2.0], 10))
        assert rep["nodes"] == [3, 3] and rep["edges_equal"]

    def test_rotation(self):
        spec = SystemSpec("CircleRotationFlow", {"omega": 2 * np.pi}, TimeTMap(1.0))
        grid = Grid.from_bounds([0.0], [2 * np.pi], 8, periodic=[True])
        rep = time_T_graph_equality(spec, 1.0, 0.37, grid)
        assert rep["nodes"] == [1, 1] and rep["equal"]

    def test_needs_flow(self):
        with pytest.raises(SystemInputError):
            time_T_graph_equality(SystemSpec("LogisticMap"), 1.0, 2.0, Grid.from_bounds([0.0], [1.0], 4))

    def test_mismatch_reported(self):
        grid = Grid.from_bounds([0.0], [1.0], 4)
        g1 = chain_graph(BoxMap.from_successors(grid, {0: [0], 1: [0, 1, 2], 2: [2]}))
        g2 = chain_graph(BoxMap.from_successors(grid, {9: [9]}))
        rep = compare_graphs(g1, g2)
        assert not rep["equal"] and rep["unmatched"][0]


# -- properties --------------------------------------------------------------------------

SYSTEMS = [
    ("logistic-3.2", SystemSpec("LogisticMap", {"a": 3.2}), Grid.from_bounds([0.0], [1.0], 11)),
    ("logistic-3.83", SystemSpec("LogisticMap", {"a": 3.83}), Grid.from_bounds([0.0], [1.0], 11)),
    ("cubic", CUBIC, Grid.from_bounds([-2.0], [2.0], 11)),
    ("rotation", SystemSpec("CircleRotationFlow", {"omega": 1.0}, TimeTMap(1.0)),
     Grid.from_bounds([0.0], [2 * np.pi], 9, periodic=[True])),
]


@pytest.mark.parametrize("name,spec,grid", SYSTEMS, ids=[s[0] for s in SYSTEMS])
def test_nodes_inside_attractor_inside_region(name, spec, grid):
    bm = build_box_map(spec, grid)
    att = global_attractor_outer(bm)
    assert np.all(np.isin(att.boxes, bm.boxes))
    ok, outside = nodes_inside(chain_graph(bm), att)
    assert ok and outside == 0


@pytest.mark.parametrize("depth", [7, 9])
def test_refinement_nesting(depth):
    coarse = cubic_map(depth)
    fine = cubic_map(depth + 1)
    a0, a1 = global_attractor_outer(coarse), global_attractor_outer(fine)
    parents = coarse.grid.parents(a1.boxes, fine.grid)
    assert np.all(np.isin(parents, a0.boxes))


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 24).flatmap(lambda n: st.dictionaries(
    st.integers(0, n - 1), st.lists(st.integers(0, n - 1), max_size=3), min_size=1, max_size=n)))
def test_invariant_part_monotone_and_invariant(succ):
    bm = BoxMap.from_successors(Grid.from_bounds([0.0], [1.0], 5), succ)
    att = invariant_part(bm)
    assert att.converged
    assert all(b <= a for a, b in zip(att.history, att.history[1:]))
    # every surviving box has a surviving predecessor
    kept = set(att.boxes.tolist())
    images = {t for b in kept for t in bm.successors(b).tolist()}
    assert kept <= images
