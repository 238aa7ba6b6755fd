"""Trapping-region checks and combinatorial global-attractor enclosures.

The attractor enclosure is the largest subset ``S`` of a forward-invariant
box region with ``S`` contained in the image of ``S`` under the box map,
found by repeatedly intersecting the set with its own image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .boxmap import BoxMap, ChainGraph, SamplingConfig, build_box_map, chain_graph
from .geometry import Grid, GridError, box_components, dilate
from .systems import SystemInputError, SystemSpec, TimeTMap

DENSE_LIMIT = 1 << 24


class PreconditionError(RuntimeError):
    """An operation was called on a region that failed its trapping check."""

    def __init__(self, message: str, verdict: "TrappingVerdict | None" = None):
        super().__init__(message)
        self.verdict = verdict


@dataclass(frozen=True, eq=False)
class TrappingVerdict:
    region: np.ndarray
    forward_invariant: bool
    margin: float
    escaped_count: int
    leaving_count: int = 0

    def as_dict(self) -> dict:
        return {
            "forward_invariant": bool(self.forward_invariant),
            "margin": None if not np.isfinite(self.margin) else float(self.margin),
            "escaped_count": int(self.escaped_count),
            "leaving_count": int(self.leaving_count),
            "region_boxes": int(self.region.size),
        }


@dataclass(frozen=True, eq=False)
class AttractorApprox:
    boxes: np.ndarray
    depth: tuple[int, ...]
    iterations: int
    converged: bool
    history: tuple[int, ...] = field(default=())


def _region_margin(grid: Grid, region: np.ndarray, targets: np.ndarray) -> float:
    """Smallest gap between ``targets`` cells and cells outside ``region``.

    Measured centre-to-centre minus one cell width, so a target cell touching
    the region boundary has margin 0 and a target outside has a negative one.
    Returns ``inf`` when the region has no boundary and ``nan`` on grids too
    large for a dense distance transform.
    """
    if grid.n_boxes > DENSE_LIMIT:
        return float("nan")
    mask = np.zeros(grid.n_boxes, dtype=bool)
    mask[region] = True
    mask = mask.reshape(grid.shape)
    pad = [(1, 1) if not p else (0, 0) for p in grid.periodic]
    padded = np.pad(mask, pad, constant_values=False)
    reps = [3 if p else 1 for p in grid.periodic]
    tiled = np.tile(padded, reps)
    if tiled.all():
        return float("inf")
    dist = ndimage.distance_transform_edt(tiled, sampling=grid.widths)
    # pull back the central tile
    sl = tuple(slice(n, 2 * n) if p else slice(1, n + 1) for n, p in zip(grid.shape, grid.periodic))
    dist = dist[sl].reshape(-1)
    inside = mask.reshape(-1)[targets]
    d = np.where(inside, dist[targets], 0.0)
    return float(d.min() - grid.widths.min())


def verify_trapping(bm: BoxMap, region) -> TrappingVerdict:
    """Forward invariance of a box region under the box map.

    The region is forward invariant when every successor of every region box
    is a region box and no region box escaped.
    """
    region = np.unique(bm.grid.check_indices(region))
    if region.size == 0:
        raise GridError("trapping region is empty")
    pos = bm.positions(region)
    if np.any(pos < 0):
        raise GridError("box map was not built on the whole region")
    sub = bm.restrict(region)
    escaped = int(sub.escaped.size)
    targets = np.unique(sub.indices)
    leaving = int(np.count_nonzero(~np.isin(targets, region)))
    margin = _region_margin(bm.grid, region, targets) if targets.size else float("inf")
    return TrappingVerdict(region, escaped == 0 and leaving == 0, margin, escaped, leaving)


def invariant_part(bm: BoxMap, region=None, max_iters: int | None = None) -> AttractorApprox:
    """Iterate ``S <- S & succ(S)`` from the region until nothing is removed.

    No trapping check is made; on a region that is not forward invariant the
    result is only an attractor candidate.
    """
    region = bm.boxes if region is None else np.unique(np.asarray(region, dtype=np.int64))
    sub = bm.restrict(region)
    adj_t = sub.graph().T.tocsr()
    alive = np.ones(sub.n, dtype=bool)
    max_iters = sub.n + 1 if max_iters is None else max_iters
    history = [int(alive.sum())]
    it, converged = 0, False
    while it < max_iters:
        hit = adj_t @ alive.astype(np.int32) > 0
        new = alive & hit
        it += 1
        if new.sum() == alive.sum():
            converged = True
            break
        alive = new
        history.append(int(alive.sum()))
    return AttractorApprox(sub.boxes[alive], bm.grid.depth, it, converged, tuple(history))


def global_attractor_outer(bm: BoxMap, region=None, max_iters: int | None = None,
                           verdict: TrappingVerdict | None = None) -> AttractorApprox:
    """Attractor enclosure inside a region that must pass :func:`verify_trapping`."""
    region = bm.boxes if region is None else np.unique(np.asarray(region, dtype=np.int64))
    verdict = verdict or verify_trapping(bm, region)
    if not verdict.forward_invariant:
        raise PreconditionError(
            f"region is not forward invariant ({verdict.escaped_count} escaped, "
            f"{verdict.leaving_count} successor boxes outside)", verdict)
    return invariant_part(bm, region, max_iters)


def connectedness_of_attractor(approx: AttractorApprox, grid: Grid) -> bool:
    """True iff the box union is face-connected."""
    if approx.boxes.size == 0:
        raise GridError("attractor approximation is empty")
    return len(box_components(approx.boxes, grid, "face")) == 1


def nodes_inside(graph: ChainGraph, approx: AttractorApprox) -> tuple[bool, int]:
    """Whether every node box lies in the attractor boxes, and how many do not."""
    boxes = np.concatenate([n.boxes for n in graph.nodes]) if graph.nodes else np.zeros(0, dtype=np.int64)
    outside = int(np.count_nonzero(~np.isin(boxes, approx.boxes)))
    return outside == 0, outside


# -- time-T comparison --------------------------------------------------------------


def _overlap(a: np.ndarray, b: np.ndarray, grid: Grid) -> float:
    """Symmetric one-layer-slack overlap fraction of two box sets."""
    fa = np.count_nonzero(np.isin(a, dilate(b, grid))) / a.size
    fb = np.count_nonzero(np.isin(b, dilate(a, grid))) / b.size
    return min(fa, fb)


def match_nodes(g1: ChainGraph, g2: ChainGraph, threshold: float = 0.5) -> dict:
    """Pair nodes of two graphs on the same grid by box overlap."""
    grid = g1.grid
    scores = np.zeros((len(g1.nodes), len(g2.nodes)))
    for i, a in enumerate(g1.nodes):
        for j, b in enumerate(g2.nodes):
            scores[i, j] = _overlap(a.boxes, b.boxes, grid)
    pairs = {}
    used = set()
    for flat in np.argsort(-scores, axis=None):
        i, j = np.unravel_index(flat, scores.shape)
        if scores[i, j] < threshold:
            break
        if i in pairs or j in used:
            continue
        pairs[int(i)] = int(j)
        used.add(int(j))
    return {"pairs": pairs, "scores": scores}


def compare_graphs(g1: ChainGraph, g2: ChainGraph, threshold: float = 0.5) -> dict:
    """Node matching, box-level symmetric difference (one-layer slack) and edge agreement."""
    grid = g1.grid
    m = match_nodes(g1, g2, threshold)
    pairs = m["pairs"]
    u1 = np.concatenate([n.boxes for n in g1.nodes]) if g1.nodes else np.zeros(0, dtype=np.int64)
    u2 = np.concatenate([n.boxes for n in g2.nodes]) if g2.nodes else np.zeros(0, dtype=np.int64)
    only1 = int(np.count_nonzero(~np.isin(u1, dilate(u2, grid)))) if u2.size else int(u1.size)
    only2 = int(np.count_nonzero(~np.isin(u2, dilate(u1, grid)))) if u1.size else int(u2.size)
    e1 = {(pairs.get(a), pairs.get(b)) for a, b in g1.edge_pairs}
    e2 = set(g2.edge_pairs)
    bijective = len(pairs) == len(g1.nodes) == len(g2.nodes)
    edges_equal = bijective and e1 == e2
    return {
        "nodes": [len(g1.nodes), len(g2.nodes)],
        "matching": {str(k): v for k, v in sorted(pairs.items())},
        "unmatched": [sorted(set(range(len(g1.nodes))) - set(pairs)), sorted(set(range(len(g2.nodes))) - set(pairs.values()))],
        "node_symmetric_difference": [only1, only2],
        "edges_equal": edges_equal,
        "equal": bool(edges_equal and only1 == 0 and only2 == 0),
    }


def time_T_graph_equality(spec: SystemSpec, T1: float, T2: float, grid: Grid, region=None,
                          sampling: SamplingConfig = SamplingConfig(), merge: bool = True) -> dict:
    """Chain graphs of the time-T1 and time-T2 maps on one grid, compared."""
    if not spec.entry.flow:
        raise SystemInputError("time-T comparison needs a flow")
    if not (T1 > 0 and T2 > 0):
        raise SystemInputError("both times must be positive")
    graphs = []
    for T in (T1, T2):
        bm = build_box_map(spec.with_step(TimeTMap(T)), grid, sampling, region)
        graphs.append(chain_graph(bm, merge=merge))
    report = compare_graphs(*graphs)
    report["T"] = [T1, T2]
    return report
