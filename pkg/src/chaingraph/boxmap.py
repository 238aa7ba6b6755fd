"""Combinatorial outer approximation of one step, and the chain graph it induces.

The pipeline is

    build_box_map -> scc_condensation -> recurrent_nodes -> chain_edges
        -> adjacency_reduction / classify_top_bottom -> connectedness_check

:func:`chain_graph` runs all of it.  :func:`refine` is the
prune-subdivide-rebuild loop used to resolve small nodes.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .geometry import Grid, GridError, neighbor_pairs, set_distance
from .systems import SystemSpec, step_points

log = logging.getLogger(__name__)

STRONG, WEAK_CANDIDATE, UNCLASSIFIED = "Strong", "WeakCandidate", "Unclassified"
TOP, BOTTOM, SADDLE, ISOLATED = "Top", "Bottom", "Saddle", "Isolated"


class InvariantViolation(RuntimeError):
    """An internal consistency check failed (e.g. a cycle between distinct nodes)."""


class BudgetExceeded(RuntimeError):
    """A box map would need more successor entries than the configured limit."""


@dataclass(frozen=True)
class SamplingConfig:
    """How box images are enclosed.

    Each box is sampled at its corners, centre and face midpoints plus
    ``extra`` random points.  The bounding box of the images is widened by
    ``bloat`` times half its own extent plus one target-cell radius.
    """

    extra: int = 0
    bloat: float = 1.0
    seed: int = 0
    chunk_points: int = 400_000
    threads: int | None = None
    max_edges: int | None = None

    def __post_init__(self):
        if self.extra < 0 or self.bloat < 0:
            raise ValueError("extra and bloat must be nonnegative")
        if self.max_edges is not None and self.max_edges < 1:
            raise ValueError("max_edges must be positive")


def worker_count(config: SamplingConfig) -> int:
    if config.threads is not None:
        return max(1, int(config.threads))
    env = os.environ.get("CHAINGRAPH_THREADS")
    if env:
        return max(1, int(env))
    return 1


def stencil(dim: int) -> np.ndarray:
    """Unit-cell sample offsets: corners, centre, then face midpoints (none in 1-d, where they are the corners)."""
    corners = np.array(list(product([0.0, 1.0], repeat=dim)))
    center = np.full((1, dim), 0.5)
    if dim == 1:
        return np.vstack([corners, center])
    faces = []
    for i in range(dim):
        for v in (0.0, 1.0):
            f = np.full(dim, 0.5)
            f[i] = v
            faces.append(f)
    return np.vstack([corners, center, np.array(faces)])


@dataclass(frozen=True, eq=False)
class BoxMap:
    """Multivalued map on a set of grid cells.

    ``boxes`` is the sorted domain; row ``i`` of the CSR pair
    ``(indptr, indices)`` lists the successor cells (global indices, sorted)
    of ``boxes[i]``.  Successors outside the domain are kept in the rows but
    ignored by the graph algorithms.  Escaped boxes have empty rows.
    """

    grid: Grid
    boxes: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    escaped: np.ndarray

    @classmethod
    def from_successors(cls, grid: Grid, successors: dict[int, list[int]], escaped=()) -> "BoxMap":
        """Hand-built map, mainly for tests and synthetic examples."""
        boxes = np.array(sorted(successors), dtype=np.int64)
        grid.check_indices(boxes)
        esc = set(int(e) for e in escaped)
        rows = [sorted(set(int(s) for s in successors[int(b)])) if int(b) not in esc else [] for b in boxes]
        for r in rows:
            grid.check_indices(np.asarray(r, dtype=np.int64))
        indptr = np.concatenate([[0], np.cumsum([len(r) for r in rows])]).astype(np.int64)
        indices = np.array([s for r in rows for s in r], dtype=np.int64)
        return cls(grid, boxes, indptr, indices, np.array(sorted(esc), dtype=np.int64))

    @property
    def n(self) -> int:
        return int(self.boxes.size)

    def positions(self, idx) -> np.ndarray:
        """Domain position of each box index, -1 if not in the domain."""
        idx = np.asarray(idx, dtype=np.int64)
        if self.boxes.size == 0:
            return np.full(idx.shape, -1, dtype=np.int64)
        pos = np.minimum(np.searchsorted(self.boxes, idx), self.boxes.size - 1)
        return np.where(self.boxes[pos] == idx, pos, -1)

    def successors(self, idx: int) -> np.ndarray:
        p = int(self.positions(np.int64(idx)))
        if p < 0:
            raise GridError(f"box {idx} is not in the map's domain")
        return self.indices[self.indptr[p]:self.indptr[p + 1]]

    def as_dict(self) -> dict[int, list[int]]:
        return {int(b): self.successors(b).tolist() for b in self.boxes}

    def graph(self) -> csr_matrix:
        """Adjacency matrix over domain positions (out-of-domain targets dropped)."""
        cols = np.empty(self.indices.size, dtype=np.int32 if self.n < 2**31 else np.int64)
        step = 1 << 24
        for s in range(0, self.indices.size, step):
            cols[s:s + step] = self.positions(self.indices[s:s + step])
        keep = cols >= 0
        if keep.all():
            indptr = self.indptr
        else:
            kept = np.concatenate([[0], np.cumsum(keep)])
            indptr = kept[self.indptr]
            cols = cols[keep]
        del keep
        return csr_matrix((np.ones(cols.size, dtype=np.int8), cols, indptr), shape=(self.n, self.n))

    def restrict(self, keep) -> "BoxMap":
        """Same map with the domain cut down to ``keep``."""
        keep = np.intersect1d(np.asarray(keep, dtype=np.int64), self.boxes)
        row_keep = np.zeros(self.n, dtype=bool)
        row_keep[self.positions(keep)] = True
        lengths = np.diff(self.indptr)
        entry_keep = np.repeat(row_keep, lengths)
        indptr = np.concatenate([[0], np.cumsum(lengths[row_keep])]).astype(np.int64)
        return BoxMap(self.grid, keep, indptr, self.indices[entry_keep], np.intersect1d(self.escaped, keep))

    @property
    def n_edges(self) -> int:
        return int(self.indices.size)


def index_dtype(grid: Grid):
    """Smallest integer type that holds every box index of ``grid``."""
    return np.int32 if grid.n_boxes < 2**31 else np.int64


def _enclose_chunk(spec: SystemSpec, grid: Grid, boxes: np.ndarray, offsets: np.ndarray, config: SamplingConfig, rng_seed):
    """Escape flags, successor counts and flat successor indices for one chunk of boxes."""
    d = grid.dim
    w = grid.widths
    lows = grid.cell_lows(boxes)
    pts = lows[:, None, :] + offsets[None, :, :] * w
    if config.extra:
        rng = np.random.default_rng(rng_seed)
        pts = np.concatenate([pts, lows[:, None, :] + rng.random((boxes.size, config.extra, d)) * w], axis=1)
    m = pts.shape[1]
    Y, ok = step_points(spec, pts.reshape(-1, d))
    Y = Y.reshape(boxes.size, m, d)
    ok = ok.reshape(boxes.size, m).all(axis=1)
    per = np.asarray(grid.periodic)
    period = grid.hi - grid.lo
    if per.any():
        ref = Y[:, 2**d, :]  # image of the centre
        delta = Y[..., per] - ref[:, None, per]
        Y[..., per] = ref[:, None, per] + np.mod(delta + period[per] / 2, period[per]) - period[per] / 2
    with np.errstate(invalid="ignore"):
        ylo = np.min(Y, axis=1)
        yhi = np.max(Y, axis=1)
        inside = np.all(per | ((ylo >= grid.lo) & (yhi <= grid.hi)), axis=1)
    escaped = ~ok | ~inside
    ylo[escaped] = grid.lo
    yhi[escaped] = grid.lo
    bloat = config.bloat * (yhi - ylo) / 2 + w / 2
    L = ylo - bloat
    H = yhi + bloat
    shape = np.asarray(grid.shape)
    first = np.floor((L - grid.lo) / w).astype(np.int64)
    last = np.ceil((H - grid.lo) / w).astype(np.int64) - 1
    first = np.where(per, first, np.clip(first, 0, shape - 1))
    last = np.where(per, last, np.clip(last, 0, shape - 1))
    count = last - first + 1
    full = per & (count >= shape)
    first = np.where(full, 0, first)
    count = np.where(full, shape, count)
    count[escaped] = 0
    per_box, flat = _expand(grid, first, count)
    return escaped, per_box, flat


def _expand(grid: Grid, first: np.ndarray, count: np.ndarray):
    """All cells in the per-box index ranges ``first .. first+count-1``, sorted per box."""
    per_box = np.prod(count, axis=1)
    starts = np.concatenate([[0], np.cumsum(per_box)])
    total = int(starts[-1])
    dtype = index_dtype(grid)
    if total == 0:
        return per_box, np.zeros(0, dtype=dtype)
    owner = np.repeat(np.arange(first.shape[0]), per_box)
    rem = np.arange(total, dtype=np.int64) - starts[owner]
    shape = np.asarray(grid.shape)
    lin = np.zeros(total, dtype=np.int64)
    stride = 1
    for j in range(grid.dim - 1, -1, -1):
        c = count[owner, j]
        lin += np.mod(first[owner, j] + rem % c, shape[j]) * stride
        rem //= c
        stride *= int(shape[j])
    del rem
    if any(grid.periodic):
        # wrapping can break the per-row order
        lin = lin[np.lexsort((lin, owner))]
    return per_box, lin.astype(dtype)


def build_box_map(spec: SystemSpec, grid: Grid, sampling: SamplingConfig = SamplingConfig(), boxes=None) -> BoxMap:
    """Outer approximation of one step of ``spec`` on the cells ``boxes`` of ``grid``."""
    if grid.dim != spec.dim:
        raise GridError(f"grid is {grid.dim}-d but {spec.kind} acts on {spec.dim}-d states")
    if tuple(grid.periodic) != tuple(spec.periodic) and any(spec.periodic):
        raise GridError("grid periodicity does not match the system's periodic coordinates")
    boxes = np.arange(grid.n_boxes, dtype=np.int64) if boxes is None else np.unique(grid.check_indices(boxes))
    if boxes.size == 0:
        raise GridError("cannot build a box map on an empty set of boxes")
    offsets = stencil(grid.dim)
    m = offsets.shape[0] + sampling.extra
    per_chunk = max(1, sampling.chunk_points // m)
    chunks = [boxes[s:s + per_chunk] for s in range(0, boxes.size, per_chunk)]
    seeds = np.random.SeedSequence(sampling.seed).spawn(len(chunks))
    jobs = list(zip(chunks, seeds))

    def run(job):
        return _enclose_chunk(spec, grid, job[0], offsets, sampling, job[1])

    workers = worker_count(sampling)
    results = []
    total = 0
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for r in pool.map(run, jobs) if workers > 1 and len(jobs) > 1 else map(run, jobs):
            total += r[2].size
            if sampling.max_edges is not None and total > sampling.max_edges:
                raise BudgetExceeded(f"box map needs more than {sampling.max_edges} successor entries")
            results.append(r)
    escaped = np.concatenate([r[0] for r in results])
    counts = np.concatenate([r[1] for r in results])
    indices = np.concatenate([r[2] for r in results])
    del results
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    bm = BoxMap(grid, boxes, indptr, indices, boxes[escaped])
    log.debug("box map: %d boxes, %d edges, %d escaped", bm.n, bm.n_edges, bm.escaped.size)
    return bm


# -- condensation ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Condensation:
    """SCC partition of a box map's domain and the induced DAG on SCC ids."""

    labels: np.ndarray  # SCC id per domain position
    n_sccs: int
    dag: csr_matrix
    self_loop: np.ndarray  # per domain position

    def members(self, scc: int) -> np.ndarray:
        return np.nonzero(self.labels == scc)[0]

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_sccs)


def scc_condensation(bm: BoxMap) -> Condensation:
    g = bm.graph()
    return _condense(g, g.diagonal() > 0)


def _condense(g: csr_matrix, self_loop: np.ndarray) -> Condensation:
    n, labels = connected_components(g, directed=True, connection="strong")
    labels = labels.astype(np.int64)
    pairs = []
    rows_per = max(1, (1 << 23) // max(1, g.nnz // max(1, g.shape[0])))
    for s in range(0, g.shape[0], rows_per):
        sub = g[s:s + rows_per].tocoo()
        ls, ld = labels[sub.row + s], labels[sub.col]
        cross = ls != ld
        if cross.any():
            pairs.append(np.unique(ls[cross] * n + ld[cross]))
    flat = np.unique(np.concatenate(pairs)) if pairs else np.zeros(0, dtype=np.int64)
    dag = csr_matrix((np.ones(flat.size, dtype=np.int8), (flat // n, flat % n)), shape=(n, n))
    return Condensation(labels, n, dag, self_loop)


def merge_touching(bm: BoxMap, cond: Condensation | None = None, connectivity: str = "full") -> Condensation:
    """Condensation in which recurrent boxes that touch are chain-equivalent.

    Adds jumps in both directions between neighbouring recurrent boxes and
    recomputes the SCCs.  Cells next to a weakly hyperbolic fixed point often
    map onto themselves and so form singleton nodes beside the fixed point's
    node; at the grid's resolution they cannot be told apart from it, and this
    step folds them in.  Boxes on paths between merged sets join them, so the
    result is still a condensation with an acyclic DAG.
    """
    cond = cond or scc_condensation(bm)
    g = bm.graph()
    rec = np.nonzero(recurrent_mask(bm, cond))[0]
    src, dst = neighbor_pairs(bm.boxes[rec], bm.grid, connectivity)
    if src.size == 0:
        return cond
    jumps = csr_matrix((np.ones(src.size, dtype=np.int8), (rec[src], rec[dst])), shape=g.shape)
    aug = (g + jumps).tocsr()
    aug.data[:] = 1
    return _condense(aug, cond.self_loop)


def recurrent_scc_ids(cond: Condensation) -> np.ndarray:
    """SCCs with more than one box, or one box that is its own successor."""
    sizes = cond.sizes
    loops = np.bincount(cond.labels[cond.self_loop], minlength=cond.n_sccs) > 0
    return np.nonzero((sizes > 1) | loops)[0]


@dataclass(frozen=True, eq=False)
class Node:
    id: int
    boxes: np.ndarray
    representative_points: np.ndarray
    diameter: float
    annotation: str = ""
    scc: int = -1

    @property
    def size(self) -> int:
        return int(self.boxes.size)

    @property
    def centroid(self) -> np.ndarray:
        return self.representative_points.mean(axis=0)


def _periodic_centers(grid: Grid, boxes: np.ndarray) -> np.ndarray:
    """Box centres with periodic coordinates unwrapped around the first box."""
    c = grid.centers(boxes)
    per = np.asarray(grid.periodic)
    if per.any() and c.shape[0]:
        period = grid.hi - grid.lo
        ref = c[0, per]
        c[:, per] = ref + np.mod(c[:, per] - ref + period[per] / 2, period[per]) - period[per] / 2
    return c


def node_diameter(grid: Grid, boxes: np.ndarray, exact_limit: int = 3000) -> float:
    """Diameter of the union of cells (exact up to ``exact_limit`` boxes, else a bounding-box bound)."""
    c = _periodic_centers(grid, boxes)
    if c.shape[0] <= exact_limit:
        best = 0.0
        for s in range(0, c.shape[0], 500):
            diff = np.abs(c[s:s + 500, None, :] - c[None, :, :]) + grid.widths
            best = max(best, float(np.sqrt(np.sum(diff**2, axis=-1)).max()))
        return best
    span = c.max(axis=0) - c.min(axis=0) + grid.widths
    return float(np.linalg.norm(span))


def _make_node(grid: Grid, nid: int, boxes: np.ndarray, scc: int, n_repr: int = 16) -> Node:
    c = _periodic_centers(grid, boxes)
    pick = np.unique(np.linspace(0, boxes.size - 1, min(n_repr, boxes.size)).astype(int))
    if boxes.size <= n_repr:
        pick = np.arange(boxes.size)
    rep = grid.wrap(c[pick]) if any(grid.periodic) else c[pick]
    return Node(nid, boxes, rep, node_diameter(grid, boxes), scc=scc)


def recurrent_nodes(cond: Condensation, bm: BoxMap) -> list[Node]:
    """Recurrent SCCs as nodes, ordered by their smallest box index."""
    ids = recurrent_scc_ids(cond)
    groups = [(bm.boxes[cond.labels == s], s) for s in ids]
    groups.sort(key=lambda g: int(g[0][0]))
    return [_make_node(bm.grid, i, boxes, int(s)) for i, (boxes, s) in enumerate(groups)]


def chain_edges(nodes: list[Node], cond: Condensation) -> list[tuple[int, int]]:
    """Full downstream relation between nodes: (A, B) iff B's SCC is reachable from A's."""
    scc_to_node = {n.scc: n.id for n in nodes}
    edges = set()
    for n in nodes:
        reached = breadth_first_order(cond.dag, n.scc, directed=True, return_predecessors=False)
        for s in reached:
            m = scc_to_node.get(int(s))
            if m is not None and m != n.id:
                edges.add((n.id, m))
    for a, b in edges:
        if (b, a) in edges:
            raise InvariantViolation(f"nodes {a} and {b} reach each other; they should be one SCC")
    return sorted(edges)


def transitive_closure(n_nodes: int, edges) -> set[tuple[int, int]]:
    reach = np.zeros((n_nodes, n_nodes), dtype=bool)
    for a, b in edges:
        reach[a, b] = True
    for k in range(n_nodes):
        reach |= reach[:, k:k + 1] & reach[k:k + 1, :]
    return {(int(a), int(b)) for a, b in zip(*np.nonzero(reach))}


def adjacency_reduction(edges, n_nodes: int | None = None) -> list[tuple[int, int]]:
    """Covering relation (transitive reduction) of an acyclic edge relation."""
    edges = [(int(a), int(b)) for a, b in edges]
    if not edges:
        return []
    n = n_nodes if n_nodes is not None else 1 + max(max(a, b) for a, b in edges)
    closure = transitive_closure(n, edges)
    if any(a == b for a, b in closure):
        raise InvariantViolation("edge relation has a cycle")
    succ = {}
    for a, b in closure:
        succ.setdefault(a, set()).add(b)
    return sorted((a, b) for a, b in closure if not any(b in succ.get(c, ()) for c in succ[a] if c != b))


def classify_top_bottom(node_ids, edges) -> dict[int, str]:
    has_in = {b for _, b in edges}
    has_out = {a for a, _ in edges}
    out = {}
    for n in node_ids:
        i, o = n in has_in, n in has_out
        out[n] = ISOLATED if not (i or o) else TOP if not i else BOTTOM if not o else SADDLE
    return out


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    strength: str = UNCLASSIFIED


@dataclass(frozen=True, eq=False)
class ChainGraph:
    grid: Grid
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    reduced_edges: tuple[tuple[int, int], ...]

    @property
    def edge_pairs(self) -> list[tuple[int, int]]:
        return [(e.src, e.dst) for e in self.edges]

    def node(self, nid: int) -> Node:
        return self.nodes[nid]

    def node_at(self, point) -> Node | None:
        """Node whose boxes contain ``point``."""
        b = self.grid.box_of(point)
        if b is None:
            return None
        for n in self.nodes:
            if np.any(n.boxes == b):
                return n
        return None

    def nearest_node(self, point) -> tuple[Node, float]:
        """Node with a box centre closest to ``point`` and that distance."""
        p = np.asarray(point, dtype=float)
        best, dist = None, np.inf
        for n in self.nodes:
            c = self.grid.centers(n.boxes)
            d = float(np.min(np.linalg.norm(c - p, axis=1)))
            if d < dist:
                best, dist = n, d
        return best, dist

    def with_strengths(self, strengths: dict[tuple[int, int], str]) -> "ChainGraph":
        edges = tuple(Edge(e.src, e.dst, strengths.get((e.src, e.dst), e.strength)) for e in self.edges)
        return ChainGraph(self.grid, self.nodes, edges, self.reduced_edges)

    def min_distances(self) -> dict[int, dict[int, float]]:
        """Pairwise minimum distance between node box unions."""
        out = {n.id: {} for n in self.nodes}
        for i, a in enumerate(self.nodes):
            for b in self.nodes[i + 1:]:
                d = set_distance(a.boxes, b.boxes, self.grid)
                out[a.id][b.id] = d
                out[b.id][a.id] = d
        return out


def chain_graph(bm: BoxMap, cond: Condensation | None = None, merge: bool = False) -> ChainGraph:
    """Assemble nodes, the full edge relation, its covering relation and annotations.

    :param merge: fold touching recurrent sets together first (see :func:`merge_touching`).
    """
    cond = cond or scc_condensation(bm)
    if merge:
        cond = merge_touching(bm, cond)
    nodes = recurrent_nodes(cond, bm)
    pairs = chain_edges(nodes, cond)
    reduced = adjacency_reduction(pairs, len(nodes))
    notes = classify_top_bottom([n.id for n in nodes], pairs)
    nodes = tuple(Node(n.id, n.boxes, n.representative_points, n.diameter, notes[n.id], n.scc) for n in nodes)
    return ChainGraph(bm.grid, nodes, tuple(Edge(a, b) for a, b in pairs), tuple(reduced))


@dataclass(frozen=True)
class Connectedness:
    connected: bool
    components: tuple[tuple[int, ...], ...]
    min_distance: float | None = None

    @property
    def verdict(self) -> str:
        return "Connected" if self.connected else "Disconnected"


def connectedness_check(graph: ChainGraph, grid: Grid | None = None) -> Connectedness:
    """Undirected connectivity of the node set under the chain edges.

    With finitely many nodes every bipartition is closed, so this decides
    graph connectedness at the computed resolution.  When disconnected, the
    smallest box distance between the first component and the rest is
    reported to flag near-touching nodes.
    """
    if not graph.nodes:
        raise GridError("connectedness of an empty graph is undefined")
    grid = grid or graph.grid
    n = len(graph.nodes)
    pairs = np.array(graph.edge_pairs, dtype=np.int64).reshape(-1, 2)
    adj = csr_matrix((np.ones(pairs.shape[0]), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    k, labels = connected_components(adj, directed=False)
    comps = tuple(tuple(int(i) for i in np.nonzero(labels == c)[0]) for c in range(k))
    if k == 1:
        return Connectedness(True, comps)
    first = np.concatenate([graph.nodes[i].boxes for i in comps[0]])
    rest = np.concatenate([graph.nodes[i].boxes for c in comps[1:] for i in c])
    return Connectedness(False, comps, set_distance(first, rest, grid))


# -- pruning and refinement -----------------------------------------------------------


def _reach(adj: csr_matrix, sources: np.ndarray) -> np.ndarray:
    """Boolean mask of vertices reachable from ``sources`` (sources included)."""
    n = adj.shape[0]
    if sources.size == 0:
        return np.zeros(n, dtype=bool)
    # virtual root n -> every source
    extra = csr_matrix((np.ones(sources.size, dtype=np.int8), (np.full(sources.size, n), sources)), shape=(n + 1, n + 1))
    big = csr_matrix((adj.data, adj.indices, np.concatenate([adj.indptr, [adj.indptr[-1]]])), shape=(n + 1, n + 1)) + extra
    order = breadth_first_order(big, n, directed=True, return_predecessors=False)
    mask = np.zeros(n + 1, dtype=bool)
    mask[order] = True
    return mask[:n]


def recurrent_mask(bm: BoxMap, cond: Condensation | None = None) -> np.ndarray:
    cond = cond or scc_condensation(bm)
    rec = recurrent_scc_ids(cond)
    return np.isin(cond.labels, rec)


def prune_to_chain_recurrent(bm: BoxMap, cond: Condensation | None = None) -> BoxMap:
    """Restrict to recurrent boxes plus boxes on paths between them."""
    cond = cond or scc_condensation(bm)
    rec = np.nonzero(recurrent_mask(bm, cond))[0]
    adj = bm.graph()
    fwd = _reach(adj, rec)
    bwd = _reach(adj.T.tocsr(), rec)
    return bm.restrict(bm.boxes[fwd & bwd])


@dataclass
class RefinementResult:
    box_map: BoxMap
    history: list[dict] = field(default_factory=list)
    stopped: str | None = None

    @property
    def complete(self) -> bool:
        return self.stopped is None


def refine(spec: SystemSpec, grid: Grid, sampling: SamplingConfig = SamplingConfig(), rounds: int = 1,
           boxes=None, dims=None, on_level=None, start: BoxMap | None = None) -> RefinementResult:
    """Prune to the chain-recurrent part, subdivide, rebuild; ``rounds`` times.

    Each round bisects every dimension in ``dims`` (default: all) once.  The
    returned map lives on the finest grid reached.  With ``sampling.max_edges``
    set, a round whose predicted size (children times the current successors
    per box) exceeds the budget is not attempted; the result then holds the
    last completed level and ``stopped`` says why.  ``start`` reuses an
    already built map on ``grid`` as the first level.
    """
    bm = start if start is not None else build_box_map(spec, grid, sampling, boxes)
    history = [_level_record(bm)]
    if on_level:
        on_level(bm)
    stopped = None
    for _ in range(rounds):
        kept = prune_to_chain_recurrent(bm)
        history[-1]["kept"] = kept.n
        if kept.n == 0:
            stopped = "nothing chain recurrent left to refine"
            break
        fine = grid.subdivide(dims)
        children = grid.children(kept.boxes, fine)
        if sampling.max_edges is not None:
            predicted = children.size * bm.n_edges / max(bm.n, 1)
            if predicted > sampling.max_edges:
                stopped = (f"edge budget: depth {list(fine.depth)} would need about {predicted:.3g} "
                           f"successor entries (limit {sampling.max_edges})")
                break
        try:
            nxt = build_box_map(spec, fine, sampling, children)
        except BudgetExceeded as exc:
            stopped = f"edge budget at depth {list(fine.depth)}: {exc}"
            break
        grid, bm = fine, nxt
        history.append(_level_record(bm))
        if on_level:
            on_level(bm)
    if stopped:
        log.warning("refinement stopped early: %s", stopped)
    return RefinementResult(bm, history, stopped)


def _level_record(bm: BoxMap) -> dict:
    return {"depth": list(bm.grid.depth), "boxes": bm.n, "edges": bm.n_edges, "escaped": int(bm.escaped.size)}
