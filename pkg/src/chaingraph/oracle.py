"""Brute-force epsilon-chain machinery on explicit point sets.

This is the independent check on the box-map pipeline: chains are built
point by point from the relation ``p -> q  iff  |F(p) - q| < eps`` on a
lattice, with no boxes, hulls or bloating involved.  The module also holds
limit-set estimates and the strong / weak-candidate edge classifier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components, shortest_path
from scipy.spatial import cKDTree

from .boxmap import BoxMap, Node, STRONG, WEAK_CANDIDATE
from .geometry import Box, Grid, GridError, dilate
from .systems import Escape, SystemInputError, SystemSpec, flow_time_T, lipschitz_estimate, step_points

DEFAULT_SCHEDULE = (0.1, 0.05, 0.025, 0.0125)
LATTICE_BUDGET = 1_000_000

DOWNSTREAM, NOT_DOWNSTREAM, INCONCLUSIVE = "Downstream", "NotDownstream", "Inconclusive"
LIMIT, TRAJECTORY, BOTH, NEITHER = "Limit", "Trajectory", "Both", "Neither"


class OracleInputError(ValueError):
    """Invalid oracle query (resolution too coarse, empty cloud, budget exceeded)."""


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Points of a compact set K with a nominal spacing."""

    points: np.ndarray
    spacing: float
    bounds: Box
    periodic: tuple[bool, ...] = ()

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] == 0:
            raise OracleInputError("point cloud is empty")
        if not self.spacing > 0:
            raise OracleInputError("spacing must be positive")
        lo, hi = np.asarray(self.bounds.lo), np.asarray(self.bounds.hi)
        if np.any(pts < lo - 1e-12) or np.any(pts > hi + 1e-12):
            raise OracleInputError("cloud points must lie inside K")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "periodic", tuple(self.periodic or ()) or (False,) * pts.shape[1])

    @classmethod
    def lattice(cls, bounds: Box, spacing: float, periodic=None, budget: int = LATTICE_BUDGET) -> "PointCloud":
        """Uniform lattice over ``bounds`` whose step does not exceed ``spacing``."""
        lo, hi = np.asarray(bounds.lo), np.asarray(bounds.hi)
        periodic = tuple(periodic) if periodic is not None else (False,) * bounds.dim
        axes = []
        for a, b, p in zip(lo, hi, periodic):
            n = max(1, math.ceil((b - a) / spacing - 1e-9))
            axes.append(np.linspace(a, b, n, endpoint=False) if p else np.linspace(a, b, n + 1))
        size = int(np.prod([len(x) for x in axes]))
        if size > budget:
            raise OracleInputError(f"lattice of {size} points exceeds the budget of {budget}")
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
        return cls(pts, spacing, bounds, periodic)

    @classmethod
    def random(cls, bounds: Box, n: int, seed: int = 0, periodic=None) -> "PointCloud":
        rng = np.random.default_rng(seed)
        lo, hi = np.asarray(bounds.lo), np.asarray(bounds.hi)
        pts = lo + rng.random((n, bounds.dim)) * (hi - lo)
        spacing = float(np.prod(hi - lo) / n) ** (1 / bounds.dim)
        return cls(pts, spacing, bounds, periodic)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def refined(self, spacing: float) -> "PointCloud":
        return PointCloud.lattice(self.bounds, spacing, self.periodic)

    @cached_property
    def _tree(self) -> cKDTree:
        lo = np.asarray(self.bounds.lo)
        span = np.asarray(self.bounds.hi) - lo
        # non-periodic axes get a box so wide that nothing wraps
        box = np.where(self.periodic, span, 4 * span + 1.0)
        shifted = self._shift(self.points)
        return cKDTree(shifted, boxsize=box)

    def _shift(self, pts) -> np.ndarray:
        lo = np.asarray(self.bounds.lo)
        span = np.asarray(self.bounds.hi) - lo
        rel = np.atleast_2d(pts) - lo
        per = np.asarray(self.periodic)
        rel[:, per] = np.mod(rel[:, per], span[per])
        rel[:, ~per] += 1.5 * span[~per] + 0.5  # centre of the wide box
        return rel

    def snap(self, x) -> int:
        """Index of the cloud point nearest to ``x``."""
        return int(self._tree.query(self._shift(np.asarray(x, dtype=float).reshape(1, -1)))[1][0])

    def neighbours_within(self, pts, radius: float):
        """Cloud indices strictly within ``radius`` of each point (lists)."""
        pts = np.atleast_2d(pts)
        per = np.asarray(self.periodic)
        lo, hi = np.asarray(self.bounds.lo), np.asarray(self.bounds.hi)
        # points far outside K cannot have neighbours; keep them out of the wide box
        far = np.any(~per & ((pts < lo - 2 * radius) | (pts > hi + 2 * radius)), axis=1)
        out = [[] for _ in range(pts.shape[0])]
        ok = np.nonzero(~far & np.all(np.isfinite(pts), axis=1))[0]
        if ok.size:
            hits = self._tree.query_ball_point(self._shift(pts[ok]), np.nextafter(radius, 0))
            for i, h in zip(ok, hits):
                out[i] = h
        return out


class ChainRelation:
    """The directed graph ``p -> q iff |F(p) - q| < eps`` on a point cloud."""

    def __init__(self, cloud: PointCloud, spec: SystemSpec, eps: float):
        if not eps > cloud.spacing:
            raise OracleInputError(
                f"eps={eps} must exceed the cloud spacing {cloud.spacing}; "
                "a coarser lattice cannot realise chains at this scale")
        if cloud.dim != spec.dim:
            raise OracleInputError("cloud dimension does not match the system")
        self.cloud, self.spec, self.eps = cloud, spec, eps
        images, ok = step_points(spec, cloud.points)
        images = np.where(ok[:, None], images, np.nan)
        lists = cloud.neighbours_within(images, eps)
        lengths = np.array([len(l) for l in lists])
        indptr = np.concatenate([[0], np.cumsum(lengths)])
        indices = np.fromiter((j for l in lists for j in sorted(l)), dtype=np.int64, count=int(indptr[-1]))
        n = cloud.points.shape[0]
        self.images = images
        self.matrix = csr_matrix((np.ones(indices.size, dtype=np.int8), indices, indptr), shape=(n, n))

    @cached_property
    def scc_labels(self) -> np.ndarray:
        return connected_components(self.matrix, directed=True, connection="strong")[1]

    @cached_property
    def recurrent(self) -> np.ndarray:
        """Points with a chain of length >= 2 back to themselves."""
        labels = self.scc_labels
        sizes = np.bincount(labels)
        loops = self.matrix.diagonal() > 0
        return (sizes[labels] > 1) | loops

    def reach(self, i: int) -> np.ndarray:
        """Boolean mask of points ending some chain of length >= 2 from point ``i``."""
        n = self.matrix.shape[0]
        first = self.matrix.indices[self.matrix.indptr[i]:self.matrix.indptr[i + 1]]
        mask = np.zeros(n, dtype=bool)
        for j in first:
            if mask[j]:
                continue
            mask[breadth_first_order(self.matrix, j, directed=True, return_predecessors=False)] = True
        return mask

    def chain_exists(self, i: int, j: int) -> bool:
        return bool(self.reach(i)[j])

    def min_chain_steps(self, i: int, j: int) -> float:
        """Fewest relation steps from ``i`` to ``j`` (at least one), ``inf`` if none."""
        d = shortest_path(self.matrix, directed=True, unweighted=True, indices=i)
        if i != j:
            return float(d[j])
        first = self.matrix.indices[self.matrix.indptr[i]:self.matrix.indptr[i + 1]]
        if first.size == 0:
            return float("inf")
        back = shortest_path(self.matrix, directed=True, unweighted=True, indices=first)[:, i]
        return float(1 + back.min())

    def mutually_downstream(self, i: int, j: int) -> bool:
        if i == j:
            return True
        return bool(self.scc_labels[i] == self.scc_labels[j] and self.recurrent[i])


def epsilon_chain_exists(cloud: PointCloud, spec: SystemSpec, x, y, eps: float) -> bool:
    """Is there an eps-chain (length >= 2) in the cloud from x to y?  Endpoints are snapped."""
    rel = ChainRelation(cloud, spec, eps)
    return rel.chain_exists(cloud.snap(x), cloud.snap(y))


@dataclass(frozen=True)
class DownstreamVerdict:
    per_eps: tuple[tuple[float, bool], ...]
    summary: str


def _check_schedule(schedule) -> tuple[float, ...]:
    schedule = tuple(float(e) for e in schedule)
    if not schedule or any(b >= a for a, b in zip(schedule, schedule[1:])) or schedule[-1] <= 0:
        raise OracleInputError("eps schedule must be positive and strictly decreasing")
    return schedule


def summarize(results) -> str:
    """Downstream if every scale chains; Inconclusive if a finer scale chains after a coarser one failed."""
    results = list(results)
    if all(results):
        return DOWNSTREAM
    first_fail = results.index(False)
    if any(results[first_fail:]):
        return INCONCLUSIVE
    return NOT_DOWNSTREAM


def downstream_oracle(cloud: PointCloud, spec: SystemSpec, x, y, schedule=DEFAULT_SCHEDULE,
                      spacing_ratio: float = 5.0) -> DownstreamVerdict:
    """Chain existence over a decreasing eps schedule, re-gridding at spacing eps/ratio."""
    schedule = _check_schedule(schedule)
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if np.array_equal(x, y):
        return DownstreamVerdict(tuple((e, True) for e in schedule), DOWNSTREAM)
    out = []
    for eps in schedule:
        c = cloud.refined(eps / spacing_ratio)
        out.append((eps, epsilon_chain_exists(c, spec, x, y, eps)))
    return DownstreamVerdict(tuple(out), summarize(r for _, r in out))


# -- limit sets -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LimitSetEstimate:
    kind: str
    points: np.ndarray
    burn_in: int
    samples: int
    boxes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def iterate(spec: SystemSpec, x, n: int) -> np.ndarray:
    """``n`` steps from each row of ``x`` (batched); raises Escape with the failing step."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    traj = np.empty((n + 1,) + X.shape)
    traj[0] = X
    for k in range(n):
        X, ok = step_points(spec, X)
        if not ok.all():
            err = Escape(f"trajectory escaped at step {k + 1}", time=k + 1)
            err.step = k + 1
            raise err
        traj[k + 1] = X
    return traj


def omega_limit(spec: SystemSpec, x, burn_in: int, samples: int, grid: Grid | None = None) -> LimitSetEstimate:
    """Forward limit set estimate: states after ``burn_in`` steps, clustered into grid boxes."""
    if samples < 1:
        raise OracleInputError("samples must be at least 1")
    traj = iterate(spec, x, burn_in + samples)[burn_in + 1:, 0, :]
    boxes = np.zeros(0, dtype=np.int64)
    if grid is not None:
        b = grid.boxes_of(traj)
        boxes = np.unique(b[b >= 0])
    return LimitSetEstimate("Omega", traj, burn_in, samples, boxes)


def alpha_reachability(bm: BoxMap, attractor, target_box: int, blocked=None) -> np.ndarray:
    """Attractor boxes from which ``target_box`` is reachable inside the attractor.

    ``blocked`` boxes are removed from the graph first (they may still be the
    target itself).
    """
    attractor = np.unique(np.asarray(attractor, dtype=np.int64))
    if not np.isin(target_box, attractor):
        raise OracleInputError(f"target box {target_box} is not in the attractor")
    keep = attractor
    if blocked is not None:
        keep = np.union1d(np.setdiff1d(attractor, blocked), [target_box])
    sub = bm.restrict(keep)
    rev = sub.graph().T.tocsr()
    start = int(sub.positions(np.int64(target_box)))
    order = breadth_first_order(rev, start, directed=True, return_predecessors=False)
    return sub.boxes[np.sort(order)]


# -- edge classification ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EdgeStrength:
    label: str
    witness: dict | None
    search_budget: tuple[int, int]
    seeds_tried: int = 0
    note: str = ""

    def as_dict(self) -> dict:
        w = None
        if self.witness is not None:
            w = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.witness.items() if k != "trajectory"}
        return {"label": self.label, "search_budget": list(self.search_budget), "seeds_tried": self.seeds_tried,
                "witness": w, "note": self.note}


def collar_boxes(node: Node, grid: Grid, within=None) -> np.ndarray:
    """One-box layer around a node, optionally restricted to ``within``."""
    ring = np.setdiff1d(dilate(node.boxes, grid), node.boxes)
    if within is not None:
        ring = np.intersect1d(ring, within)
    return ring


def classify_edge(spec: SystemSpec, bm: BoxMap, attractor, A: Node, B: Node, nodes=(),
                  budget: tuple[int, int] = (10_000, 1_000), tail: int = 50, batch: int = 10_000,
                  seed: int = 0, probe: int = 256) -> EdgeStrength:
    """Search for a trajectory leaving A whose forward limit lies in B.

    Seeds are uniform points in the box collar around A (inside the
    attractor enclosure).  A seed is a witness when its last ``tail`` iterates
    all sit in B's boxes and its seed box can be reached backwards from A
    without passing through any other node.  Failing that after the whole
    budget gives WeakCandidate, which is not a proof that the edge is weak.

    :param batch: seeds iterated together after the first ``probe`` seeds;
        a small probe keeps expensive maps cheap when a witness is easy to find.
    """
    grid = bm.grid
    n_seeds, n_iter = budget
    attractor = np.unique(np.asarray(attractor, dtype=np.int64))
    collar = collar_boxes(A, grid, attractor)
    others = [n.boxes for n in nodes if n.id not in (A.id, B.id)]
    blocked = np.concatenate(others) if others else np.zeros(0, dtype=np.int64)
    usable = []
    for b in collar:
        if np.isin(b, blocked):
            continue
        back = alpha_reachability(bm, attractor, int(b), blocked)
        if np.intersect1d(back, A.boxes).size:
            usable.append(b)
    usable = np.array(usable, dtype=np.int64)
    if usable.size == 0:
        return EdgeStrength(WEAK_CANDIDATE, None, budget, 0, "no collar box is reached from A avoiding other nodes")
    rng = np.random.default_rng(seed)
    tail = max(1, min(tail, n_iter))
    b_sorted = np.sort(B.boxes)
    tried = 0
    while tried < n_seeds:
        m = min(probe if tried == 0 and probe > 0 else batch, n_seeds - tried)
        seed_boxes = usable[rng.integers(0, usable.size, m)]
        X = grid.cell_lows(seed_boxes) + rng.random((m, grid.dim)) * grid.widths
        X0 = X.copy()
        alive = np.ones(m, dtype=bool)
        streak = np.zeros(m, dtype=np.int64)
        for k in range(n_iter):
            idx = np.nonzero(alive)[0]
            if idx.size == 0:
                break
            Y, ok = step_points(spec, X[idx])
            X[idx] = Y
            alive[idx[~ok]] = False
            boxes = grid.boxes_of(Y)
            inside = ok & (boxes >= 0)
            pos = np.searchsorted(b_sorted, boxes)
            inB = inside & (pos < b_sorted.size) & (b_sorted[np.minimum(pos, b_sorted.size - 1)] == boxes)
            streak[idx] = np.where(inB, streak[idx] + 1, 0)
            done = np.nonzero(streak >= tail)[0]
            if done.size:
                w = int(done[0])
                steps = k + 1
                traj = iterate(spec, X0[w], steps)[:, 0, :]
                witness = {"seed_point": X0[w], "seed_box": int(seed_boxes[w]), "iterations": steps,
                           "tail": tail, "trajectory": traj}
                return EdgeStrength(STRONG, witness, budget, tried + w + 1)
        tried += m
    return EdgeStrength(WEAK_CANDIDATE, None, budget, tried, "no witness within the search budget")


def replay_witness(spec: SystemSpec, grid: Grid, witness: dict, B: Node) -> bool:
    """Re-run a stored witness and check its last ``tail`` iterates are in B."""
    traj = iterate(spec, witness["seed_point"], witness["iterations"])[:, 0, :]
    boxes = grid.boxes_of(traj[-witness["tail"]:])
    return bool(np.all(np.isin(boxes, B.boxes)))


# -- flows: steering chains ---------------------------------------------------------------


def gronwall_budget(eps: float, L: float) -> float:
    """Disturbance allowed per unit time so that the perturbed path stays eps-close."""
    return eps * math.exp(-L)


def perturbed_flow_chain(spec: SystemSpec, x, y, eps: float, L_estimate: float, T: float = 100.0) -> bool:
    """Steer from x toward y with corrections of size eps*exp(-L) once per unit time.

    Each unit-time segment starts with an instantaneous correction toward
    ``y`` no larger than the Gronwall budget and then follows the flow.
    Returns True when a segment end lands within ``eps`` of ``y``.
    """
    if not spec.entry.flow:
        raise SystemInputError("steering chains need a flow")
    z = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if np.array_equal(z, y):
        return True
    kick = gronwall_budget(eps, L_estimate)
    for _ in range(int(math.ceil(T))):
        gap = y - z
        dist = float(np.linalg.norm(gap))
        if dist > 0:
            z = z + gap * min(1.0, kick / dist)
        try:
            z = flow_time_T(spec, z, 1.0)
        except Escape:
            return False
        if np.linalg.norm(z - y) < eps:
            return True
    return False


def chain_point_kind(cloud: PointCloud, spec: SystemSpec, x, y, schedule=DEFAULT_SCHEDULE,
                     spacing_ratio: float = 5.0, step_time: float = 1.0) -> tuple[str, list[float]]:
    """Heuristic limit / trajectory chain-point label from minimal chain lengths.

    Bounded minimal chain time across the schedule means a trajectory chain
    point; growth means a limit chain point.  When ``y`` is itself
    chain recurrent at every scale, chains can be padded to any length, so a
    bounded case is labelled Both.
    """
    verdict = downstream_oracle(cloud, spec, x, y, schedule, spacing_ratio)
    if verdict.summary != DOWNSTREAM:
        raise OracleInputError(f"y is not downstream from x ({verdict.summary})")
    lengths, recurrent = [], []
    for eps in _check_schedule(schedule):
        c = cloud.refined(eps / spacing_ratio)
        rel = ChainRelation(c, spec, eps)
        i, j = c.snap(x), c.snap(y)
        lengths.append(rel.min_chain_steps(i, j) * step_time)
        recurrent.append(bool(rel.recurrent[j]))
    growing = lengths[-1] > lengths[0]
    if growing:
        return LIMIT, lengths
    if all(recurrent):
        return BOTH, lengths
    return TRAJECTORY, lengths


def steering_lipschitz(spec: SystemSpec, center, radius: float, seed: int = 0) -> float:
    return lipschitz_estimate(spec, center, radius, seed=seed)
