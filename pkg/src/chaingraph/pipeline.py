"""End-to-end analysis: region grid, box map, chain graph, attractor, checks.

:func:`run` turns a :class:`~chaingraph.config.RunConfig` into a plain
report dictionary.  Everything in the report except the ``timings`` key is
a deterministic function of the configuration.
"""

from __future__ import annotations

import logging
import time

import numpy as np

from . import __version__
from .attractor import (
    AttractorApprox,
    connectedness_of_attractor,
    global_attractor_outer,
    invariant_part,
    time_T_graph_equality,
    verify_trapping,
)
from .boxmap import (
    UNCLASSIFIED,
    BoxMap,
    ChainGraph,
    build_box_map,
    chain_graph,
    connectedness_check,
    node_diameter,
    refine,
)
from .config import RunConfig, config_to_dict, region_grid, resolve_region
from .geometry import Box, Grid
from .oracle import ChainRelation, OracleInputError, PointCloud, classify_edge
from .systems import step_points

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
ORACLE_MAX_DIM = 2


def _f(x) -> float | None:
    """JSON-safe float: non-finite values become null."""
    x = float(x)
    return x if np.isfinite(x) else None


def _rounded(a, digits: int = 12) -> list:
    return np.round(np.asarray(a, dtype=float), digits).tolist()


def attractor_summary(approx: AttractorApprox, grid: Grid, candidate: bool) -> dict:
    boxes = approx.boxes
    out = {
        "candidate_only": candidate,
        "depth": list(approx.depth),
        "boxes": int(boxes.size),
        "iterations": approx.iterations,
        "converged": approx.converged,
    }
    if boxes.size:
        lows = grid.cell_lows(boxes)
        out.update({
            "diameter": _f(node_diameter(grid, boxes)),
            "connected": connectedness_of_attractor(approx, grid),
            "bounds": {"lo": _rounded(lows.min(axis=0)), "hi": _rounded((lows + grid.widths).max(axis=0))},
        })
    else:
        out.update({"diameter": None, "connected": False, "bounds": None})
    return out


def graph_dict(graph: ChainGraph, strengths: dict | None = None) -> dict:
    """Report form of a chain graph."""
    strengths = strengths or {}
    dists = graph.min_distances()
    grid = graph.grid
    nodes = []
    for n in graph.nodes:
        lows = grid.cell_lows(n.boxes)
        nodes.append({
            "id": n.id,
            "annotation": n.annotation,
            "boxes": n.size,
            "diameter": _f(n.diameter),
            "centroid": _rounded(n.centroid),
            "representative_points": _rounded(n.representative_points),
            "bounds": {"lo": _rounded(lows.min(axis=0)), "hi": _rounded((lows + grid.widths).max(axis=0))},
            "min_distance_to": {str(k): _f(v) for k, v in sorted(dists[n.id].items())},
        })
    edges = [{"from": a, "to": b, "strength": strengths.get((a, b), UNCLASSIFIED)} for a, b in graph.edge_pairs]
    reduced = [{"from": a, "to": b, "strength": strengths.get((a, b), UNCLASSIFIED)} for a, b in graph.reduced_edges]
    return {
        "depth": list(grid.depth),
        "box_widths": _rounded(grid.widths),
        "nodes": nodes,
        "edges": edges,
        "reduced_edges": reduced,
    }


def _attractor_on(bm: BoxMap, coarse: Grid, approx: AttractorApprox) -> np.ndarray:
    """Attractor boxes carried to the map's grid (children of coarse boxes, restricted to the domain)."""
    if tuple(bm.grid.depth) == tuple(coarse.depth):
        return np.intersect1d(approx.boxes, bm.boxes)
    parents = coarse.parents(bm.boxes, bm.grid)
    return bm.boxes[np.isin(parents, approx.boxes)]


def containment(graph: ChainGraph, coarse: Grid, approx: AttractorApprox) -> dict:
    """Every node box lies in (a child of) an attractor box."""
    if not graph.nodes:
        return {"holds": True, "outside_boxes": 0}
    boxes = np.concatenate([n.boxes for n in graph.nodes])
    parents = coarse.parents(boxes, graph.grid) if tuple(graph.grid.depth) != tuple(coarse.depth) else boxes
    outside = int(np.count_nonzero(~np.isin(parents, approx.boxes)))
    return {"holds": outside == 0, "outside_boxes": outside}


MAX_CLASSIFIED_EDGES = 64


def classify_all(cfg: RunConfig, bm: BoxMap, graph: ChainGraph, attractor_boxes: np.ndarray) -> tuple[dict, list]:
    """Classify every edge, or none (with a note) when there are more than :data:`MAX_CLASSIFIED_EDGES`."""
    strengths, details = {}, []
    if len(graph.edge_pairs) > MAX_CLASSIFIED_EDGES:
        log.warning("skipping edge classification: %d edges", len(graph.edge_pairs))
        return strengths, [{"skipped": f"{len(graph.edge_pairs)} edges exceed the limit of {MAX_CLASSIFIED_EDGES}"}]
    for k, (a, b) in enumerate(graph.edge_pairs):
        res = classify_edge(cfg.system, bm, attractor_boxes, graph.nodes[a], graph.nodes[b], graph.nodes,
                            budget=tuple(cfg.classify_budget), seed=cfg.sampling.seed + k)
        strengths[(a, b)] = res.label
        details.append({"from": a, "to": b, **res.as_dict()})
    return strengths, details


def _node_lookup(graph: ChainGraph) -> tuple[np.ndarray, np.ndarray]:
    boxes = np.concatenate([n.boxes for n in graph.nodes]) if graph.nodes else np.zeros(0, dtype=np.int64)
    ids = np.concatenate([np.full(n.size, n.id) for n in graph.nodes]) if graph.nodes else np.zeros(0, dtype=np.int64)
    order = np.argsort(boxes)
    return boxes[order], ids[order]


def node_of_points(graph: ChainGraph, points) -> np.ndarray:
    """Node id containing each point, -1 where none does."""
    boxes, ids = _node_lookup(graph)
    b = graph.grid.boxes_of(np.asarray(points, dtype=float).reshape(-1, graph.grid.dim))
    if boxes.size == 0:
        return np.full(b.shape, -1)
    pos = np.minimum(np.searchsorted(boxes, b), boxes.size - 1)
    return np.where((b >= 0) & (boxes[pos] == b), ids[pos], -1)


def oracle_agreement(cfg: RunConfig, graph: ChainGraph, bounds_lo, bounds_hi, n_pairs: int, seed: int,
                     spacing_factor: float = 0.5, eps_factor: float = 3.0) -> dict:
    """Compare box-map node membership with lattice epsilon-chain recurrence on random lattice-point pairs.

    The lattice spacing is half the box width and eps three spacings.  Two
    distinct lattice points are "together" for the box map when they lie in
    the same node, and for the oracle when they are mutually downstream
    (recurrent and in one strongly connected class of the eps relation).
    Besides the uniform rate, the rate over pairs where either side says
    "together" is reported, since uniform pairs are mostly trivial.
    """
    grid = graph.grid
    spacing = spacing_factor * float(grid.widths.min())
    eps = eps_factor * spacing
    try:
        cloud = PointCloud.lattice(Box(tuple(bounds_lo), tuple(bounds_hi)), spacing, grid.periodic)
    except OracleInputError as exc:
        return {"skipped": str(exc)}
    rel = ChainRelation(cloud, cfg.system, eps)
    rng = np.random.default_rng(seed)
    m = cloud.points.shape[0]
    i = rng.integers(0, m, n_pairs)
    j = (i + rng.integers(1, m, n_pairs)) % m  # j != i
    nid = node_of_points(graph, cloud.points)
    box_same = (nid[i] >= 0) & (nid[i] == nid[j])
    labels, rec = rel.scc_labels, rel.recurrent
    oracle_same = rec[i] & rec[j] & (labels[i] == labels[j])
    agree = box_same == oracle_same
    # every lattice pair, summarised by class sizes
    together_box = _pair_count(nid[nid >= 0])
    together_oracle = _pair_count(labels[rec])
    both = _pair_count(nid[(nid >= 0) & rec] * (labels.max() + 1) + labels[(nid >= 0) & rec])
    return {
        "pairs": int(n_pairs),
        "lattice_points": int(m),
        "spacing": spacing,
        "eps": eps,
        "agreement": float(agree.mean()),
        "disagreements": int(np.count_nonzero(~agree)),
        "box_only": int(np.count_nonzero(box_same & ~oracle_same)),
        "oracle_only": int(np.count_nonzero(~box_same & oracle_same)),
        "exhaustive": {
            "together_box": together_box,
            "together_oracle": together_oracle,
            "together_both": both,
            "jaccard": both / (together_box + together_oracle - both) if together_box + together_oracle - both else 1.0,
        },
    }


def _pair_count(labels) -> int:
    """Number of unordered pairs of distinct items sharing a label."""
    if len(labels) == 0:
        return 0
    c = np.unique(labels, return_counts=True)[1].astype(np.int64)
    return int(np.sum(c * (c - 1) // 2))


def soundness_sample(cfg: RunConfig, bm: BoxMap, n: int, seed: int) -> dict:
    """Fraction of random domain points whose image cell is listed as a successor of their cell."""
    rng = np.random.default_rng(seed)
    grid = bm.grid
    boxes = bm.boxes[rng.integers(0, bm.n, n)]
    X = grid.cell_lows(boxes) + rng.random((n, grid.dim)) * grid.widths
    Y, ok = step_points(cfg.system, X)
    esc = np.isin(boxes, bm.escaped)
    target = grid.boxes_of(np.where(ok[:, None], Y, grid.lo))
    covered = np.zeros(n, dtype=bool)
    for k in range(n):
        if not ok[k] or esc[k] or target[k] < 0:
            covered[k] = True  # escaping or leaving the grid is reported by the escape flag
            continue
        covered[k] = bool(np.isin(target[k], bm.successors(int(boxes[k]))))
    return {"samples": n, "covered": float(covered.mean())}


def run(cfg: RunConfig) -> dict:
    """Execute the full analysis for one configuration and return the report."""
    return run_with_graph(cfg)[0]


def run_with_graph(cfg: RunConfig) -> tuple[dict, ChainGraph | None]:
    """:func:`run`, also returning the chain graph object (None when halted)."""
    timings = {}
    t_all = time.perf_counter()
    spec = cfg.system
    region = resolve_region(cfg.region, spec)
    grid0, region_boxes = region_grid(region, spec, cfg.initial_depth)

    t = time.perf_counter()
    bm0 = build_box_map(spec, grid0, cfg.sampling, region_boxes)
    timings["initial_box_map"] = time.perf_counter() - t

    t = time.perf_counter()
    verdict = verify_trapping(bm0, region_boxes)
    trapped = verdict.forward_invariant
    approx = global_attractor_outer(bm0, region_boxes, verdict=verdict) if trapped else invariant_part(bm0, region_boxes)
    timings["attractor"] = time.perf_counter() - t

    report = {
        "schema_version": SCHEMA_VERSION,
        "generator": {"package": "chaingraph", "version": __version__},
        "config": config_to_dict(cfg),
        "trapping": {**verdict.as_dict(), "depth": list(grid0.depth),
                     "status": "verified" if trapped else "failed"},
        "attractor": attractor_summary(approx, grid0, candidate=not trapped),
        "halted": False,
        "refinement": None,
        "graph": None,
        "theorems": None,
        "edge_classification": None,
        "validation": None,
    }
    if not trapped and cfg.trapping == "required":
        report["halted"] = True
        report["timings"] = {**timings, "total": time.perf_counter() - t_all}
        return report, None

    t = time.perf_counter()
    rounds = max(0, min(cfg.refinement_rounds, cfg.max_depth - cfg.initial_depth))
    ref = refine(spec, grid0, cfg.sampling, rounds=rounds, start=bm0)
    bm = ref.box_map
    timings["refinement"] = time.perf_counter() - t
    report["refinement"] = {"levels": ref.history, "complete": ref.complete, "stopped": ref.stopped,
                            "requested_depth": cfg.final_depth, "final_depth": list(bm.grid.depth)}

    t = time.perf_counter()
    graph = chain_graph(bm, merge=cfg.merge_touching)
    timings["chain_graph"] = time.perf_counter() - t
    attractor_boxes = _attractor_on(bm, grid0, approx)

    strengths = {}
    if cfg.classify_edges and graph.edges:
        t = time.perf_counter()
        strengths, details = classify_all(cfg, bm, graph, attractor_boxes)
        report["edge_classification"] = details
        timings["edge_classification"] = time.perf_counter() - t

    t = time.perf_counter()
    report["graph"] = {**graph_dict(graph, strengths), "escaped_boxes": int(bm.escaped.size)}
    theorems = {}
    if graph.nodes:
        conn = connectedness_check(graph)
        theorems["connectedness"] = {"verdict": conn.verdict, "components": [list(c) for c in conn.components],
                                     "min_distance": _f(conn.min_distance) if conn.min_distance is not None else None}
    else:
        theorems["connectedness"] = {"verdict": "Empty", "components": [], "min_distance": None}
    theorems["nodes_in_attractor"] = {**containment(graph, grid0, approx), "attractor_verified": trapped}
    theorems["time_T"] = None
    timings["checks"] = time.perf_counter() - t
    if cfg.compare_T is not None:
        t = time.perf_counter()
        if spec.entry.flow:
            cmp = time_T_graph_equality(spec, cfg.compare_T[0], cfg.compare_T[1], bm.grid, bm.boxes, cfg.sampling,
                                            merge=cfg.merge_touching)
            theorems["time_T"] = {k: v for k, v in cmp.items() if k != "scores"}
        else:
            theorems["time_T"] = {"skipped": "time-T comparison applies to flows only"}
        timings["time_T"] = time.perf_counter() - t
    report["theorems"] = theorems

    if cfg.oracle_enabled:
        t = time.perf_counter()
        report["validation"] = validate_graph(cfg, bm, graph, region)
        timings["validation"] = time.perf_counter() - t
    report["timings"] = {**timings, "total": time.perf_counter() - t_all}
    return report, graph


def validate_graph(cfg: RunConfig, bm: BoxMap, graph: ChainGraph, region) -> dict:
    out = {"soundness": soundness_sample(cfg, bm, 2000, cfg.sampling.seed)}
    if bm.grid.dim > ORACLE_MAX_DIM:
        out["agreement"] = {"skipped": f"lattice oracle is limited to dimension <= {ORACLE_MAX_DIM}"}
    elif not graph.nodes:
        out["agreement"] = {"skipped": "graph has no nodes"}
    else:
        out["agreement"] = oracle_agreement(cfg, graph, np.asarray(region.lo), np.asarray(region.hi),
                                            cfg.oracle_pairs, cfg.sampling.seed)
    return out

