"""Report, DOT and box-list writers."""

from __future__ import annotations

import json
import math

import jsonschema
import numpy as np

from .boxmap import BOTTOM, ISOLATED, SADDLE, TOP, WEAK_CANDIDATE, ChainGraph
from .config import ConfigError, parse_config
from .geometry import Grid

SHAPES = {TOP: "circle", BOTTOM: "square", SADDLE: "diamond", ISOLATED: "doublecircle"}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "config", "trapping", "attractor", "halted", "graph", "theorems", "validation"],
    "properties": {
        "schema_version": {"type": "string", "pattern": r"^\d+\.\d+$"},
        "config": {"type": "object"},
        "trapping": {"type": "object", "required": ["forward_invariant", "status"]},
        "attractor": {"type": "object", "required": ["boxes", "connected", "diameter"]},
        "halted": {"type": "boolean"},
        "graph": {
            "type": ["object", "null"],
            "required": ["nodes", "edges", "reduced_edges"],
            "properties": {
                "nodes": {"type": "array", "items": {
                    "type": "object",
                    "required": ["id", "annotation", "boxes", "representative_points", "min_distance_to"]}},
                "edges": {"type": "array", "items": {"type": "object", "required": ["from", "to", "strength"]}},
                "reduced_edges": {"type": "array"},
            },
        },
        "theorems": {"type": ["object", "null"]},
        "validation": {"type": ["object", "null"]},
        "timings": {"type": "object"},
    },
}


def export_report(report: dict) -> str:
    """Stable JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"


def parse_report(text: str) -> dict:
    """Decode and validate a report; its embedded configuration must parse too."""
    try:
        report = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    errors = sorted(jsonschema.Draft202012Validator(REPORT_SCHEMA).iter_errors(report),
                    key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(err.message, "".join(f"/{p}" for p in err.absolute_path))
    parse_config(report["config"])
    return report


def deterministic_part(report: dict) -> dict:
    """The report without its timings."""
    return {k: v for k, v in report.items() if k != "timings"}


def _graph_view(graph) -> dict:
    if isinstance(graph, ChainGraph):
        from .pipeline import graph_dict
        return graph_dict(graph)
    return graph


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def export_dot(graph, reduced: bool = False, name: str = "chaingraph") -> str:
    """DOT digraph of a chain graph (a :class:`ChainGraph` or a report's ``graph`` entry).

    Shapes follow the node annotation; edges are solid unless classified as
    weak candidates, which are dashed.  ``reduced`` draws only the covering
    edges.
    """
    g = _graph_view(graph)
    nodes = sorted(g["nodes"], key=lambda n: n["id"])
    edges = g["reduced_edges"] if reduced else g["edges"]
    strength = {(e["from"], e["to"]): e["strength"] for e in g["edges"]}
    edges = sorted(((e["from"], e["to"]) for e in edges))
    lines = [f"digraph {_ident(name)} {{"]
    n = len(nodes)
    if n > 1:
        comps = _components(n, [(a, b) for a, b in strength])
        if comps > 1:
            lines.append(f"  // warning: chain graph is disconnected ({comps} components)")
    lines.append('  node [fontname="Helvetica"];')
    for node in nodes:
        shape = SHAPES.get(node["annotation"], "ellipse")
        c = node.get("centroid") or np.mean(node["representative_points"], axis=0).tolist()
        label = f"N{node['id']}\\n({', '.join(_fmt(v) for v in c)})\\n{node['boxes']} boxes"
        lines.append(f'  n{node["id"]} [shape={shape}, label="{label}"];')
    for a, b in edges:
        style = "dashed" if strength.get((a, b)) == WEAK_CANDIDATE else "solid"
        lines.append(f"  n{a} -> n{b} [style={style}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def _ident(name: str) -> str:
    safe = "".join(ch if ch.isalnum() or ch == "_" else "_" for ch in name)
    return safe if safe and not safe[0].isdigit() else f"g_{safe}"


def _components(n: int, pairs) -> int:
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in pairs:
        parent[find(a)] = find(b)
    return len({find(i) for i in range(n)})


def export_boxlist(graph: ChainGraph) -> str:
    """Plain-text node boxes: one ``lo hi`` pair per dimension per line, grouped under ``# node`` comments."""
    grid = graph.grid
    out = [f"# depth {' '.join(map(str, grid.depth))}"]
    for node in graph.nodes:
        out.append(f"# node {node.id} {node.annotation}")
        out.extend(_box_lines(grid, node.boxes))
    return "\n".join(out) + "\n"


def _box_lines(grid: Grid, boxes) -> list[str]:
    lows = grid.cell_lows(np.asarray(boxes))
    highs = lows + grid.widths
    lines = []
    for lo, hi in zip(lows, highs):
        lines.append(" ".join(f"{a!r} {b!r}" for a, b in zip(lo.tolist(), hi.tolist())))
    return lines


def read_boxlist(text: str) -> np.ndarray:
    """Inverse of the box-list format: ``(n, d, 2)`` array of lo/hi pairs."""
    rows = [list(map(float, line.split())) for line in text.splitlines() if line.strip() and not line.startswith("#")]
    if not rows:
        return np.zeros((0, 0, 2))
    arr = np.array(rows)
    if arr.shape[1] % 2:
        raise ValueError("each line needs a lo/hi pair per dimension")
    return arr.reshape(arr.shape[0], -1, 2)


def is_finite_json(value) -> bool:
    if isinstance(value, float):
        return math.isfinite(value)
    if isinstance(value, dict):
        return all(is_finite_json(v) for v in value.values())
    if isinstance(value, list):
        return all(is_finite_json(v) for v in value)
    return True
