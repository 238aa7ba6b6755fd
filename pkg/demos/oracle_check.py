"""Compare the box-map graph of x' = x - x^3 with point-level epsilon-chains.

The box pipeline gives three nodes: the repelling origin and the two sinks at
+-1. The oracle then asks, on point lattices that get finer as epsilon shrinks,
which of these points chain to which. Chains from 0 reach +-1 at every scale.
A sink never chains back to the origin or across to the other sink, because
each jump of size epsilon is pulled back toward the sink before the next.
"""

import numpy as np

from chaingraph import PointCloud, downstream_oracle, preset_config, run_with_graph
from chaingraph.config import resolve_region
from chaingraph.geometry import Box

cfg = preset_config("cubic-ode", 10)
report, graph = run_with_graph(cfg)
print("box-map nodes:")
for node in report["graph"]["nodes"]:
    print(f"  {node['id']}: {node['annotation']:<7} centroid {node['centroid'][0]:+.4f}")
print("edges:", [(e["from"], e["to"], e["strength"]) for e in report["graph"]["edges"]])

region = resolve_region(cfg.region, cfg.system)
cloud = PointCloud.lattice(Box(np.array(region.lo), np.array(region.hi)), 0.01)
for x, y in [(0.0, 1.0), (0.0, -1.0), (1.0, -1.0), (1.0, 0.0)]:
    v = downstream_oracle(cloud, cfg.system, [x], [y], schedule=(0.4, 0.2, 0.1, 0.05))
    scales = " ".join(f"{e}:{'y' if ok else 'n'}" for e, ok in v.per_eps)
    print(f"{x:+.0f} -> {y:+.0f}: {v.summary:<15} ({scales})")
