"""Forced damped pendulum, stroboscopic map at a coarse depth.

The full run needs several minutes and a few GB, so this script stops at depth 8.
That is already fine enough to separate the two stable periodic responses
(Bottom nodes) from the chaotic saddle that feeds them (Top node).
"""

import sys

from chaingraph import preset_config, run_with_graph

depth = int(sys.argv[1]) if len(sys.argv) > 1 else 8
report, graph = run_with_graph(preset_config("pendulum", depth))
print(f"depth {depth}: trapping {report['trapping']['status']}, {len(graph.nodes)} nodes")
for node in report["graph"]["nodes"]:
    c = node["centroid"]
    print(f"  node {node['id']}: {node['annotation']:<7} {node['boxes']:6d} boxes, centroid ({c[0]:+.3f}, {c[1]:+.3f})")
print("edges:", [(e["from"], e["to"]) for e in report["graph"]["edges"]])
