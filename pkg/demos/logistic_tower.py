"""Chain-recurrence graph of the logistic map across the period-doubling range.

Run ``python3 demos/logistic_tower.py``. For each parameter value the script
builds the box map at depth 12, prints the nodes with their locations and
Top/Bottom annotations, and lists the edges of the node DAG.
"""

from chaingraph import preset_config, run_with_graph

for a in (2.8, 3.2, 3.5, 4.0):
    report, graph = run_with_graph(preset_config("logistic", 12, {"a": str(a)}))
    print(f"a = {a}: {len(graph.nodes)} nodes, verdict {report['theorems']['connectedness']['verdict']}")
    for node in report["graph"]["nodes"]:
        lo, hi = node["bounds"]["lo"][0], node["bounds"]["hi"][0]
        print(f"  node {node['id']}: {node['annotation']:<8} {node['boxes']:5d} boxes in [{lo:.4f}, {hi:.4f}]")
    print("  edges:", [(e["from"], e["to"]) for e in report["graph"]["edges"]])
