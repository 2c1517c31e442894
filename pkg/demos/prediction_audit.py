"""Fairness metrics straight from predictions, no model required.

Run with:  python3 demos/prediction_audit.py
"""

import numpy as np

from degfair.graphs import build_graph, generalized_degree
from degfair.metrics import accuracy, build_report, delta_deo, delta_dsp

# Eight nodes; node 3 is a small hub, node 0 a pendant.
edges = np.array([(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7),
                  (3, 5), (3, 6), (3, 7)])
labels = np.array([0, 1, 0, 1, 0, 1, 0, 1])
g = build_graph(edges, np.zeros((8, 1)), labels, num_classes=2)

deg = generalized_degree(g, 1)
print("degrees:", deg.astype(int))

# Suppose a model produced these predictions.
preds = np.array([0, 0, 1, 1, 0, 0, 0, 1])
print("accuracy over all nodes:", accuracy(preds, labels, np.arange(8)))

# Group the extremes (one quarter at each end) and compare outcomes.
rep = build_report(preds, labels, np.arange(8), deg, fraction=0.25)
print(f"groups: low={rep.group_sizes[0]} nodes, high={rep.group_sizes[1]} nodes")
print(f"dsp gap = {rep.delta_dsp}   (how differently the groups are classified)")
print(f"deo gap = {rep.delta_deo}   (how differently true classes are recovered)")

# The metrics themselves are tiny, fully inspectable functions:
g0 = np.array([0, 1])  # lowest degrees
g1 = np.array([3, 6])  # highest degrees
print("dsp directly:", delta_dsp(preds, g0, g1, num_classes=2))
print("deo directly:", delta_deo(preds, labels, g0, g1, num_classes=2))
