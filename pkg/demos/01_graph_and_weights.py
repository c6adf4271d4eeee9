"""
Graphs and combination weights
==============================

Build a random connected network and its Metropolis combination matrix.
"""

import numpy as np

from lghdiff.topology import Topology, check_combination_matrix

topo = Topology.build(8, "erdos_renyi", seed=1, p=0.35)
adj, A = topo.adjacency, topo.weights
print("edges:", adj.edges())
print("redraws needed to get a connected graph:", adj.retries)

# Each weight is 1 / max(|N_l|, |N_k|), counting self in both neighbourhoods;
# the diagonal takes up the slack so every column sums to one.
np.set_printoptions(precision=3, suppress=True)
print(A)
print("column sums:", A.sum(axis=0))

# raises if the matrix is not symmetric, doubly stochastic and supported on the graph
check_combination_matrix(A, adj)

# the same information as the `graph` CLI writes it
print(adj.to_edge_list(), end="")
