"""
Masks that cancel inside every neighbourhood
============================================

Every agent sends its neighbours a masked model. The masks are large, yet
the weighted sum each agent computes is unchanged.
"""

import numpy as np

from lghdiff.diffusion import NaiveLaplaceNoise
from lghdiff.noise_protocol import LocalGraphHomomorphicNoise
from lghdiff.privacy_metrics import neighborhood_residuals, verify_global_condition
from lghdiff.topology import Topology

topo = Topology.build(30, "erdos_renyi", seed=0, p=0.2)
A = topo.weights

lgh = LocalGraphHomomorphicNoise(topo, sigma_g=0.1, dim=2, seed=0)
masks = lgh.masks(1)            # masks[l, k] is what l adds when sending to k
print("largest mask entry:", np.abs(masks).max())
print("worst neighbourhood residual:", neighborhood_residuals(masks, A).max())
print("network-wide:", verify_global_condition(masks, A))

# the split of agent 0's neighbours for this round
print(lgh.split(0, 1))

# Independent noise on every edge does not cancel.
naive = NaiveLaplaceNoise(topo, sigma_g=0.1, dim=2, seed=0).masks(1)
print("naive residual:", neighborhood_residuals(naive, A).max())
