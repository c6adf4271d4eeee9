"""
Shape of the privacy-loss bound
===============================

The constants are unknown, so this is a shape, not an accountant.
"""

import numpy as np

from lghdiff.privacy_metrics import EpsilonConstants, epsilon_bound, epsilon_limit

i = np.array([1, 10, 100, 1000, 10_000])
for sigma_g in (0.1, 0.2):
    print(f"sigma_g = {sigma_g}:", np.round(epsilon_bound(i, sigma_g, mu=0.4), 2))

# Without the sqrt(mu) drift term the bound saturates.
no_drift = EpsilonConstants(c_half=0.0)
print("limit:", epsilon_limit(0.1, 0.4, no_drift))
print("i = 10000:", epsilon_bound(10_000, 0.1, 0.4, no_drift))
