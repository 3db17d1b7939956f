"""Compare the empirical fBm covariance with the exact one at a few time pairs.

Run with ``python3 demos/fbm_covariance.py``.
"""

import math

import numpy as np

from fbmsteer.fractional_noise import TimeGrid, covariance_rh, kernel_covariance, sample_fbm_paths

grid = TimeGrid(1.0, 128)
pairs = [(0.25, 0.5), (0.5, 1.0), (1.0, 1.0)]
for h in (0.6, 0.75, 0.9):
    paths = sample_fbm_paths(h, grid, seed=7, replications=5000)
    print(f"H = {h}")
    for s, t in pairs:
        prod = paths[:, grid.index_of(s)] * paths[:, grid.index_of(t)]
        se = prod.std(ddof=1) / math.sqrt(prod.size)
        exact = float(covariance_rh(s, t, h))
        print(f"  ({s}, {t}): empirical {prod.mean():.4f} +/- {se:.4f}, "
              f"exact {exact:.4f}, via kernel {kernel_covariance(s, t, h):.4f}")
    incr = np.diff(paths, axis=1)
    lag1 = float(np.mean(incr[:, :-1] * incr[:, 1:]) / np.mean(incr ** 2))
    print(f"  lag-1 increment correlation {lag1:.3f} (exact {2 ** (2 * h - 1) - 1:.3f})")
