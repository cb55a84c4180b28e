"""
Compress a synthetic mixture into a few hundred weighted points, then fit a
mixture on the compressed set and compare it with a fit on all the data.

Run with:  python3 demos/compress_and_fit.py
"""

import time

import numpy as np

import gmm_coreset as gc
from gmm_coreset.evaluate import mixed_preset

rng = np.random.default_rng(7)

# ten anisotropic components in 5 dimensions, uneven weights
theta_true = mixed_preset(k=10, d=5, seed=3)
X = gc.generate_gmm_sample(theta_true, 50_000, seed=rng)
print("data:", X.n, "points in", X.dim, "dims")

t0 = time.perf_counter()
C = gc.build_coreset(X, k=10, m=1000, delta=0.1, rng=rng)
print(f"coreset: {len(C)} distinct points, built in {time.perf_counter() - t0:.2f}s")
print("total weight", C.total_weight, "vs n =", X.n)

# fit on the coreset, then on the full set, and score both on the full data
theta_c, _, _ = gc.fit_best_of(C, 10, restarts=3, rng=rng)
theta_x, _, _ = gc.fit_best_of(X, 10, restarts=3, rng=rng)

nll_c = gc.negative_log_likelihood(X, theta_c)
nll_x = gc.negative_log_likelihood(X, theta_x)
print(f"NLL on X, coreset fit: {nll_c:.1f}")
print(f"NLL on X, full fit:    {nll_x:.1f}")
print(f"relative gap: {gc.relative_error_eta(nll_c, nll_x):.4f}")

# how well does the coreset track the cost of arbitrary mixtures?
probes = gc.probe_params(X, 10, 1e-3, 20, rng)
print("worst probe ratio:", round(gc.probe_max_ratio(X, C, probes), 4))
