"""
Feed points one block at a time into a merge-and-compress tree and watch the
memory footprint stay logarithmic. Then build the same thing over partitions
with several workers.

Run with:  python3 demos/streaming_tree.py
"""

import numpy as np

import gmm_coreset as gc
from gmm_coreset.evaluate import spherical_preset

theta = spherical_preset(k=3, d=2)
X = gc.generate_gmm_sample(theta, 2**15, seed=4)

tree = gc.CoresetTree(dim=2, k=3, m_leaf=512, n_estimate=X.n, seed=11)
for start in range(0, X.n, 4096):
    tree.extend(X.points[start:start + 4096])
    print(f"seen {tree.n_seen:6d}  stored points {tree.stored_points:5d}")

C = tree.finalize()
print("stream coreset:", len(C), "points, weight", round(C.total_weight, 1))

# parallel build; the answer does not depend on the worker count
A = gc.parallel_build(X, 8, k=3, m=512, rng=np.random.default_rng(5), workers=1)
B = gc.parallel_build(X, 8, k=3, m=512, rng=np.random.default_rng(5), workers=4)
print("1 vs 4 workers identical:", np.array_equal(A.points, B.points) and np.array_equal(A.weights, B.weights))

fit, _, _ = gc.fit_best_of(C, 3, restarts=3, rng=0)
print("fitted means:\n", np.round(fit.means, 2))
