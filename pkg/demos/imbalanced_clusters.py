"""
A tiny cluster far from a huge one. Uniform sampling usually misses it, a
sensitivity-sampled coreset should not.

Run with:  python3 demos/imbalanced_clusters.py
"""

import numpy as np

import gmm_coreset as gc
from gmm_coreset.evaluate import imbalanced_preset

n, m, reps = 10_000, 50, 40
theta = imbalanced_preset(n)  # small weight is 1/sqrt(n)
X, labels = gc.generate_gmm_sample(theta, n, seed=0, return_labels=True)
small = labels == int(np.argmin(theta.weights))
print(f"{small.sum()} of {n} points belong to the small cluster")

rng = np.random.default_rng(1)


def hits(C):
    # a coreset point lands in the small cluster if it sits near its mean
    mu = theta.means[np.argmin(theta.weights)]
    return np.any(np.linalg.norm(C.points - mu, axis=1) < 5)


for name, make in [
    ("adaptive coreset", lambda: gc.build_coreset(X, 2, m, rng=rng, seeding="adaptive")),
    ("k-means++ coreset", lambda: gc.build_coreset(X, 2, m, rng=rng)),
    ("uniform", lambda: gc.uniform_subsample(X, m, rng=rng)),
]:
    covered = sum(hits(make()) for _ in range(reps))
    print(f"{name:18s} covered the small cluster in {covered}/{reps} draws")
