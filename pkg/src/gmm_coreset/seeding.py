"""Bicriteria k-means approximations: weighted k-means++, best-of-p, adaptive sampling, weighted Lloyd."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import _as_points, _as_weights, chunked_sum, nearest_centers, phi


def kmeanspp_alpha(k):
    """Approximation factor 16 (log2 k + 2) assumed for best-of-p k-means++."""
    return 16.0 * (math.log2(k) + 2.0)


@dataclass(frozen=True, eq=False)
class Bicriteria:
    centers: np.ndarray
    alpha: float
    cost: float

    @property
    def beta(self):
        return self.centers.shape[0]


def _draw_index(cum, rng):
    # cum is a nondecreasing cumulative mass with cum[-1] > 0; the returned
    # entry always carries positive mass.
    u = rng.random() * cum[-1]
    i = int(np.searchsorted(cum, u, side="right"))
    if i >= cum.shape[0]:
        i = int(np.searchsorted(cum, cum[-1], side="left"))
    return i


def kmeanspp_seed(X, k, rng=None):
    """Weighted D^2 seeding.

    The first center is drawn with probability proportional to weight, each
    further one proportional to ``w(x) d(x, B)^2``. If that mass is zero
    (every point already sits on a center) the draw falls back to weight.
    """
    rng = np.random.default_rng(rng)
    P = _as_points(X)
    w = _as_weights(X)
    n = P.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, n={n}], got {k}")
    if not np.any(w > 0):
        raise ValueError("no point has positive weight")
    wcum = np.cumsum(w)
    chosen = [_draw_index(wcum, rng)]
    d2 = np.sum((P - P[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        mass = w * d2
        cum = np.cumsum(mass)
        if cum[-1] > 0:
            i = _draw_index(cum, rng)
        else:
            i = _draw_index(wcum, rng)
        chosen.append(i)
        d2 = np.minimum(d2, np.sum((P - P[i]) ** 2, axis=1))
    centers = P[chosen].copy()
    return Bicriteria(centers=centers, alpha=kmeanspp_alpha(k), cost=float(chunked_sum(w * d2)))


def num_seeding_runs(delta):
    """p = ceil(log2(1/delta)) independent seeding runs."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    return max(1, math.ceil(math.log2(1.0 / delta) - 1e-12))


def best_seed_of_p(X, k, delta, rng=None):
    """Best (lowest cost) of p = ceil(log2(1/delta)) k-means++ runs.

    Run i uses the i-th child stream spawned from ``rng``, so a run can be
    replayed in isolation.
    """
    p = num_seeding_runs(delta)
    rng = np.random.default_rng(rng)
    runs = [kmeanspp_seed(X, k, child) for child in rng.spawn(p)]
    return min(runs, key=lambda b: b.cost)


def adaptive_bicriteria(X, k, delta, rng=None, alpha=None):
    """Adaptive sampling bicriteria.

    Repeatedly draws c = ceil(10 d k ln(1/delta)) points uniformly from the
    remainder R and discards the ceil(|R|/2) points of R closest to that
    sample. The union of all samples and the final remainder is returned.
    ``alpha`` is advisory and defaults to the k-means++ factor.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    rng = np.random.default_rng(rng)
    P = _as_points(X)
    w = _as_weights(X)
    n, d = P.shape
    c = math.ceil(10 * d * k * math.log(1.0 / delta))
    remaining = np.arange(n)
    picked = []
    while remaining.shape[0] > c:
        sample = rng.choice(remaining, size=c, replace=False)
        picked.append(np.sort(sample))
        _, d2 = nearest_centers(P[remaining], P[sample])
        order = np.argsort(d2, kind="stable")
        drop = math.ceil(remaining.shape[0] / 2)
        remaining = np.sort(remaining[order[drop:]])
    picked.append(remaining)
    idx = np.concatenate(picked)
    centers = P[idx].copy()
    return Bicriteria(
        centers=centers,
        alpha=kmeanspp_alpha(k) if alpha is None else float(alpha),
        cost=phi(X, centers),
    )


def weighted_lloyd(X, k, max_iters=10, rng=None):
    """Weighted k-means: k-means++ seeding followed by Lloyd iterations.

    Centers are weight-weighted cell means. A cell that ends up with zero
    weight is re-seeded at the point with the largest weighted squared
    distance. Returns ``(assignment, centers)``.
    """
    P = _as_points(X)
    w = _as_weights(X)
    npos = int(np.count_nonzero(w > 0))
    if not 1 <= k <= npos:
        raise ValueError(f"k must be in [1, {npos}] (points with positive weight), got {k}")
    centers = kmeanspp_seed(X, k, rng).centers.copy()
    assign, d2 = nearest_centers(P, centers)
    for _ in range(max_iters):
        z = np.bincount(assign, weights=w, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, w[:, None] * P)
        new = centers.copy()
        live = z > 0
        new[live] = sums[live] / z[live, None]
        for j in np.flatnonzero(~live):
            far = int(np.argmax(w * d2))
            new[j] = P[far]
            d2[far] = 0.0
        new_assign, new_d2 = nearest_centers(P, new)
        centers = new
        if np.array_equal(new_assign, assign) and np.all(live):
            assign, d2 = new_assign, new_d2
            break
        assign, d2 = new_assign, new_d2
    return assign, centers
