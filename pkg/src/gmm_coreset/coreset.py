"""Sensitivity-based importance sampling of weighted coresets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import DataSet, _as_points, _as_weights, chunked_sum, voronoi_partition
from .gmm import GmmParams, point_costs
from .seeding import adaptive_bicriteria, best_seed_of_p


@dataclass(frozen=True)
class CoresetMeta:
    source_n: int
    m_requested: int
    epsilon_budget: float = 0.0
    level: int = 0
    source_weight: float = float("nan")
    stats: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True, eq=False)
class Coreset:
    """Weighted sample standing in for a larger (possibly weighted) set."""

    points: np.ndarray
    weights: np.ndarray
    meta: CoresetMeta

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        if pts.ndim != 2 or pts.shape[0] != w.shape[0]:
            raise ValueError(f"points {pts.shape} and weights {w.shape} disagree")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def empty(cls, d):
        return cls(np.empty((0, d)), np.empty(0), CoresetMeta(0, 0))

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def total_weight(self):
        return float(chunked_sum(self.weights)) if len(self.weights) else 0.0

    def __len__(self):
        return self.points.shape[0]

    def to_dataset(self):
        return DataSet(self.points, self.weights)

    def with_meta(self, **changes):
        return Coreset(self.points, self.weights, replace(self.meta, **changes))

    def __repr__(self):
        return f"Coreset(size={len(self)}, d={self.dim}, total_weight={self.total_weight:.6g}, meta={self.meta})"


@dataclass(frozen=True, eq=False)
class SensitivityScores:
    """Per-point sensitivity upper bounds and the induced sampling distribution.

    ``s`` is on the cheap "unnormalised" scale; multiplying by
    n * 2 / (lam^2 phi) gives the per-point bound on the sensitivity proper.
    ``cells`` is the number of nonempty Voronoi cells, which is the beta that
    enters the total ``(3 alpha + 2 beta) phi``.
    """

    s: np.ndarray
    q: np.ndarray
    total_unnormalized: float
    phi: float
    alpha: float
    beta: int
    cells: int
    S_bound: float
    assignment: np.ndarray
    cell_weights: np.ndarray

    @property
    def S_bound_alt(self):
        # the smaller (4 alpha + 2 beta)/lam^2 total, kept for comparison only
        return self.S_bound * (4 * self.alpha + 2 * self.beta) / (6 * self.alpha + 4 * self.beta)


def sensitivity_scores(X, B, partition=None, lam=1e-3):
    """Sensitivity scores with respect to the bicriteria ``B``.

    For x in cell j, with weighted cell mass W_j, weighted cell cost phi_j and
    total cost phi:

        s(x) = alpha d(x,B)^2 + 2 alpha phi_j / W_j + 2 phi / W_j

    and q(x) is proportional to w(x) s(x). If all points sit on centers the
    distribution falls back to weight-proportional sampling.
    """
    P = _as_points(X)
    w = _as_weights(X)
    part = voronoi_partition(X, B.centers) if partition is None else partition
    a = part.assignment
    Wj = part.cell_weights
    nonempty = Wj > 0
    safe = np.where(nonempty, Wj, 1.0)
    per_cell = np.where(nonempty, (2.0 * B.alpha * part.cell_costs + 2.0 * part.total_cost) / safe, 0.0)
    s = B.alpha * part.sq_dist + per_cell[a]
    ws = w * s
    total = float(chunked_sum(ws))
    if total > 0:
        q = ws / total
    else:
        q = w / float(chunked_sum(w))
    cells = int(np.count_nonzero(nonempty))
    return SensitivityScores(
        s=s,
        q=q,
        total_unnormalized=total,
        phi=part.total_cost,
        alpha=B.alpha,
        beta=B.beta,
        cells=cells,
        S_bound=(6.0 * B.alpha + 4.0 * cells) / lam**2,
        assignment=a,
        cell_weights=Wj,
    )


def normalized_sensitivity_bound(scores, X, lam):
    """Per-point bound on the sensitivity itself:

        n (2/lam^2) ( alpha d^2/phi + 2 alpha phi_j/(|X_j| phi) + 2/|X_j| )

    For unit weights its mean over X equals (6 alpha + 4 beta)/lam^2.
    """
    n = _as_points(X).shape[0]
    if scores.phi > 0:
        return n * (2.0 / lam**2) * scores.s / scores.phi
    Wj = scores.cell_weights[scores.assignment]
    return n * (2.0 / lam**2) * 2.0 / Wj


@dataclass(frozen=True, eq=False)
class AliasTable:
    prob: np.ndarray
    alias: np.ndarray

    def __len__(self):
        return self.prob.shape[0]

    def draw(self, u1, u2):
        """Map uniforms in [0, 1) to table indices (scalars or arrays)."""
        m = self.prob.shape[0]
        i = np.minimum((np.asarray(u1) * m).astype(np.int64), m - 1)
        return np.where(np.asarray(u2) < self.prob[i], i, self.alias[i])

    def sample(self, size, rng):
        rng = np.random.default_rng(rng)
        return self.draw(rng.random(size), rng.random(size))

    def probabilities(self):
        """Distribution encoded by the table."""
        m = self.prob.shape[0]
        out = self.prob.copy()
        np.add.at(out, self.alias, 1.0 - self.prob)
        return out / m


def build_alias_table(q):
    """Vose's alias method: O(m) construction, O(1) draws."""
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    m = q.shape[0]
    if m == 0:
        raise ValueError("empty distribution")
    if np.any(q < 0) or not np.all(np.isfinite(q)):
        raise ValueError("probabilities must be finite and nonnegative")
    if abs(q.sum() - 1.0) > 1e-9:
        raise ValueError(f"probabilities sum to {q.sum()!r}, not 1")
    scaled = q * m
    prob = np.zeros(m)
    alias = np.arange(m)
    small = [i for i in range(m) if scaled[i] < 1.0]
    large = [i for i in range(m) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        (small if scaled[g] < 1.0 else large).append(g)
    for i in large + small:
        # leftovers are 1 up to rounding
        prob[i] = 1.0
    return AliasTable(prob=prob, alias=alias)


def draw_coreset(X, scores, m, rng=None, level=0):
    """Draw m points i.i.d. from q; each draw of x carries weight w(x)/(m q(x)).

    Repeated draws of one index are merged into a single row whose weight is
    the sum, which leaves every weighted cost unchanged.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.default_rng(rng)
    P = _as_points(X)
    w = _as_weights(X)
    table = build_alias_table(scores.q)
    idx = table.sample(m, rng)
    counts = np.bincount(idx, minlength=P.shape[0])
    keep = np.flatnonzero(counts)
    gamma = w[keep] * counts[keep] / (m * scores.q[keep])
    meta = CoresetMeta(
        source_n=int(P.shape[0]),
        m_requested=int(m),
        level=level,
        source_weight=float(chunked_sum(w)),
    )
    return Coreset(P[keep], gamma, meta)


def sufficient_coreset_size(d, k, epsilon, delta, lam, c=1.0):
    """ceil(c (d^4 k^6 + k^2 ln(1/delta)) / (lam^4 eps^2)); advisory only."""
    if not 0 < epsilon < 0.5:
        raise ValueError(f"epsilon must be in (0, 1/2), got {epsilon}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if not 0 < lam < 1:
        raise ValueError(f"lam must be in (0, 1), got {lam}")
    if d < 1 or k < 1 or c <= 0:
        raise ValueError("d, k and c must be positive")
    return math.ceil(c * (d**4 * k**6 + k**2 * math.log(1.0 / delta)) / (lam**4 * epsilon**2))


def bicriteria_for(X, k, delta, rng, seeding="kmeanspp"):
    if seeding in ("kmeanspp", "kmeanspp_best_of_p"):
        return best_seed_of_p(X, k, delta, rng)
    if seeding == "adaptive":
        return adaptive_bicriteria(X, k, delta, rng)
    raise ValueError(f"unknown seeding {seeding!r}")


def build_coreset(X, k, m, delta=0.1, rng=None, seeding="kmeanspp", lam=1e-3, epsilon=0.0, level=0):
    """Bicriteria -> Voronoi partition -> sensitivities -> importance sample.

    ``k`` is capped at the number of positively weighted points, so a tiny
    weighted input (e.g. a single point) still compresses. ``epsilon`` is only
    recorded as the coreset's error budget.
    """
    rng = np.random.default_rng(rng)
    seed_rng, draw_rng = rng.spawn(2)
    w = _as_weights(X)
    k_eff = max(1, min(k, int(np.count_nonzero(w > 0))))
    B = bicriteria_for(X, k_eff, delta, seed_rng, seeding)
    part = voronoi_partition(X, B.centers)
    scores = sensitivity_scores(X, B, part, lam)
    C = draw_coreset(X, scores, m, draw_rng, level=level)
    stats = {
        "phi": scores.phi,
        "alpha": scores.alpha,
        "beta": scores.beta,
        "nonempty_cells": scores.cells,
        "score_total": scores.total_unnormalized,
        "score_identity": (3 * scores.alpha + 2 * scores.cells) * scores.phi,
        "total_sensitivity_bound": scores.S_bound,
        "seeding": seeding,
    }
    return C.with_meta(epsilon_budget=float(epsilon), stats=stats)


def uniform_subsample(X, m, rng=None, reweight=True):
    """m points drawn uniformly without replacement (capped at n).

    With ``reweight`` each point carries total_weight/m_eff so that costs are
    unbiased; otherwise unit weights, the plain subsampling baseline.
    """
    rng = np.random.default_rng(rng)
    P = _as_points(X)
    w = _as_weights(X)
    n = P.shape[0]
    m_eff = min(m, n)
    idx = np.sort(rng.choice(n, size=m_eff, replace=False))
    if reweight:
        gamma = np.full(m_eff, float(chunked_sum(w)) / m_eff)
    else:
        gamma = np.ones(m_eff)
    return Coreset(P[idx], gamma, CoresetMeta(n, m, source_weight=float(chunked_sum(w))))


def brute_force_sensitivity(X, theta_grid, lam=None):
    """Empirical sensitivity max_theta n f_theta(x) / sum_x' f_theta(x') over a grid.

    A lower bound on the true sensitivity. Every grid member must satisfy the
    eigenvalue constraint for ``lam`` (its own ``lam`` when not given).
    """
    P = _as_points(X)
    n = P.shape[0]
    if not theta_grid:
        raise ValueError("empty parameter grid")
    best = np.full(n, -np.inf)
    for theta in theta_grid:
        if not isinstance(theta, GmmParams):
            raise TypeError("grid entries must be GmmParams")
        bound = theta.lam if lam is None else lam
        for j, cov in enumerate(theta.covariances):
            ev = np.linalg.eigvalsh(cov)
            if ev[0] < bound - 1e-9 or ev[-1] > 1.0 / bound + 1e-9:
                raise ValueError(f"grid covariance {j} has spectrum outside [{bound}, {1 / bound}]")
        f = point_costs(P, theta)
        total = f.sum()
        if total > 0:
            best = np.maximum(best, n * f / total)
    return best
