"""Gaussian mixtures with eigenvalue-bounded covariances and weighted EM.

All densities are evaluated in the log domain. For a mixture theta the
negative log-likelihood of a weighted set splits as

    nll(S, theta) = -W ln Z(theta) + cost(S, theta),

where W is the total weight, Z(theta) = sum_i w_i / sqrt|2 pi Sigma_i| depends
only on the parameters and cost(S, theta) = sum_x w(x) f_theta(x) carries all
dependence on the data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .dataset import _as_points, _as_weights, chunked_sum, nearest_centers
from .seeding import kmeanspp_seed, weighted_lloyd

LOG_2PI = math.log(2.0 * math.pi)
SPECTRUM_TOL = 1e-9
SYMMETRY_TOL = 1e-12


class NumericalError(ArithmeticError):
    """Raised when a fit cannot produce a valid parameter set."""


@dataclass(frozen=True, eq=False)
class GmmParams:
    """k weighted Gaussian components whose covariance eigenvalues lie in [lam, 1/lam]."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    lam: float

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        mu = np.array(self.means, dtype=np.float64)
        if mu.ndim == 1:
            mu = mu.reshape(1, -1)
        cov = np.array(self.covariances, dtype=np.float64)
        if cov.ndim == 2:
            cov = cov[None]
        k, d = mu.shape
        if w.shape != (k,) or cov.shape != (k, d, d):
            raise ValueError(f"inconsistent shapes: weights {w.shape}, means {mu.shape}, covariances {cov.shape}")
        if not 0 < self.lam < 1:
            raise ValueError(f"lam must be in (0, 1), got {self.lam}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must be a probability vector (sum={w.sum()!r})")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(cov))):
            raise ValueError("non-finite means or covariances")
        for i in range(k):
            if np.max(np.abs(cov[i] - cov[i].T)) > SYMMETRY_TOL * max(1.0, np.max(np.abs(cov[i]))):
                raise ValueError(f"covariance {i} is not symmetric")
            ev = np.linalg.eigvalsh(cov[i])
            if ev[0] < self.lam - SPECTRUM_TOL or ev[-1] > 1.0 / self.lam + SPECTRUM_TOL:
                raise ValueError(
                    f"covariance {i} spectrum [{ev[0]:.6g}, {ev[-1]:.6g}] outside [{self.lam}, {1 / self.lam}]"
                )
        for name, arr in (("weights", w), ("means", mu), ("covariances", cov)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def k(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    @cached_property
    def _chol(self):
        return np.linalg.cholesky(self.covariances)

    @cached_property
    def log_dets(self):
        """ln |2 pi Sigma_i| per component."""
        L = self._chol
        return self.dim * LOG_2PI + 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)

    @cached_property
    def trace_inv(self):
        return np.array([np.trace(np.linalg.inv(c)) for c in self.covariances])

    def __repr__(self):
        return f"GmmParams(k={self.k}, d={self.dim}, lam={self.lam})"


def log_gaussian(x, mu, Sigma):
    """ln N(x; mu, Sigma) via a Cholesky factorization."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    S = np.atleast_2d(np.asarray(Sigma, dtype=np.float64))
    L = np.linalg.cholesky(S)
    r = solve_triangular(L, x - mu, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return float(-0.5 * r @ r - 0.5 * (x.shape[0] * LOG_2PI + logdet))


def _mahalanobis_sq(P, theta):
    n = P.shape[0]
    out = np.empty((n, theta.k))
    for j in range(theta.k):
        r = solve_triangular(theta._chol[j], (P - theta.means[j]).T, lower=True, check_finite=False)
        out[:, j] = np.einsum("ij,ij->j", r, r)
    return out


def log_component_joint(P, theta, penalty=0.0):
    """(n, k) matrix of ln w_j + ln N(x; mu_j, Sigma_j) (minus an optional
    per-component ``penalty/2 * tr(Sigma_j^-1)``)."""
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    with np.errstate(divide="ignore"):
        logw = np.log(theta.weights)
    out = logw - 0.5 * theta.log_dets - 0.5 * _mahalanobis_sq(P, theta)
    if penalty:
        out = out - 0.5 * penalty * theta.trace_inv
    return out


def log_normalizer(theta):
    """ln Z(theta) = logsumexp_i (ln w_i - 1/2 ln|2 pi Sigma_i|)."""
    with np.errstate(divide="ignore"):
        return float(logsumexp(np.log(theta.weights) - 0.5 * theta.log_dets))


def point_costs(P, theta):
    """f_theta for each row of P; nonnegative up to rounding."""
    return log_normalizer(theta) - logsumexp(log_component_joint(P, theta), axis=1)


def point_cost(x, theta):
    return float(point_costs(np.asarray(x, dtype=np.float64).reshape(1, -1), theta)[0])


def cost_of_set(S, theta):
    """Weighted data-dependent cost sum_x w(x) f_theta(x)."""
    return float(chunked_sum(_as_weights(S) * point_costs(_as_points(S), theta)))


def negative_log_likelihood(S, theta):
    """-sum_x w(x) ln P(x | theta), evaluated directly from the densities."""
    ll = logsumexp(log_component_joint(_as_points(S), theta), axis=1)
    return float(-chunked_sum(_as_weights(S) * ll))


def regularized_nll(S, theta):
    """Objective minimised by :func:`em_fit`.

    Each component density is damped by exp(-lam/2 tr Sigma^-1); the M-step
    Sigma = scatter + lam I is the exact maximiser for this objective, so EM
    never increases it.
    """
    ll = logsumexp(log_component_joint(_as_points(S), theta, penalty=theta.lam), axis=1)
    return float(-chunked_sum(_as_weights(S) * ll))


def clamp_covariance(Sigma, lam):
    """Project the spectrum of a symmetric matrix into [lam, 1/lam]."""
    S = np.atleast_2d(np.asarray(Sigma, dtype=np.float64))
    scale = max(1.0, float(np.max(np.abs(S))))
    if np.max(np.abs(S - S.T)) > 1e-9 * scale:
        raise ValueError("covariance is not symmetric")
    S = 0.5 * (S + S.T)
    ev, U = np.linalg.eigh(S)
    if ev[0] >= lam and ev[-1] <= 1.0 / lam:
        return S
    ev = np.clip(ev, lam, 1.0 / lam)
    out = (U * ev) @ U.T
    return 0.5 * (out + out.T)


def _clamp_active(Sigma, lam):
    ev = np.linalg.eigvalsh(Sigma)
    return bool(ev[0] < lam or ev[-1] > 1.0 / lam)


def _responsibilities(S, theta, penalty=0.0):
    P = _as_points(S)
    g = _as_weights(S)
    lj = log_component_joint(P, theta, penalty)
    ll = logsumexp(lj, axis=1)
    eta = g[:, None] * np.exp(lj - ll[:, None])
    return eta, ll


def e_step(S, theta, penalty=0.0):
    """Weighted responsibilities eta_ij = g_i w_j N_j(x_i) / sum_l w_l N_l(x_i).

    Rows sum to the point weights. ``penalty`` damps each component by
    exp(-penalty/2 tr Sigma_j^-1); :func:`em_fit` passes ``theta.lam``.
    """
    return _responsibilities(S, theta, penalty)[0]


def _rescue_point(P, g, prev, live_means):
    if prev is not None:
        return int(np.argmax(g * point_costs(P, prev)))
    if live_means.shape[0]:
        _, d2 = nearest_centers(P, live_means)
        return int(np.argmax(g * d2))
    return int(np.argmax(g))


def m_step(S, eta, lam, prev=None, return_events=False):
    """Weighted maximisation with a lam I variance floor.

    Component weights are z_j / sum(z), means are eta-weighted averages and the
    covariance is the two-pass scatter about the final mean plus lam I, with its
    spectrum clamped into [lam, 1/lam]. A component with no responsibility
    mass is re-seeded at the worst-fit point (under ``prev`` when given) with
    weight 1/(10k).

    With ``return_events`` also returns ``(clamped, rescued)`` index lists.
    """
    P = _as_points(S)
    g = _as_weights(S)
    eta = np.asarray(eta, dtype=np.float64)
    n, d = P.shape
    k = eta.shape[1]
    z = chunked_sum(eta)
    dead = z <= 1e-12 * max(float(np.sum(z)), np.finfo(float).tiny)
    live = np.flatnonzero(~dead)
    if live.size == 0:
        raise NumericalError("all components lost their responsibility mass")
    means = np.zeros((k, d))
    covs = np.zeros((k, d, d))
    clamped = []
    eye = np.eye(d)
    for j in live:
        mu = chunked_sum(eta[:, j, None] * P) / z[j]
        diff = P - mu
        scatter = (eta[:, j, None] * diff).T @ diff / z[j]
        raw = 0.5 * (scatter + scatter.T) + lam * eye
        if _clamp_active(raw, lam):
            clamped.append(int(j))
        means[j] = mu
        covs[j] = clamp_covariance(raw, lam)
    weights = np.where(dead, 0.0, z)
    weights = weights / weights.sum()
    rescued = [int(j) for j in np.flatnonzero(dead)]
    if rescued:
        share = 1.0 / (10 * k)
        weights = weights * (1.0 - share * len(rescued))
        pooled = np.cov(P.T, aweights=g if np.any(g > 0) else None, bias=True).reshape(d, d)
        pooled = clamp_covariance(0.5 * (pooled + pooled.T) + lam * eye, lam)
        taken = means[live]
        for j in rescued:
            i = _rescue_point(P, g, prev, taken)
            means[j] = P[i]
            covs[j] = pooled
            weights[j] = share
            taken = np.vstack([taken, P[i][None]])
        weights = weights / weights.sum()
    theta = GmmParams(weights, means, covs, lam)
    if return_events:
        return theta, clamped, rescued
    return theta


@dataclass
class EmReport:
    """Per-iteration trace of a fit. Entry 0 is the initial M-step."""

    nll_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    floor_active: list = field(default_factory=list)
    rescued: list = field(default_factory=list)


def one_hot(assignment, k, weights=None):
    eta = np.zeros((assignment.shape[0], k))
    eta[np.arange(assignment.shape[0]), assignment] = 1.0 if weights is None else weights
    return eta


def em_fit(S, k, lam=1e-3, max_iters=100, rel_tol=1e-3, rng=None, init=None, lloyd_iters=10):
    """Weighted EM.

    Initialised from a weighted Lloyd hard assignment (or from ``init``, a
    GmmParams or an assignment vector), then alternates E and M steps until
    the relative change of :func:`regularized_nll` drops below ``rel_tol`` or
    ``max_iters`` is reached; a negative ``rel_tol`` always runs ``max_iters``
    iterations. Returns ``(theta, report)``.
    """
    g = _as_weights(S)
    npos = int(np.count_nonzero(g > 0))
    if not 1 <= k <= npos:
        raise ValueError(f"k={k} exceeds the {npos} points with positive weight")
    report = EmReport()
    if isinstance(init, GmmParams):
        theta = init
        events = ([], [])
    else:
        assign = init if init is not None else weighted_lloyd(S, k, lloyd_iters, rng)[0]
        theta, *events = m_step(S, one_hot(np.asarray(assign), k, g), lam, return_events=True)
    report.nll_trace.append(regularized_nll(S, theta))
    report.floor_active.append(bool(events[0] or events[1]))
    report.rescued.append(list(events[1]))
    for _ in range(max_iters):
        eta = e_step(S, theta, penalty=lam)
        theta, clamped, rescued = m_step(S, eta, lam, prev=theta, return_events=True)
        nll = regularized_nll(S, theta)
        prev_nll = report.nll_trace[-1]
        report.nll_trace.append(nll)
        report.floor_active.append(bool(clamped or rescued))
        report.rescued.append(rescued)
        report.iterations += 1
        if not np.isfinite(nll):
            raise NumericalError("objective became non-finite")
        if abs(prev_nll - nll) <= rel_tol * abs(nll) and not rescued:
            report.converged = True
            break
    return theta, report


def fit_best_of(S, k, lam=1e-3, restarts=1, max_iters=100, rel_tol=1e-3, rng=None):
    """Run ``restarts`` independent fits and keep the one with the lowest NLL on S.

    Returns ``(theta, report, nlls)`` where ``nlls`` lists every restart's NLL.
    """
    rng = np.random.default_rng(rng)
    best = None
    nlls = []
    for child in rng.spawn(max(1, restarts)):
        theta, rep = em_fit(S, k, lam, max_iters, rel_tol, rng=child)
        nll = negative_log_likelihood(S, theta)
        nlls.append(nll)
        if best is None or nll < best[2]:
            best = (theta, rep, nll)
    return best[0], best[1], nlls


def relative_error_eta(nll_candidate, nll_full):
    """|(candidate - full) / full|."""
    if nll_full == 0:
        raise ZeroDivisionError("reference NLL is zero")
    return abs((nll_candidate - nll_full) / nll_full)


def triangle_residual(x, y, theta):
    """(1/lam)||x - y||^2 + 2 f(y) - f(x); never below rounding level for valid theta."""
    fx, fy = point_costs(np.vstack([x, y]), theta)
    diff = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return float(diff @ diff / theta.lam + 2.0 * fy - fx)


def likelihood_bound_check(X, C, theta):
    """Direct likelihood comparison between a set and its coreset.

    Returns ``(precondition_holds, ratio)`` where the precondition is that
    every |2 pi Sigma_i| >= 1 (so ln Z <= 0) and ratio is
    |nll(X) - nll(C)| / |nll(X)|.
    """
    holds = bool(np.all(theta.log_dets >= 0.0))
    lx = negative_log_likelihood(X, theta)
    lc = negative_log_likelihood(C, theta)
    return holds, abs(lx - lc) / abs(lx)


def random_rotation(d, rng):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def random_params(k, d, lam, rng=None, means=None, eig_range=None):
    """Random mixture in the constraint set.

    Weights are Dirichlet(1), means standard normal unless given, and each
    covariance is a random rotation of eigenvalues drawn log-uniformly from
    ``eig_range`` intersected with [lam, 1/lam].
    """
    rng = np.random.default_rng(rng)
    lo, hi = (lam, 1.0 / lam) if eig_range is None else eig_range
    lo, hi = max(lo, lam), min(hi, 1.0 / lam)
    if lo > hi:
        lo = hi = min(max(1.0, lam), 1.0 / lam)
    w = rng.dirichlet(np.ones(k))
    w = w / w.sum()
    mu = rng.standard_normal((k, d)) if means is None else np.asarray(means, dtype=np.float64)
    covs = np.empty((k, d, d))
    for j in range(k):
        ev = np.exp(rng.uniform(math.log(lo), math.log(hi), size=d))
        U = random_rotation(d, rng)
        covs[j] = clamp_covariance(0.5 * ((U * ev) @ U.T + ((U * ev) @ U.T).T), lam)
    return GmmParams(w, mu, covs, lam)


def probe_params(X, k, lam, count, rng=None, spread=100.0):
    """Probe mixtures for auditing a coreset: k-means++ draws on X as means,
    random rotated covariances within ``spread`` of the data variance."""
    rng = np.random.default_rng(rng)
    P = _as_points(X)
    v = float(np.mean(np.var(P, axis=0))) or 1.0
    out = []
    for child in rng.spawn(count):
        mu = kmeanspp_seed(X, k, child).centers
        out.append(random_params(k, P.shape[1], lam, child, means=mu, eig_range=(v / spread, v * spread)))
    return out


# -- text serialization -------------------------------------------------------

_THETA_MAGIC = "gmcs-theta"
_THETA_VERSION = 1


def _fmt(values):
    return " ".join("%.17g" % v for v in np.ravel(values))


def save_params(path, theta):
    lines = [f"{_THETA_MAGIC} {_THETA_VERSION}", f"{theta.k} {theta.dim} {'%.17g' % theta.lam}"]
    for j in range(theta.k):
        lines.append(_fmt([theta.weights[j]]))
        lines.append(_fmt(theta.means[j]))
        lines.extend(_fmt(row) for row in theta.covariances[j])
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_params(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    head = lines[0].split()
    if len(head) != 2 or head[0] != _THETA_MAGIC or int(head[1]) != _THETA_VERSION:
        raise ValueError(f"{path}: not a version {_THETA_VERSION} parameter file")
    k, d = (int(t) for t in lines[1].split()[:2])
    lam = float(lines[1].split()[2])
    per = 2 + d
    if len(lines) != 2 + k * per:
        raise ValueError(f"{path}: expected {2 + k * per} lines, found {len(lines)}")
    w, mu, cov = np.empty(k), np.empty((k, d)), np.empty((k, d, d))
    for j in range(k):
        block = lines[2 + j * per : 2 + (j + 1) * per]
        w[j] = float(block[0])
        mu[j] = [float(t) for t in block[1].split()]
        cov[j] = [[float(t) for t in row.split()] for row in block[2:]]
    return GmmParams(w, mu, cov, lam)
