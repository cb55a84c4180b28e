"""Scaled-down evaluation protocol: probe-set audits and holdout relative error."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .coreset import build_coreset, uniform_subsample
from .dataset import DataSet, _as_points, _as_weights
from .gmm import GmmParams, cost_of_set, fit_best_of, negative_log_likelihood, probe_params, relative_error_eta


def imbalanced_preset(n, d=2, separation=20.0, small_weight=None, lam=1e-3):
    """Two unit-covariance clusters ``separation`` apart, the small one with weight 1/sqrt(n)."""
    w1 = 1.0 / math.sqrt(n) if small_weight is None else small_weight
    means = np.zeros((2, d))
    means[0, 0] = -separation / 2
    means[1, 0] = separation / 2
    return GmmParams([w1, 1.0 - w1], means, [np.eye(d)] * 2, lam)


def spherical_preset(k=3, d=2, separation=8.0, lam=1e-3, seed=0):
    """k equally weighted unit-covariance clusters with centers on a scaled random simplex."""
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(k, d))
    means *= separation / max(np.linalg.norm(means, axis=1).max(), 1e-12)
    return GmmParams(np.full(k, 1.0 / k), means, [np.eye(d)] * k, lam)


def mixed_preset(k=10, d=5, lam=1e-3, seed=0, spread=15.0):
    """k clusters with Dirichlet(1) weights and random anisotropic covariances."""
    rng = np.random.default_rng(seed)
    weights = rng.dirichlet(np.ones(k))
    means = rng.uniform(-spread, spread, size=(k, d))
    covs = []
    for _ in range(k):
        A = rng.normal(size=(d, d))
        covs.append(A @ A.T / d + 0.2 * np.eye(d))
    return GmmParams(weights, means, covs, lam)


PRESETS = {
    "imbalanced": lambda n, lam: imbalanced_preset(n, lam=lam),
    "spherical-k3": lambda n, lam: spherical_preset(lam=lam),
    "mixed-k10": lambda n, lam: mixed_preset(lam=lam),
}


def probe_max_ratio(X, C, thetas):
    """max over thetas of |cost(C, theta) / cost(X, theta) - 1|."""
    worst = 0.0
    for theta in thetas:
        full = cost_of_set(X, theta)
        worst = max(worst, abs(cost_of_set(C, theta) / full - 1.0))
    return worst


def train_holdout_split(X, rng, holdout=0.2):
    P = _as_points(X)
    w = _as_weights(X)
    n = P.shape[0]
    perm = rng.permutation(n)
    cut = n - int(round(holdout * n))
    tr, ho = np.sort(perm[:cut]), np.sort(perm[cut:])
    return DataSet(P[tr], w[tr]), DataSet(P[ho], w[ho])


@dataclass
class TrialResult:
    trial: int
    m: int
    method: str
    eta: float
    probe: float
    build_s: float
    fit_s: float


def _method_fit(train, holdout, baseline, method, m, k, lam, rng, max_iters, thetas, seeding):
    build_rng, fit_rng = rng.spawn(2)
    t0 = time.perf_counter()
    if method == "coreset":
        S = build_coreset(train, k, m, rng=build_rng, seeding=seeding, lam=lam)
    elif method == "uniform":
        # unit weights, as in the reference protocol
        S = uniform_subsample(train, m, build_rng, reweight=False)
    else:
        raise ValueError(f"unknown method {method!r}")
    t1 = time.perf_counter()
    theta, _, _ = fit_best_of(S, min(k, len(S)), lam=lam, restarts=1, max_iters=max_iters, rng=fit_rng)
    t2 = time.perf_counter()
    eta = relative_error_eta(negative_log_likelihood(holdout, theta), baseline)
    if thetas:
        probe_set = S if method == "coreset" else uniform_subsample(train, m, build_rng.spawn(1)[0])
        probe = probe_max_ratio(train, probe_set, thetas)
    else:
        probe = float("nan")
    return eta, probe, t1 - t0, t2 - t1


def run_trial(X, trial, sizes, k, lam, restarts, probe_count, seed, max_iters=100,
              methods=("coreset", "uniform"), seeding="kmeanspp"):
    """One trial: split, best-of-``restarts`` baseline, then every (m, method) arm.

    All arms of a trial share the split and the baseline. The uniform arm's
    probe ratio is measured on the reweighted subsample (weights n/m), since
    unit weights miss the cost scale entirely.
    """
    root = np.random.default_rng([seed, trial])
    split_rng, base_rng, probe_rng, arm_root = root.spawn(4)
    train, holdout = train_holdout_split(X, split_rng)
    full, _, _ = fit_best_of(train, k, lam=lam, restarts=restarts, max_iters=max_iters, rng=base_rng)
    baseline = negative_log_likelihood(holdout, full)
    thetas = probe_params(train, k, lam, probe_count, probe_rng) if probe_count else []
    arm_rngs = arm_root.spawn(len(sizes) * len(methods))
    out = []
    for i, m in enumerate(sizes):
        for j, method in enumerate(methods):
            eta, probe, b, f = _method_fit(train, holdout, baseline, method, m, k, lam,
                                           arm_rngs[i * len(methods) + j], max_iters, thetas, seeding)
            out.append(TrialResult(trial, m, method, eta, probe, b, f))
    return out


def evaluate(X, sizes, k, trials=20, restarts=10, probe_count=20, lam=1e-3, seed=0, workers=1,
             max_iters=100, seeding="kmeanspp"):
    """Run ``trials`` independent trials and aggregate per (m, method).

    Results are sorted by trial index before aggregation, so the summary does
    not depend on ``workers``.
    """
    def one(t):
        return run_trial(X, t, sizes, k, lam, restarts, probe_count, seed, max_iters, seeding=seeding)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(one, range(trials)))
    else:
        per_trial = [one(t) for t in range(trials)]
    results = sorted((r for rs in per_trial for r in rs), key=lambda r: (r.trial, r.m, r.method))
    return summarize(results), results


def summarize(results):
    rows = []
    keys = sorted({(r.m, r.method) for r in results})
    for m, method in keys:
        sel = [r for r in results if r.m == m and r.method == method]
        eta = np.array([r.eta for r in sel])
        rows.append({
            "m": m,
            "method": method,
            "median_eta": float(np.median(eta)),
            "p90_eta": float(np.percentile(eta, 90)),
            "probe_max_ratio": float(np.median([r.probe for r in sel])),
            "build_s": float(np.median([r.build_s for r in sel])),
            "fit_s": float(np.median([r.fit_s for r in sel])),
        })
    return rows


CSV_COLUMNS = ("m", "method", "median_eta", "p90_eta", "probe_max_ratio", "build_s", "fit_s")


def format_csv(rows):
    lines = [",".join(CSV_COLUMNS)]
    for r in rows:
        vals = []
        for c in CSV_COLUMNS:
            v = r[c]
            vals.append("%.17g" % v if isinstance(v, float) else str(v))
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def format_table(rows):
    header = [c for c in CSV_COLUMNS]
    body = [[r[c] if not isinstance(r[c], float) else f"{r[c]:.4g}" for c in CSV_COLUMNS] for r in rows]
    cells = [header] + [[str(v) for v in row] for row in body]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells)
