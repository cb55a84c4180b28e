"""Acceptance suite: one test per criterion, each at its stated tolerance and time limit.

Every test records a one-line PASS/FAIL verdict which is printed in the
pytest terminal summary. Run on its own with

    python3 -m pytest tests/test_acceptance.py -v

or as a script (``python3 tests/test_acceptance.py``).
"""

import hashlib
import math
import time

import numpy as np
import pytest

from gmm_coreset import (
    CoresetTree,
    DataSet,
    GmmParams,
    brute_force_sensitivity,
    build_coreset,
    cost_of_set,
    em_fit,
    generate_gmm_sample,
    load_params,
    load_points,
    normalized_sensitivity_bound,
    parallel_build,
    probe_params,
    save_params,
    save_points,
    save_weighted,
    sensitivity_scores,
    triangle_residual,
    uniform_subsample,
)
from gmm_coreset.dataset import nearest_centers
from gmm_coreset.evaluate import evaluate, imbalanced_preset, mixed_preset, probe_max_ratio
from gmm_coreset.gmm import log_component_joint, log_normalizer, random_params
from gmm_coreset.seeding import best_seed_of_p

VERDICTS = []


def record(number, title, ok, detail, elapsed, limit):
    within = elapsed < limit
    verdict = "PASS" if ok and within else "FAIL"
    VERDICTS.append(f"criterion {number:>2} {verdict}  {title}: {detail} [{elapsed:.1f}s / {limit}s]")
    assert ok, detail
    assert within, f"took {elapsed:.1f}s, limit {limit}s"


def digest(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


# A three-cluster mixture with one heavy, one medium and one rare, remote cluster.
SKEWED_K3 = GmmParams([0.9, 0.09, 0.01], [[0.0, 0.0], [20.0, 0.0], [0.0, 40.0]], [np.eye(2)] * 3, 1e-3)


def test_score_identity():
    t0 = time.perf_counter()
    worst = 0.0
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(20, 2001))
        d = int(rng.integers(1, 11))
        k = int(rng.integers(1, 9))
        centers = rng.normal(size=(k, d)) * rng.uniform(1, 20)
        X = DataSet(centers[rng.integers(0, k, size=n)] + rng.normal(size=(n, d)))
        B = best_seed_of_p(X, k, 0.1, rng.spawn(1)[0])
        sc = sensitivity_scores(X, B)
        expected = (3 * sc.alpha + 2 * sc.beta) * sc.phi
        worst = max(worst, abs(sc.s.sum() / expected - 1.0))
    elapsed = time.perf_counter() - t0
    record(1, "total score identity", worst <= 1e-9, f"max relative gap {worst:.2e} over 100 instances", elapsed, 10)


def test_unbiasedness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    X = DataSet(np.vstack([rng.normal(size=(40, 2)), rng.normal(size=(10, 2)) + [6.0, 0.0]]))
    theta = GmmParams([0.6, 0.4], [[0.5, 0.0], [5.0, 1.0]], [np.eye(2), np.diag([2.0, 0.5])], 1e-3)
    full = cost_of_set(X, theta)
    costs = [cost_of_set(build_coreset(X, 2, 64, rng=child), theta) for child in np.random.default_rng(3).spawn(1000)]
    gap = abs(np.mean(costs) / full - 1.0)
    elapsed = time.perf_counter() - t0
    record(2, "unbiasedness", gap <= 0.01, f"mean coreset cost off by {gap:.2%}", elapsed, 30)


def test_lower_bound_fuzzing():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst_tri = math.inf
    worst_low = math.inf
    worst_agree = 0.0
    triples = 0
    for _ in range(10_000):
        d = int(rng.integers(1, 6))
        k = int(rng.integers(1, 5))
        lam = float(10 ** rng.uniform(-3, -0.3))
        theta = random_params(k, d, lam, rng)
        scale = float(10 ** rng.uniform(-1, 2))
        x = rng.normal(size=(10, d)) * scale
        y = rng.normal(size=(10, d)) * scale
        jx = log_component_joint(x, theta)
        jy = log_component_joint(y, theta)
        lz = log_normalizer(theta)
        fx = lz - np.logaddexp.reduce(jx, axis=1)
        fy = lz - np.logaddexp.reduce(jy, axis=1)
        dist = ((x - y) ** 2).sum(axis=1) / lam
        residual = dist + 2 * fy - fx
        worst_tri = min(worst_tri, float(np.min(residual)), float(np.min(dist + 2 * fx - fy)))
        # the batched evaluation must agree with the library's residual
        worst_agree = max(worst_agree, abs(triangle_residual(x[0], y[0], theta) - residual[0]) / max(1.0, abs(residual[0])))
        _, d2 = nearest_centers(x, theta.means)
        worst_low = min(worst_low, float(np.min(fx - lam / 2 * d2)))
        triples += 10
    ok = worst_tri >= -1e-9 and worst_low >= -1e-9 and worst_agree <= 1e-9
    elapsed = time.perf_counter() - t0
    record(3, "inequality fuzzing", ok,
           f"{triples} triples, min triangle residual {worst_tri:.3g}, min lower-bound slack {worst_low:.3g}, "
           f"batched vs library residual {worst_agree:.1e}",
           elapsed, 60)


def test_sensitivity_dominance():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    lam = 0.1
    X = DataSet(np.vstack([rng.normal(size=(9, 2)), rng.normal(size=(3, 2)) + [5.0, 5.0]]))
    B = best_seed_of_p(X, 2, 0.1, rng.spawn(1)[0])
    bound = normalized_sensitivity_bound(sensitivity_scores(X, B, lam=lam), X, lam)
    grid = []
    for child in rng.spawn(200):
        means = X.points[child.choice(X.n, size=2)] + child.normal(size=(2, 2)) * child.uniform(0, 5)
        grid.append(random_params(2, 2, lam, child, means=means))
    sigma = brute_force_sensitivity(X, grid)
    slack = float(np.min(bound - sigma))
    elapsed = time.perf_counter() - t0
    record(4, "sensitivity bound dominance", bool(np.all(sigma <= bound)),
           f"max empirical sensitivity {sigma.max():.3g}, min bound {bound.min():.3g}, min slack {slack:.3g}",
           elapsed, 60)


def test_probe_check():
    t0 = time.perf_counter()
    X = generate_gmm_sample(SKEWED_K3, 10_000, seed=5)
    thetas = probe_params(X, 3, 1e-3, 50, rng=7)
    core, unif = [], []
    for trial in range(20):
        a, b = np.random.default_rng([11, trial]).spawn(2)
        core.append(probe_max_ratio(X, build_coreset(X, 3, 2000, rng=a), thetas))
        unif.append(probe_max_ratio(X, uniform_subsample(X, 2000, b), thetas))
    core, unif = np.array(core), np.array(unif)
    wins = int(np.sum(core < unif))
    median = float(np.median(core))
    ok = median <= 0.15 and wins >= 16
    elapsed = time.perf_counter() - t0
    record(5, "probe-set coreset check", ok,
           f"coreset median max ratio {median:.4f} (worst {core.max():.4f}), uniform median {np.median(unif):.4f}, "
           f"coreset better in {wins}/20 trials", elapsed, 300)


def test_imbalanced_coverage():
    t0 = time.perf_counter()
    theta = imbalanced_preset(10_000)
    hits = {"kmeanspp": 0, "adaptive": 0, "uniform": 0}
    for trial in range(100):
        X, labels = generate_gmm_sample(theta, 10_000, seed=trial, return_labels=True)
        small = X.points[labels == 0]
        rk, ra, ru = np.random.default_rng([6, trial]).spawn(3)

        def covers(S):
            return bool(np.any((S.points[:, None, :] == small[None]).all(-1)))

        hits["kmeanspp"] += covers(build_coreset(X, 2, 50, rng=rk, seeding="kmeanspp"))
        hits["adaptive"] += covers(build_coreset(X, 2, 50, rng=ra, seeding="adaptive"))
        hits["uniform"] += covers(uniform_subsample(X, 50, ru))
    gap = hits["kmeanspp"] > hits["uniform"] and hits["adaptive"] > hits["uniform"]
    thresholds = hits["adaptive"] >= 95 and hits["uniform"] <= 70
    elapsed = time.perf_counter() - t0
    record(6, "imbalanced cluster coverage", gap and thresholds,
           f"small cluster hit in {hits['adaptive']}/100 (adaptive seeding), {hits['kmeanspp']}/100 "
           f"(k-means++ seeding), {hits['uniform']}/100 (uniform)", elapsed, 120)


def test_weighted_em():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    # (a) a weight-w point behaves exactly like w unit copies, iteration by iteration
    P = np.vstack([rng.normal(size=(30, 2)), rng.normal(size=(30, 2)) + 4])
    mult = rng.integers(1, 4, size=60)
    init = np.repeat([0, 1], 30)
    tw, rw = em_fit(DataSet(P, mult.astype(float)), 2, init=init, max_iters=20, rel_tol=-1)
    td, rd = em_fit(DataSet(np.repeat(P, mult, axis=0)), 2, init=np.repeat(init, mult), max_iters=20, rel_tol=-1)
    dup_gap = max(float(np.max(np.abs(np.array(rw.nll_trace) / np.array(rd.nll_trace) - 1))),
                  float(np.max(np.abs(tw.means - td.means))), float(np.max(np.abs(tw.covariances - td.covariances))))
    ok_a = dup_gap <= 1e-10
    # (b) regularized objective never rises on event-free iterations
    worst_rise = -math.inf
    checked = 0
    for child in rng.spawn(100):
        n = int(child.integers(50, 300))
        d = int(child.integers(1, 5))
        k = int(child.integers(1, 6))
        X = DataSet(child.normal(size=(n, d)) * child.uniform(0.05, 20) + child.integers(0, 3, size=(n, 1)) * 5,
                    child.uniform(0.1, 3.0, size=n))
        _, rep = em_fit(X, k, lam=1e-3, max_iters=40, rel_tol=0, rng=child)
        for i in range(1, len(rep.nll_trace)):
            if not rep.floor_active[i]:
                worst_rise = max(worst_rise, rep.nll_trace[i] - rep.nll_trace[i - 1])
                checked += 1
    ok_b = worst_rise <= 1e-8
    # (c) k = 1 recovers the weighted mean and weighted covariance plus lam I
    w = rng.uniform(0.2, 5.0, size=500)
    Q = rng.normal(size=(500, 3)) @ rng.normal(size=(3, 3))
    theta, _ = em_fit(DataSet(Q, w), 1, lam=1e-3)
    mu = (w[:, None] * Q).sum(0) / w.sum()
    cov = ((w[:, None] * (Q - mu)).T @ (Q - mu)) / w.sum() + 1e-3 * np.eye(3)
    closed_gap = max(float(np.max(np.abs(theta.means[0] - mu))), float(np.max(np.abs(theta.covariances[0] - cov))))
    ok_c = closed_gap <= 1e-10
    elapsed = time.perf_counter() - t0
    record(7, "weighted EM", ok_a and ok_b and ok_c,
           f"(a) duplicate gap {dup_gap:.1e}; (b) max rise {worst_rise:.1e} over {checked} iterations; "
           f"(c) closed-form gap {closed_gap:.1e}", elapsed, 120)


@pytest.mark.slow
def test_end_to_end_eta():
    t0 = time.perf_counter()
    X = generate_gmm_sample(mixed_preset(), 100_000, seed=3)
    rows, _ = evaluate(X, [5000], 10, trials=20, restarts=10, probe_count=0, seed=8)
    by = {r["method"]: r["median_eta"] for r in rows}
    ok = by["coreset"] <= by["uniform"] and by["coreset"] <= 0.05
    elapsed = time.perf_counter() - t0
    record(8, "holdout relative error", ok,
           f"median eta coreset {by['coreset']:.4f}, uniform {by['uniform']:.4f}", elapsed, 900)


def test_streaming_and_parallel():
    t0 = time.perf_counter()
    n = 2**15
    X = generate_gmm_sample(SKEWED_K3, n, seed=21)
    one = parallel_build(X, 8, 3, 1024, rng=31, workers=1)
    eight = parallel_build(X, 8, 3, 1024, rng=31, workers=8)
    same_hash = digest(one.points, one.weights) == digest(eight.points, eight.weights)

    thetas = probe_params(X, 3, 1e-3, 50, rng=22)
    streamed, batch, high = [], [], []
    for s in range(9):
        tree = CoresetTree(2, 3, 1024, eps_target=0.1, n_estimate=n, seed=s)
        tree.extend(X.points)
        S = tree.finalize()
        bound = tree.block_size + tree.m_leaf * (math.ceil(math.log2(n / tree.block_size)) + 1)
        high.append((tree.high_water, bound))
        streamed.append(probe_max_ratio(X, S, thetas))
        batch.append(probe_max_ratio(X, build_coreset(X, 3, 1024, rng=100 + s), thetas))
    memory_ok = all(h <= b for h, b in high)
    ratio = float(np.median(streamed) / np.median(batch))
    ok = same_hash and memory_ok and ratio <= 2.0
    elapsed = time.perf_counter() - t0
    record(9, "streaming and parallel", ok,
           f"1 vs 8 workers identical={same_hash}; high water {max(h for h, _ in high)} <= {high[0][1]} points; "
           f"median probe ratio streamed {np.median(streamed):.4f} vs batch {np.median(batch):.4f} ({ratio:.2f}x)",
           elapsed, 300)


def test_format_round_trips(tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    checks = {}
    X = DataSet(rng.normal(size=(500, 4)) * 1e6)
    save_points(tmp_path / "x.bin", X)
    back = load_points(tmp_path / "x.bin")
    checks["dataset"] = back.points.tobytes() == X.points.tobytes()

    C = build_coreset(X, 3, 100, rng=1)
    save_weighted(tmp_path / "c.bin", C)
    cb = load_points(tmp_path / "c.bin")
    checks["coreset"] = cb.points.tobytes() == C.points.tobytes() and cb.weights.tobytes() == C.weights.tobytes()

    theta = random_params(3, 4, 1e-3, 2)
    save_params(tmp_path / "t.txt", theta)
    tb = load_params(tmp_path / "t.txt")
    checks["theta"] = all(getattr(tb, a).tobytes() == getattr(theta, a).tobytes()
                          for a in ("weights", "means", "covariances")) and tb.lam == theta.lam

    P = rng.normal(size=(1024 * 5 + 300, 3))
    full = CoresetTree(3, 2, 128, seed=5)
    full.extend(P)
    part = CoresetTree(3, 2, 128, seed=5)
    part.extend(P[:2500])
    part.save(tmp_path / "tree.ckpt")
    resumed = CoresetTree.load(tmp_path / "tree.ckpt")
    resumed.save(tmp_path / "tree2.ckpt")
    stable = (tmp_path / "tree.ckpt").read_bytes() == (tmp_path / "tree2.ckpt").read_bytes()
    resumed.extend(P[2500:])
    a, b = full.finalize(), resumed.finalize()
    checks["checkpoint"] = stable and digest(a.points, a.weights) == digest(b.points, b.weights)
    elapsed = time.perf_counter() - t0
    record(10, "format round trips", all(checks.values()),
           ", ".join(f"{k} {'exact' if v else 'MISMATCH'}" for k, v in checks.items()), elapsed, 10)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
