import math

import numpy as np
import pytest

from gmm_coreset import (
    Coreset,
    CoresetMeta,
    CoresetTree,
    DataSet,
    build_coreset,
    compose_budget,
    compress_coreset,
    cost_of_set,
    epsilon_schedule,
    merge_coresets,
    parallel_build,
    stream_finalize,
    stream_insert,
)
from gmm_coreset.compose import _STREAM_LEAF, _Block, _substream
from gmm_coreset.gmm import random_params


def coreset(rng, n=20, d=2):
    return Coreset(rng.normal(size=(n, d)), rng.uniform(0.5, 2.0, size=n), CoresetMeta(n, n, 0.05, 0, float(n)))


class TestMerge:
    def test_cost_additivity(self, rng):
        A, B = coreset(rng), coreset(rng, 7)
        M = merge_coresets(A, B)
        for s in range(5):
            theta = random_params(3, 2, 0.01, s)
            assert cost_of_set(M, theta) == pytest.approx(cost_of_set(A, theta) + cost_of_set(B, theta), rel=1e-13)
        assert len(M) == len(A) + len(B)
        assert M.meta.source_n == 27 and M.meta.epsilon_budget == 0.05
        assert M.total_weight == pytest.approx(A.total_weight + B.total_weight, rel=1e-15)

    def test_empty_is_identity(self, rng):
        A = coreset(rng)
        M = merge_coresets(A, Coreset.empty(2))
        assert np.array_equal(M.points, A.points) and np.array_equal(M.weights, A.weights)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            merge_coresets(coreset(rng, d=2), coreset(rng, d=3))


class TestCompress:
    def test_budgets(self):
        assert compose_budget(0.1, 0.1) == pytest.approx(0.21, abs=1e-15)
        assert compose_budget(0.0, 0.0) == 0.0

    def test_single_point(self):
        C = Coreset([[1.0, 2.0]], [5.5], CoresetMeta(100, 1))
        out = compress_coreset(C, 3, 10, rng=0, step_epsilon=0.1)
        assert len(out) == 1 and out.total_weight == pytest.approx(5.5, rel=1e-15)
        assert out.meta.source_n == 100 and out.meta.epsilon_budget == pytest.approx(0.1)

    def test_empty(self):
        with pytest.raises(ValueError):
            compress_coreset(Coreset.empty(2), 2, 10)

    def test_expected_total_weight(self, rng):
        C = coreset(rng, 200)
        totals = [compress_coreset(C, 3, 40, rng=s).total_weight for s in range(300)]
        se = np.std(totals, ddof=1) / math.sqrt(300)
        assert abs(np.mean(totals) - C.total_weight) <= 5 * se


class TestSchedule:
    def test_example(self):
        assert epsilon_schedule(0.6, 2**10) == pytest.approx(0.01, rel=1e-15)

    def test_level_product_sweep(self):
        for e in range(1, 31):
            n = 2**e
            for eps in (0.01, 0.1, 0.5, 0.99):
                ep = epsilon_schedule(eps, n)
                assert (1 + ep) ** math.ceil(math.log2(n)) <= 1 + eps / 3
                assert (1 + eps / 3) ** 2 <= 1 + eps

    @pytest.mark.parametrize("eps, n", [(0.0, 16), (1.0, 16), (0.1, 1)])
    def test_invalid(self, eps, n):
        with pytest.raises(ValueError):
            epsilon_schedule(eps, n)


def feed(tree, rng, count):
    for x in rng.normal(size=(count, tree.dim)):
        stream_insert(tree, x)


class TestTree:
    def test_block_size_default(self):
        assert CoresetTree(2, 2, 100).block_size == 1024
        assert CoresetTree(2, 2, 700).block_size == 1400

    @pytest.mark.parametrize("blocks", range(1, 10))
    def test_occupancy_is_binary_counter(self, rng, blocks):
        tree = CoresetTree(2, 2, 16, block_size=64, seed=1)
        feed(tree, rng, 64 * blocks)
        assert tree.buffer_len == 0
        expected = [i for i in range(8) if blocks >> i & 1]
        assert tree.occupied_levels() == expected
        for i in expected:
            C = tree.levels[i]
            assert C.meta.level == i and C.meta.source_n == 64 * 2**i

    def test_one_block(self, rng):
        tree = CoresetTree(2, 2, 16, block_size=64)
        feed(tree, rng, 64)
        assert tree.occupied_levels() == [0] and tree.buffer_len == 0

    def test_memory_bound(self, rng):
        tree = CoresetTree(2, 2, 32, block_size=128, seed=3)
        n = 128 * 37 + 5
        for x in rng.normal(size=(n, 2)):
            stream_insert(tree, x)
            bound = tree.block_size + tree.m_leaf * len(tree.occupied_levels())
            assert tree.stored_points <= bound + tree.m_leaf
        limit = tree.block_size + tree.m_leaf * (math.ceil(math.log2(n / tree.block_size)) + 1)
        assert tree.high_water <= limit

    def test_finalize_one_block_matches_build(self, rng):
        P = rng.normal(size=(64, 2))
        tree = CoresetTree(2, 2, 16, block_size=64, seed=7)
        tree.extend(P)
        out = stream_finalize(tree)
        ref = build_coreset(_Block(P), 2, 16, 0.1, _substream(7, _STREAM_LEAF, 0), epsilon=tree.eps_prime)
        assert np.array_equal(out.points, ref.points) and np.array_equal(out.weights, ref.weights)
        assert out.meta.stats["height"] == 1
        assert out.meta.epsilon_budget == pytest.approx(tree.eps_prime)

    def test_finalize_partial_buffer(self, rng):
        tree = CoresetTree(2, 2, 16, block_size=64, seed=7)
        feed(tree, rng, 64 * 3 + 10)
        C = stream_finalize(tree, m=20)
        assert len(C) <= 20 and C.meta.source_n == 64 * 3 + 10
        assert C.meta.epsilon_budget > tree.eps_prime
        # finalize leaves the tree untouched
        assert tree.buffer_len == 10 and tree.occupied_levels() == [0, 1]

    def test_empty_stream(self):
        with pytest.raises(ValueError):
            CoresetTree(2, 2, 16).finalize()

    def test_dimension_checked(self):
        with pytest.raises(ValueError):
            CoresetTree(2, 2, 16).insert([1.0, 2.0, 3.0])

    def test_n_estimate_doubles(self, rng):
        tree = CoresetTree(1, 1, 8, block_size=16, n_estimate=32)
        e0 = tree.eps_prime
        feed(tree, rng, 100)
        assert tree.n_estimate == 128 and tree.eps_prime < e0

    def test_checkpoint_resume(self, rng, tmp_path):
        P = rng.normal(size=(64 * 5 + 17, 3))
        full = CoresetTree(3, 2, 16, block_size=64, seed=4)
        full.extend(P)
        half = CoresetTree(3, 2, 16, block_size=64, seed=4)
        half.extend(P[:200])
        half.save(tmp_path / "t.ckpt")
        resumed = CoresetTree.load(tmp_path / "t.ckpt")
        resumed.extend(P[200:])
        a, b = full.finalize(), resumed.finalize()
        assert np.array_equal(a.points, b.points) and np.array_equal(a.weights, b.weights)
        full.save(tmp_path / "a.ckpt")
        resumed.save(tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_bad_checkpoint(self, tmp_path):
        (tmp_path / "x").write_bytes(b"nope" + bytes(20))
        with pytest.raises(ValueError):
            CoresetTree.load(tmp_path / "x")


class TestParallel:
    def test_one_partition_is_build(self, blobs):
        out = parallel_build(blobs, 1, 3, 50, rng=np.random.default_rng(5))
        leaf_rng = np.random.default_rng(5).spawn(1)[0]
        ref = build_coreset(blobs, 3, 50, 0.1, leaf_rng)
        assert np.array_equal(out.points, ref.points) and np.array_equal(out.weights, ref.weights)
        assert out.meta.stats["depth"] == 0

    @pytest.mark.parametrize("parts, depth", [(2, 1), (4, 2), (5, 3), (8, 3)])
    def test_depth(self, blobs, parts, depth):
        out = parallel_build(blobs, parts, 3, 40, rng=0)
        assert out.meta.stats["depth"] == depth and out.meta.source_n == blobs.n

    def test_workers_do_not_matter(self, blobs):
        a = parallel_build(blobs, 6, 3, 40, rng=9, workers=1)
        b = parallel_build(blobs, 6, 3, 40, rng=9, workers=4)
        assert a.points.tobytes() == b.points.tobytes() and a.weights.tobytes() == b.weights.tobytes()

    def test_union_then_compress(self, blobs):
        out = parallel_build(blobs, 4, 3, 40, rng=0, mode="union_then_compress", epsilon=0.3)
        assert out.meta.stats["depth"] == 1 and len(out) <= 40
        assert out.meta.epsilon_budget == pytest.approx(compose_budget(0.1, 0.1))

    def test_weighted_input_keeps_weights(self, rng):
        X = DataSet(rng.normal(size=(300, 2)), np.full(300, 3.0))
        totals = [parallel_build(X, 3, 2, 100, rng=s).total_weight for s in range(40)]
        assert np.mean(totals) == pytest.approx(900.0, rel=0.1)

    def test_bad_arguments(self, blobs):
        with pytest.raises(ValueError):
            parallel_build(blobs, 0, 3, 40)
        with pytest.raises(ValueError):
            parallel_build(blobs, 2, 3, 40, mode="star")
