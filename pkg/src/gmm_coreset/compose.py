"""Merge-and-compress composition of coresets: streaming tree and partitioned builds."""

from __future__ import annotations

import io
import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict

import numpy as np

from .coreset import Coreset, CoresetMeta, build_coreset
from .dataset import _as_points, _as_weights, _read_binary_stream, write_binary

CHECKPOINT_MAGIC = b"GMCT"
CHECKPOINT_VERSION = 1

_STREAM_LEAF, _STREAM_MERGE, _STREAM_FINAL = 0, 1, 2


def compose_budget(eps, step):
    """Error budget after re-coreseting an eps-coreset with a step-coreset."""
    return (1.0 + eps) * (1.0 + step) - 1.0


def epsilon_schedule(eps_target, n_estimate):
    """Per-level budget eps / (6 log2 n)."""
    if not 0 < eps_target < 1:
        raise ValueError(f"eps_target must be in (0, 1), got {eps_target}")
    if n_estimate < 2:
        raise ValueError("n_estimate must be >= 2")
    return eps_target / (6.0 * math.log2(n_estimate))


def merge_coresets(C1, C2):
    """Union of two coresets; costs add exactly."""
    if C1.dim != C2.dim:
        raise ValueError(f"dimension mismatch: {C1.dim} vs {C2.dim}")
    a, b = C1.meta, C2.meta
    sw = [x for x in (a.source_weight, b.source_weight) if not math.isnan(x)]
    meta = CoresetMeta(
        source_n=a.source_n + b.source_n,
        m_requested=a.m_requested + b.m_requested,
        epsilon_budget=max(a.epsilon_budget, b.epsilon_budget),
        level=max(a.level, b.level),
        source_weight=float(sum(sw)) if sw else float("nan"),
    )
    return Coreset(np.vstack([C1.points, C2.points]), np.concatenate([C1.weights, C2.weights]), meta)


def merge_all(coresets):
    out = coresets[0]
    for C in coresets[1:]:
        out = merge_coresets(out, C)
    return out


def compress_coreset(C, k, m, delta=0.1, rng=None, step_epsilon=0.0, seeding="kmeanspp", lam=1e-3, level=None):
    """Coreset of a weighted coreset; the budget composes as (1+eps)(1+step)-1."""
    if len(C) == 0:
        raise ValueError("cannot compress an empty coreset")
    out = build_coreset(C, k, m, delta, rng, seeding=seeding, lam=lam)
    return out.with_meta(
        source_n=C.meta.source_n,
        epsilon_budget=compose_budget(C.meta.epsilon_budget, step_epsilon),
        level=C.meta.level if level is None else level,
        source_weight=C.meta.source_weight,
    )


def _substream(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


class CoresetTree:
    """Streaming merge-and-compress state.

    Points accumulate in a leaf buffer of ``block_size`` rows; each full
    buffer becomes a level-0 coreset, and two coresets on the same level are
    merged and compressed into one on the next level, like carries in a
    binary counter. At most one coreset is kept per level.

    ``block_size`` defaults to max(2 m_leaf, 1024). The per-level budget is
    eps_target / (6 log2 n_estimate); ``n_estimate`` doubles whenever the
    stream outgrows it, and each coreset keeps the budget it was built with.
    """

    def __init__(self, dim, k, m_leaf, eps_target=0.1, n_estimate=2**20, delta=0.1, seed=0,
                 seeding="kmeanspp", lam=1e-3, block_size=None):
        self.dim = int(dim)
        self.k = int(k)
        self.m_leaf = int(m_leaf)
        self.block_size = int(block_size or max(2 * self.m_leaf, 1024))
        self.eps_target = float(eps_target)
        self.n_estimate = int(max(2, n_estimate))
        self.eps_prime = epsilon_schedule(self.eps_target, self.n_estimate)
        self.delta = float(delta)
        self.seed = int(seed)
        self.seeding = seeding
        self.lam = float(lam)
        self.levels = []
        self.buffer = np.empty((self.block_size, self.dim))
        self.buffer_len = 0
        self.n_seen = 0
        self.blocks_built = 0
        self.merges = 0
        self.high_water = 0

    @property
    def stored_points(self):
        return self.buffer_len + sum(len(C) for C in self.levels if C is not None)

    def occupied_levels(self):
        return [i for i, C in enumerate(self.levels) if C is not None]

    def insert(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.dim:
            raise ValueError(f"point has dimension {x.shape[0]}, tree expects {self.dim}")
        self.buffer[self.buffer_len] = x
        self.buffer_len += 1
        self.n_seen += 1
        while self.n_seen > self.n_estimate:
            self.n_estimate *= 2
            self.eps_prime = epsilon_schedule(self.eps_target, self.n_estimate)
        self.high_water = max(self.high_water, self.stored_points)
        if self.buffer_len == self.block_size:
            self._flush()

    def extend(self, points):
        for x in np.atleast_2d(np.asarray(points, dtype=np.float64)):
            self.insert(x)

    def _leaf(self, points, index):
        C = build_coreset(
            _Block(points), self.k, self.m_leaf, self.delta, _substream(self.seed, _STREAM_LEAF, index),
            seeding=self.seeding, lam=self.lam, epsilon=self.eps_prime, level=0,
        )
        return C

    def _flush(self):
        leaf = self._leaf(self.buffer[: self.buffer_len].copy(), self.blocks_built)
        self.blocks_built += 1
        self.high_water = max(self.high_water, self.stored_points + len(leaf))
        self.buffer_len = 0
        carry = leaf
        level = 0
        while level < len(self.levels) and self.levels[level] is not None:
            merged = merge_coresets(self.levels[level], carry)
            self.levels[level] = None
            carry = compress_coreset(
                merged, self.k, self.m_leaf, self.delta, _substream(self.seed, _STREAM_MERGE, self.merges),
                step_epsilon=self.eps_prime, seeding=self.seeding, lam=self.lam, level=level + 1,
            )
            self.merges += 1
            level += 1
        if level == len(self.levels):
            self.levels.append(None)
        self.levels[level] = carry
        self.high_water = max(self.high_water, self.stored_points)

    def finalize(self, k=None, m=None, rng=None):
        """Coreset of everything seen so far; the tree itself is left untouched.

        A nonempty partial buffer becomes its own leaf. If the stored pieces
        already form a single coreset of at most m points it is returned
        as is; otherwise their union is compressed once more with budget
        eps_target / 3.
        """
        if self.n_seen == 0:
            raise ValueError("empty stream")
        k = self.k if k is None else k
        m = self.m_leaf if m is None else m
        pieces = [C for C in self.levels if C is not None]
        if self.buffer_len:
            pieces.append(self._leaf(self.buffer[: self.buffer_len].copy(), self.blocks_built))
        union = merge_all(pieces)
        height = len(self.levels)
        if len(pieces) == 1 and len(union) <= m:
            out = union
        else:
            rng = _substream(self.seed, _STREAM_FINAL, self.n_seen) if rng is None else rng
            out = compress_coreset(union, k, m, self.delta, rng, step_epsilon=self.eps_target / 3.0,
                                   seeding=self.seeding, lam=self.lam, level=height)
        stats = dict(out.meta.stats)
        stats.update(height=height, eps_prime=self.eps_prime, n_seen=self.n_seen,
                     high_water=self.high_water, pieces=len(pieces))
        return out.with_meta(stats=stats)

    # -- checkpointing ----------------------------------------------------

    def _header(self):
        return {
            "dim": self.dim, "k": self.k, "m_leaf": self.m_leaf, "block_size": self.block_size,
            "eps_target": self.eps_target, "n_estimate": self.n_estimate, "eps_prime": self.eps_prime,
            "delta": self.delta, "seed": self.seed, "seeding": self.seeding, "lam": self.lam,
            "n_seen": self.n_seen, "blocks_built": self.blocks_built, "merges": self.merges,
            "high_water": self.high_water,
            "levels": [None if C is None else _meta_dict(C.meta) for C in self.levels],
        }

    def save(self, path):
        head = json.dumps(self._header(), sort_keys=True).encode()
        buf = io.BytesIO()
        buf.write(CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(head)))
        buf.write(head)
        for C in self.levels:
            if C is not None:
                write_binary(buf, C.points, C.weights)
        write_binary(buf, self.buffer[: self.buffer_len], None)
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != CHECKPOINT_MAGIC:
                raise ValueError(f"{path}: not a coreset tree checkpoint")
            version, hlen = struct.unpack("<II", fh.read(8))
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"{path}: unsupported checkpoint version {version}")
            h = json.loads(fh.read(hlen))
            tree = cls(h["dim"], h["k"], h["m_leaf"], h["eps_target"], h["n_estimate"], h["delta"],
                       h["seed"], h["seeding"], h["lam"], h["block_size"])
            for key in ("n_estimate", "eps_prime", "n_seen", "blocks_built", "merges", "high_water"):
                setattr(tree, key, h[key])
            for md in h["levels"]:
                if md is None:
                    tree.levels.append(None)
                    continue
                pts, w = _read_binary_stream(fh, path, allow_empty=True)
                tree.levels.append(Coreset(pts, w, CoresetMeta(**md)))
            pts, _ = _read_binary_stream(fh, path, allow_empty=True)
            tree.buffer[: pts.shape[0]] = pts
            tree.buffer_len = pts.shape[0]
        return tree


def _meta_dict(meta):
    d = asdict(meta)
    d["stats"] = {k: v for k, v in d["stats"].items() if isinstance(v, (int, float, str, bool))}
    return d


class _Block:
    __slots__ = ("points", "weights")

    def __init__(self, points, weights=None):
        self.points = points
        self.weights = np.ones(points.shape[0]) if weights is None else weights


def stream_insert(tree, x):
    tree.insert(x)


def stream_finalize(tree, k=None, m=None, rng=None):
    return tree.finalize(k, m, rng)


def _partition_slices(n, parts):
    bounds = np.linspace(0, n, parts + 1).round().astype(int)
    return [slice(bounds[i], bounds[i + 1]) for i in range(parts)]


def parallel_build(X, partitions, k, m, delta=0.1, rng=None, mode="tree", workers=1,
                   seeding="kmeanspp", lam=1e-3, epsilon=0.1):
    """Coreset of X built from P contiguous partitions.

    Partition i uses the i-th stream spawned from ``rng``; the reduction uses
    streams spawned afterwards, one per merge, in fixed pair order. The
    output therefore depends on (rng, P) but not on ``workers``.

    ``mode="tree"`` merges and compresses pairs level by level (depth
    ceil(log2 P)); ``mode="union_then_compress"`` merges all partition
    coresets and compresses once.
    """
    if partitions < 1:
        raise ValueError("partitions must be >= 1")
    if mode not in ("tree", "union_then_compress"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(rng)
    P = _as_points(X)
    W = _as_weights(X)
    n = P.shape[0]
    parts = min(partitions, n)
    leaf_rngs = rng.spawn(parts)
    reduce_root = rng.spawn(1)[0]
    slices = _partition_slices(n, parts)
    if mode == "tree":
        leaf_eps = epsilon_schedule(epsilon, max(2, n)) if epsilon > 0 else 0.0
        step_eps = leaf_eps
    else:
        leaf_eps = step_eps = epsilon / 3.0

    def leaf(i):
        return build_coreset(_Block(P[slices[i]], W[slices[i]]), k, m, delta, leaf_rngs[i], seeding=seeding, lam=lam, epsilon=leaf_eps)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        current = list(pool.map(leaf, range(parts)))
        depth = 0
        if parts > 1 and mode == "tree":
            while len(current) > 1:
                pairs = [(current[i], current[i + 1]) for i in range(0, len(current) - 1, 2)]
                round_rngs = reduce_root.spawn(len(pairs))
                depth += 1

                def reduce(j, depth=depth, pairs=pairs, round_rngs=round_rngs):
                    a, b = pairs[j]
                    return compress_coreset(merge_coresets(a, b), k, m, delta, round_rngs[j], step_epsilon=step_eps,
                                            seeding=seeding, lam=lam, level=depth)

                nxt = list(pool.map(reduce, range(len(pairs))))
                if len(current) % 2:
                    nxt.append(current[-1])
                current = nxt
        elif parts > 1:
            depth = 1
            current = [compress_coreset(merge_all(current), k, m, delta, reduce_root, step_epsilon=step_eps,
                                        seeding=seeding, lam=lam, level=1)]
    out = current[0]
    stats = dict(out.meta.stats)
    stats.update(partitions=parts, depth=depth, mode=mode)
    return out.with_meta(stats=stats)
