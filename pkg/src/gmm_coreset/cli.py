"""Command-line front end: ``gmcs gen | build | fit | eval | stream-demo``.

Every command writes a JSON manifest next to its output (``<output>.manifest.json``)
holding the full configuration, the seed and sha256 hashes of the files it
wrote. ``gmcs --replay MANIFEST`` re-runs a command from such a manifest.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time

import numpy as np

from .compose import CoresetTree, parallel_build
from .coreset import build_coreset, sufficient_coreset_size
from .dataset import DataError, generate_gmm_sample, iter_point_blocks, load_points, save_points, save_weighted
from .evaluate import PRESETS, evaluate, format_csv, format_table
from .gmm import NumericalError, fit_best_of, load_params, negative_log_likelihood, save_params

log = logging.getLogger("gmm_coreset")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def write_manifest(path, config, outputs, **extra):
    doc = {"config": config, "seed": config.get("seed"), "outputs": {p: sha256_file(p) for p in outputs}}
    doc.update(extra)
    with open(path, "w") as fh:
        json.dump(_jsonable(doc), fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
    return doc


def _manifest_path(args):
    return args.manifest or f"{args.output}.manifest.json"


def _require(cond, msg):
    if not cond:
        raise UsageError(msg)


def _validate(args):
    for name in ("k", "m", "n", "trials", "restarts", "partitions", "workers", "max_iters"):
        v = getattr(args, name, None)
        _require(v is None or v >= 1, f"--{name.replace('_', '-')} must be >= 1")
    _require(0 < args.delta < 1, "--delta must be in (0, 1)")
    _require(0 < args.lam < 1, "--lambda must be in (0, 1)")
    _require(args.epsilon is None or 0 < args.epsilon < 0.5, "--epsilon must be in (0, 1/2)")


# -- commands -----------------------------------------------------------------


def cmd_gen(args, config):
    _require(args.output, "gen needs --output")
    if args.theta:
        theta = load_params(args.theta)
    else:
        _require(args.preset in PRESETS, f"unknown preset {args.preset!r}")
        theta = PRESETS[args.preset](args.n, args.lam)
    X = generate_gmm_sample(theta, args.n, seed=args.seed)
    save_points(args.output, X, args.format)
    write_manifest(_manifest_path(args), config, [args.output],
                   mixture={"weights": theta.weights.tolist(), "means": theta.means.tolist()})
    log.info("wrote %d points to %s", X.n, args.output)
    return EXIT_OK


def _advisory_m(d, k, args):
    eps = args.epsilon if args.epsilon is not None else 0.1
    return sufficient_coreset_size(d, k, eps, args.delta, args.lam)


def cmd_build(args, config):
    _require(args.input and args.output, "build needs --input and --output")
    _require(args.k and args.m, "build needs --k and --m")
    t0 = time.perf_counter()
    extra = {}
    if args.mode == "stream":
        tree = None
        for block in iter_point_blocks(args.input, args.format):
            if tree is None:
                tree = CoresetTree(block.shape[1], args.k, args.m, eps_target=args.epsilon or 0.1,
                                   delta=args.delta, seed=args.seed, seeding=args.seeding, lam=args.lam)
            tree.extend(block)
        C = tree.finalize()
        d = tree.dim
        bound = tree.block_size + tree.m_leaf * (math.ceil(math.log2(max(tree.n_seen / tree.block_size, 1))) + 1)
        extra["memory"] = {"high_water_points": tree.high_water, "bound_points": bound,
                           "block_size": tree.block_size, "n_seen": tree.n_seen}
    else:
        X = load_points(args.input, args.format, args.weighted)
        d = X.dim
        if args.mode == "batch":
            C = build_coreset(X, args.k, args.m, args.delta, rng=args.seed, seeding=args.seeding, lam=args.lam,
                              epsilon=args.epsilon or 0.0)
        else:
            C = parallel_build(X, args.partitions, args.k, args.m, args.delta, rng=args.seed, workers=args.workers,
                               seeding=args.seeding, lam=args.lam, epsilon=args.epsilon or 0.1)
    wall = time.perf_counter() - t0
    save_weighted(args.output, C, args.format)
    st = C.meta.stats
    identity = {
        "score_total": st.get("score_total"),
        "expected": st.get("score_identity"),
        "relative_gap": abs(st["score_total"] / st["score_identity"] - 1.0) if st.get("score_identity") else 0.0,
    }
    write_manifest(_manifest_path(args), config, [args.output],
                   rows=len(C), total_weight=C.total_weight,
                   phi=st.get("phi"), alpha=st.get("alpha"), beta=st.get("beta"),
                   identity_check=identity, advisory_m=_advisory_m(d, args.k, args),
                   stats={k: v for k, v in st.items() if isinstance(v, (int, float, str))},
                   wall_s=wall, **extra)
    print(f"coreset: {len(C)} rows, total weight {C.total_weight:.6g}, {wall:.3f}s")
    return EXIT_OK


def cmd_fit(args, config):
    _require(args.input and args.output, "fit needs --input and --output")
    _require(args.k, "fit needs --k")
    S = load_points(args.input, args.format, args.weighted)
    npos = int(np.count_nonzero(S.weights > 0))
    if args.k > npos:
        raise DataError(f"k={args.k} exceeds the {npos} points with positive weight")
    t0 = time.perf_counter()
    theta, report, nlls = fit_best_of(S, args.k, args.lam, args.restarts, args.max_iters, args.rel_tol, args.seed)
    wall = time.perf_counter() - t0
    save_params(args.output, theta)
    write_manifest(_manifest_path(args), config, [args.output],
                   nll=negative_log_likelihood(S, theta), restart_nlls=nlls, nll_trace=report.nll_trace,
                   iterations=report.iterations, converged=report.converged, wall_s=wall)
    print(f"best of {len(nlls)}: nll {min(nlls):.10g} after {report.iterations} iterations")
    return EXIT_OK


def _parse_sizes(text):
    try:
        sizes = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--sizes must be a comma separated list of integers, got {text!r}") from None
    _require(sizes and all(s >= 1 for s in sizes), "--sizes must be positive")
    return sizes


def cmd_eval(args, config):
    _require(args.input, "eval needs --input")
    _require(args.k, "eval needs --k")
    sizes = _parse_sizes(args.sizes)
    X = load_points(args.input, args.format, args.weighted)
    t0 = time.perf_counter()
    rows, _ = evaluate(X, sizes, args.k, trials=args.trials, restarts=args.restarts, probe_count=args.probe_thetas,
                       lam=args.lam, seed=args.seed, workers=args.workers, max_iters=args.max_iters,
                       seeding=args.seeding)
    wall = time.perf_counter() - t0
    print(format_table(rows))
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(format_csv(rows))
        write_manifest(_manifest_path(args), config, [args.output], wall_s=wall)
    return EXIT_OK


def cmd_stream_demo(args, config):
    if args.input:
        blocks = iter_point_blocks(args.input, args.format)
    else:
        _require(args.preset in PRESETS, f"unknown preset {args.preset!r}")
        X = generate_gmm_sample(PRESETS[args.preset](args.n, args.lam), args.n, seed=args.seed)
        blocks = (X.points[i:i + 4096] for i in range(0, X.n, 4096))
    tree = None
    t0 = time.perf_counter()
    for block in blocks:
        if tree is None:
            tree = CoresetTree(block.shape[1], args.k or 3, args.m or 256, eps_target=args.epsilon or 0.1,
                               delta=args.delta, seed=args.seed, seeding=args.seeding, lam=args.lam)
        for x in block:
            tree.insert(x)
        log.info("seen %d, stored %d, levels %s", tree.n_seen, tree.stored_points, tree.occupied_levels())
    C = tree.finalize()
    wall = time.perf_counter() - t0
    print(f"points seen      {tree.n_seen}")
    print(f"block size       {tree.block_size}")
    print(f"occupied levels  {tree.occupied_levels()}")
    print(f"high water       {tree.high_water} points")
    print(f"final coreset    {len(C)} rows, total weight {C.total_weight:.6g}")
    print(f"wall time        {wall:.3f}s")
    if args.output:
        save_weighted(args.output, C, args.format)
        write_manifest(_manifest_path(args), config, [args.output], high_water=tree.high_water,
                       levels=tree.occupied_levels(), wall_s=wall)
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "build": cmd_build, "fit": cmd_fit, "eval": cmd_eval, "stream-demo": cmd_stream_demo}


def build_parser():
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--input")
    shared.add_argument("--output")
    shared.add_argument("--manifest", help="manifest path (default: <output>.manifest.json)")
    shared.add_argument("--k", type=int)
    shared.add_argument("--m", type=int)
    shared.add_argument("--epsilon", type=float)
    shared.add_argument("--delta", type=float, default=0.1)
    shared.add_argument("--lambda", dest="lam", type=float, default=1e-3)
    shared.add_argument("--seed", type=int, default=0)
    shared.add_argument("--workers", type=int, default=1)
    shared.add_argument("--format", choices=["csv", "f64le"])
    shared.add_argument("--weighted", action="store_true", help="csv input carries a leading weight column")
    shared.add_argument("--seeding", choices=["kmeanspp", "adaptive"], default="kmeanspp")

    p = argparse.ArgumentParser(prog="gmcs", description="Coresets for Gaussian mixture models.")
    p.add_argument("--replay", metavar="MANIFEST", help="re-run the command recorded in a manifest")
    p.add_argument("--replay-manifest", metavar="PATH", help="where the replay writes its own manifest")
    sub = p.add_subparsers(dest="command")

    g = sub.add_parser("gen", parents=[shared], help="sample a synthetic mixture")
    g.add_argument("--preset", default="spherical-k3", help=", ".join(PRESETS))
    g.add_argument("--theta", help="mixture parameter file instead of a preset")
    g.add_argument("--n", type=int, default=10000)

    b = sub.add_parser("build", parents=[shared], help="build a coreset")
    b.add_argument("--mode", choices=["batch", "stream", "parallel"], default="batch")
    b.add_argument("--partitions", type=int, default=8)

    f = sub.add_parser("fit", parents=[shared], help="weighted EM fit")
    f.add_argument("--restarts", type=int, default=1)
    f.add_argument("--max-iters", type=int, default=100)
    f.add_argument("--rel-tol", type=float, default=1e-3)

    e = sub.add_parser("eval", parents=[shared], help="coreset vs uniform subsample comparison")
    e.add_argument("--sizes", default="100,1000")
    e.add_argument("--trials", type=int, default=20)
    e.add_argument("--restarts", type=int, default=10)
    e.add_argument("--probe-thetas", type=int, default=20)
    e.add_argument("--max-iters", type=int, default=100)

    s = sub.add_parser("stream-demo", parents=[shared], help="stream a sample through the coreset tree")
    s.add_argument("--preset", default="spherical-k3")
    s.add_argument("--n", type=int, default=20000)
    return p


def _config_of(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("replay", "replay_manifest", "manifest")}


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if args.replay:
        with open(args.replay) as fh:
            config = json.load(fh)["config"]
        replay = argparse.Namespace(**config)
        replay.replay = None
        replay.manifest = args.replay_manifest
        args = replay
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    config = _config_of(args)
    try:
        _validate(args)
        return COMMANDS[args.command](args, config)
    except UsageError as exc:
        print(f"gmcs: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"gmcs: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"gmcs: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main(argv=None):
    logging.basicConfig(level=os.environ.get("GMCS_LOG", "WARNING").upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
