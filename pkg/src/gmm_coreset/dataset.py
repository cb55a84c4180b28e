"""Weighted point sets, file formats and squared-distance geometry."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"GMCS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQIB")

# Fixed reduction chunk; sums are taken per chunk, then over chunk totals in
# index order, so results never depend on how work is scheduled.
CHUNK = 8192


class DataError(ValueError):
    """Invalid or inconsistent input data."""


class ParseError(DataError):
    """A data file could not be parsed."""

    def __init__(self, path, where, msg):
        self.path = str(path)
        self.where = where
        super().__init__(f"{path}: {where}: {msg}")


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DataSet:
    """n points in R^d, each carrying a nonnegative weight.

    Raw input has unit weights; a weighted point stands for that many
    (possibly fractional) copies of itself, which is what lets coresets be
    re-coreseted through the same code path.
    """

    points: np.ndarray
    weights: np.ndarray

    def __init__(self, points, weights=None):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise DataError(f"points must be a non-empty n x d array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DataError("points contain non-finite coordinates")
        if weights is None:
            w = np.ones(pts.shape[0])
        else:
            w = np.asarray(weights, dtype=np.float64).reshape(-1)
            if w.shape[0] != pts.shape[0]:
                raise DataError(f"{w.shape[0]} weights for {pts.shape[0]} points")
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise DataError("weights must be finite and nonnegative")
            if not np.any(w > 0):
                raise DataError("at least one weight must be positive")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def total_weight(self):
        return chunked_sum(self.weights)

    def subset(self, idx):
        return DataSet(self.points[idx], self.weights[idx])

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"DataSet(n={self.n}, d={self.dim}, total_weight={self.total_weight:.6g})"


@dataclass(frozen=True)
class VoronoiPartition:
    """Nearest-center assignment of a point set plus per-cell statistics.

    ``cell_sizes`` counts points; ``cell_weights`` sums their weights (equal
    to the counts for unit weights). ``cell_costs`` are weighted.
    """

    assignment: np.ndarray
    sq_dist: np.ndarray
    cell_sizes: np.ndarray
    cell_weights: np.ndarray
    cell_costs: np.ndarray
    total_cost: float


def chunked_sum(values):
    """Sum along axis 0 in fixed chunks (pairwise within each chunk)."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] <= CHUNK:
        return np.sum(values, axis=0)
    parts = [np.sum(values[i : i + CHUNK], axis=0) for i in range(0, values.shape[0], CHUNK)]
    return np.sum(np.stack(parts), axis=0)


def _as_points(X):
    return X.points if hasattr(X, "points") else np.atleast_2d(np.asarray(X, dtype=np.float64))


def _as_weights(X):
    if hasattr(X, "weights"):
        return X.weights
    return np.ones(_as_points(X).shape[0])


def _check_centers(centers, d):
    B = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    if B.shape[0] < 1:
        raise ValueError("center set must be nonempty")
    if B.shape[1] != d:
        raise ValueError(f"dimension mismatch: points have d={d}, centers have d={B.shape[1]}")
    return B


def nearest_centers(points, centers):
    """Vectorised nearest center for each row of ``points``.

    Returns ``(index, squared_distance)`` arrays; ties go to the lowest index.
    """
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    B = _check_centers(centers, P.shape[1])
    n = P.shape[0]
    idx = np.empty(n, dtype=np.int64)
    d2 = np.empty(n)
    # Blocked to bound the n x beta distance matrix.
    step = max(1, min(CHUNK, 4_000_000 // max(1, B.shape[0] * P.shape[1])))
    for s in range(0, n, step):
        diff = P[s : s + step, None, :] - B[None, :, :]
        D = np.einsum("ijk,ijk->ij", diff, diff)
        j = np.argmin(D, axis=1)
        idx[s : s + step] = j
        d2[s : s + step] = D[np.arange(D.shape[0]), j]
    return idx, d2


def nearest_center(x, centers):
    """Index of the center closest to ``x`` and the squared distance to it."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    idx, d2 = nearest_centers(x, centers)
    return int(idx[0]), float(d2[0])


def phi(X, centers):
    """Weighted quantization cost sum_x w(x) d(x, B)^2."""
    _, d2 = nearest_centers(_as_points(X), centers)
    return float(chunked_sum(_as_weights(X) * d2))


def voronoi_partition(X, centers):
    P = _as_points(X)
    w = _as_weights(X)
    B = _check_centers(centers, P.shape[1])
    idx, d2 = nearest_centers(P, B)
    beta = B.shape[0]
    wd2 = w * d2
    sizes = np.bincount(idx, minlength=beta)
    cw = np.bincount(idx, weights=w, minlength=beta)
    cc = np.bincount(idx, weights=wd2, minlength=beta)
    idx.setflags(write=False)
    d2.setflags(write=False)
    return VoronoiPartition(
        assignment=idx,
        sq_dist=d2,
        cell_sizes=sizes,
        cell_weights=cw,
        cell_costs=cc,
        total_cost=float(chunked_sum(wd2)),
    )


def sample_gaussian(mean, cov, n, rng):
    """Draw n samples of N(mean, cov) through the eigendecomposition of cov."""
    mean = np.asarray(mean, dtype=np.float64)
    evals, evecs = np.linalg.eigh(np.asarray(cov, dtype=np.float64))
    evals = np.clip(evals, 0.0, None)
    z = rng.standard_normal((n, mean.shape[0]))
    return mean + (z * np.sqrt(evals)) @ evecs.T


def generate_gmm_sample(theta, n, seed=None, return_labels=False):
    """n i.i.d. draws from the mixture ``theta`` (a GmmParams).

    With ``return_labels`` the generating component of each row is returned
    alongside the DataSet.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    k, d = theta.means.shape
    comp = rng.choice(k, size=n, p=theta.weights / theta.weights.sum())
    out = np.empty((n, d))
    for j in range(k):
        sel = np.flatnonzero(comp == j)
        if sel.size:
            out[sel] = sample_gaussian(theta.means[j], theta.covariances[j], sel.size, rng)
    X = DataSet(out)
    return (X, comp) if return_labels else X


# -- file formats -------------------------------------------------------------


def _read_csv(path, weighted):
    rows = []
    width = None
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                vals = [float(tok) for tok in line.split(",")]
            except ValueError as exc:
                raise ParseError(path, f"line {lineno}", f"malformed row ({exc})") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ParseError(path, f"line {lineno}", f"expected {width} columns, got {len(vals)}")
            if not all(np.isfinite(vals)):
                raise ParseError(path, f"line {lineno}", "non-finite value")
            rows.append(vals)
    if not rows:
        raise ParseError(path, "line 1", "no data rows")
    arr = np.array(rows, dtype=np.float64)
    if weighted:
        if arr.shape[1] < 2:
            raise ParseError(path, "line 1", "weighted rows need a weight column and >= 1 coordinate")
        return arr[:, 1:], arr[:, 0]
    return arr, None


def read_binary(path, allow_empty=False):
    """Read a GMCS binary block; returns ``(points, weights_or_None)``."""
    with open(path, "rb") as fh:
        return _read_binary_stream(fh, path, allow_empty)


def _read_binary_stream(fh, path, allow_empty=False):
    head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise ParseError(path, "offset 0", "truncated header")
    magic, version, n, d, has_w = _HEADER.unpack(head)
    if magic != MAGIC:
        raise ParseError(path, "offset 0", f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ParseError(path, "offset 4", f"unsupported version {version}")
    if d < 1 or (n < 1 and not allow_empty):
        raise ParseError(path, "offset 8", f"invalid shape n={n}, d={d}")
    if has_w not in (0, 1):
        raise ParseError(path, "offset 24", f"invalid has_weights flag {has_w}")
    width = d + has_w
    nbytes = 8 * n * width
    payload = fh.read(nbytes)
    if len(payload) != nbytes:
        raise ParseError(path, f"offset {_HEADER.size + len(payload)}", "truncated payload")
    arr = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(n, width)
    if not np.all(np.isfinite(arr)):
        bad = int(np.argmax(~np.isfinite(arr).all(axis=1)))
        raise ParseError(path, f"offset {_HEADER.size + 8 * width * bad}", "non-finite value")
    if has_w:
        return arr[:, 1:].copy(), arr[:, 0].copy()
    return arr, None


def iter_point_blocks(path, format=None, rows=4096):
    """Yield coordinate blocks of at most ``rows`` rows without loading the file.

    Weights (if stored) are skipped; this feeds unit-weight streams.
    """
    fmt = _infer_format(path, format)
    if fmt == "csv":
        block = []
        width = None
        with open(path, "r") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                try:
                    vals = [float(tok) for tok in line.split(",")]
                except ValueError as exc:
                    raise ParseError(path, f"line {lineno}", f"malformed row ({exc})") from None
                if width is None:
                    width = len(vals)
                elif len(vals) != width:
                    raise ParseError(path, f"line {lineno}", f"expected {width} columns, got {len(vals)}")
                if not all(np.isfinite(vals)):
                    raise ParseError(path, f"line {lineno}", "non-finite value")
                block.append(vals)
                if len(block) == rows:
                    yield np.array(block)
                    block = []
        if width is None:
            raise ParseError(path, "line 1", "no data rows")
        if block:
            yield np.array(block)
        return
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ParseError(path, "offset 0", "truncated header")
        magic, version, n, d, has_w = _HEADER.unpack(head)
        if magic != MAGIC or version != FORMAT_VERSION or d < 1 or n < 1:
            raise ParseError(path, "offset 0", "bad header")
        width = d + has_w
        done = 0
        while done < n:
            take = min(rows, n - done)
            payload = fh.read(8 * take * width)
            if len(payload) != 8 * take * width:
                raise ParseError(path, f"offset {_HEADER.size + 8 * width * done}", "truncated payload")
            arr = np.frombuffer(payload, dtype="<f8").reshape(take, width)[:, has_w:]
            if not np.all(np.isfinite(arr)):
                raise ParseError(path, f"offset {_HEADER.size + 8 * width * done}", "non-finite value")
            done += take
            yield arr.astype(np.float64)


def write_binary(path_or_fh, points, weights=None):
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n, d = points.shape
    rows = points if weights is None else np.column_stack([weights, points])
    blob = _HEADER.pack(MAGIC, FORMAT_VERSION, n, d, 0 if weights is None else 1)
    blob += np.ascontiguousarray(rows, dtype="<f8").tobytes()
    if hasattr(path_or_fh, "write"):
        path_or_fh.write(blob)
        return
    try:
        Path(path_or_fh).write_bytes(blob)
    except OSError as exc:
        raise OSError(f"cannot write {path_or_fh}: {exc}") from exc


def _write_csv(path, points, weights):
    rows = points if weights is None else np.column_stack([weights, points])
    try:
        np.savetxt(path, rows, delimiter=",", fmt="%.17g")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _infer_format(path, fmt):
    if fmt is not None:
        return fmt
    return "csv" if str(path).endswith(".csv") else "f64le"


def load_points(path, format=None, weighted=False):
    """Load a DataSet from ``csv`` or ``f64le`` (binary) files.

    For csv, ``weighted=True`` reads the first column as weights. Binary files
    record whether weights are present, so ``weighted`` is ignored there.
    """
    fmt = _infer_format(path, format)
    if fmt == "csv":
        pts, w = _read_csv(path, weighted)
    elif fmt == "f64le":
        pts, w = read_binary(path)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    try:
        return DataSet(pts, w)
    except DataError as exc:
        raise ParseError(path, "data", str(exc)) from None


def save_points(path, X, format=None, weighted=False):
    fmt = _infer_format(path, format)
    w = X.weights if weighted else None
    if fmt == "csv":
        _write_csv(path, X.points, w)
    else:
        write_binary(path, X.points, w)


def save_weighted(path, coreset, format=None):
    """Persist (weight, point) rows; the weight column always comes first."""
    if len(coreset.weights) == 0:
        raise DataError("refusing to save an empty coreset")
    fmt = _infer_format(path, format)
    if fmt == "csv":
        _write_csv(path, coreset.points, coreset.weights)
    else:
        write_binary(path, coreset.points, coreset.weights)
