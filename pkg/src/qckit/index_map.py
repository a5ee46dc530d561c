"""Sparse output-to-input support maps, their construction, and the on-disk cache.

For output point ``y_j`` the map lists every input index ``i`` with
``||y_j - x_i||_2 < alpha`` (strict), ascending.  Storage is CSR-like:
``indices[indptr[j]:indptr[j+1]]``.
"""

from __future__ import annotations

import itertools
import logging
import os
import struct
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError, FormatError
from .mesh import Mesh

log = logging.getLogger(__name__)

MAP_MAGIC = b"QCMAP001"
_CHUNK_ELEMS = 4_000_000


@dataclass
class OpCounter:
    """Work counters for the complexity instrumentation."""

    distance_evals: int = 0
    kernel_evals: int = 0
    macs: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def add(self, distance_evals=0, kernel_evals=0, macs=0):
        with self._lock:
            self.distance_evals += int(distance_evals)
            self.kernel_evals += int(kernel_evals)
            self.macs += int(macs)

    def reset(self):
        with self._lock:
            self.distance_evals = self.kernel_evals = self.macs = 0


@dataclass(eq=False)
class IndexMap:
    alpha: float
    indptr: np.ndarray
    indices: np.ndarray
    n_in: int | None = None

    @property
    def n_out(self) -> int:
        return len(self.indptr) - 1

    @property
    def n_pairs(self) -> int:
        return int(self.indptr[-1])

    def pairs(self, j: int) -> np.ndarray:
        return self.indices[self.indptr[j] : self.indptr[j + 1]]

    def counts(self) -> np.ndarray:
        return np.diff(self.indptr)

    def rows(self) -> np.ndarray:
        """Output index of every stored pair."""
        return np.repeat(np.arange(self.n_out), self.counts())

    @property
    def stats(self) -> dict:
        c = self.counts()
        return {
            "mean": float(c.mean()) if len(c) else 0.0,
            "max": int(c.max()) if len(c) else 0,
            "empty": int(np.sum(c == 0)),
            "pairs": self.n_pairs,
        }

    def __eq__(self, other):
        if not isinstance(other, IndexMap):
            return NotImplemented
        return (
            self.alpha == other.alpha
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )


def norms(z: np.ndarray) -> np.ndarray:
    # single definition so map construction and bump evaluation agree bitwise
    return np.sqrt(np.sum(z * z, axis=-1))


def _brute_chunk(X, Y, alpha, start, stop):
    d = norms(Y[start:stop, None, :] - X[None, :, :])
    rows, cols = np.nonzero(d < alpha)
    return rows + start, cols, (stop - start) * len(X)


def _bucket_pairs(X, Y, alpha):
    """Candidate pairs from the 3**D neighbouring cells of side alpha."""
    dim = X.shape[1]
    origin = np.minimum(X.min(axis=0), Y.min(axis=0))
    ci = np.floor((X - origin) / alpha).astype(np.int64)
    co = np.floor((Y - origin) / alpha).astype(np.int64)
    extent = np.maximum(ci.max(axis=0), co.max(axis=0)) + 3
    if np.prod(extent.astype(float)) > 2.0**62:
        return None
    strides = np.cumprod(np.concatenate([[1], extent[:0:-1]]))[::-1]
    keys_in = (ci + 1) @ strides
    order = np.argsort(keys_in, kind="stable")
    sorted_keys = keys_in[order]

    rows_all, cols_all = [], []
    n_candidates = 0
    for off in itertools.product((-1, 0, 1), repeat=dim):
        keys_out = (co + 1 + np.asarray(off)) @ strides
        lo = np.searchsorted(sorted_keys, keys_out, side="left")
        hi = np.searchsorted(sorted_keys, keys_out, side="right")
        lengths = hi - lo
        total = int(lengths.sum())
        if total == 0:
            continue
        rows = np.repeat(np.arange(len(Y)), lengths)
        seg_start = np.repeat(lo - np.concatenate([[0], np.cumsum(lengths)[:-1]]), lengths)
        cols = order[seg_start + np.arange(total)]
        n_candidates += total
        keep = norms(Y[rows] - X[cols]) < alpha
        rows_all.append(rows[keep])
        cols_all.append(cols[keep])
    if rows_all:
        rows = np.concatenate(rows_all)
        cols = np.concatenate(cols_all)
    else:
        rows = cols = np.empty(0, dtype=np.int64)
    return rows, cols, n_candidates


def _to_csr(rows, cols, n_out):
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    indptr = np.zeros(n_out + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n_out), out=indptr[1:])
    return indptr, cols.astype(np.int64)


def build_index_map(
    inp: Mesh,
    out: Mesh,
    alpha: float,
    counter: OpCounter | None = None,
    method: str = "auto",
    workers: int = 1,
) -> IndexMap:
    """Exact support map between two meshes.

    ``method="brute"`` checks all ``N * N_out`` pairs (the reference path);
    ``"bucket"`` only checks pairs in neighbouring cells of side ``alpha``.
    Both give identical maps.  ``workers`` splits the brute path over output
    chunks; the result does not depend on it.
    """
    if not alpha > 0:
        raise ConfigurationError(f"alpha must be positive, got {alpha}")
    if inp.dim != out.dim:
        raise ConfigurationError(f"mesh dimensions differ: {inp.dim} vs {out.dim}")
    X, Y = inp.points, out.points
    if method == "auto":
        method = "bucket" if inp.count * out.count > 1_000_000 else "brute"

    result = None
    if method == "bucket":
        result = _bucket_pairs(X, Y, alpha)
    elif method != "brute":
        raise ConfigurationError(f"unknown index-map method {method!r}")
    if result is None:
        step = max(1, _CHUNK_ELEMS // max(1, len(X) * X.shape[1]))
        bounds = [(s, min(s + step, len(Y))) for s in range(0, len(Y), step)]
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                parts = list(pool.map(lambda b: _brute_chunk(X, Y, alpha, *b), bounds))
        else:
            parts = [_brute_chunk(X, Y, alpha, *b) for b in bounds]
        rows = np.concatenate([p[0] for p in parts])
        cols = np.concatenate([p[1] for p in parts])
        result = rows, cols, sum(p[2] for p in parts)

    rows, cols, n_checked = result
    if counter is not None:
        counter.add(distance_evals=n_checked)
    indptr, indices = _to_csr(rows, cols, len(Y))
    imap = IndexMap(float(alpha), indptr, indices, n_in=inp.count)
    empty = imap.stats["empty"]
    if empty:
        log.warning("%d of %d output points have no input inside alpha=%g", empty, imap.n_out, alpha)
    return imap


def mean_neighbor_count(inp: Mesh, out: Mesh, alpha: float) -> float:
    res = _bucket_pairs(inp.points, out.points, alpha)
    if res is None:
        res = _brute_chunk(inp.points, out.points, alpha, 0, out.count)
    return len(res[0]) / out.count


def covering_radius(inp: Mesh, out: Mesh) -> float:
    """Largest distance from an output point to its nearest input point.

    Any support radius strictly above this leaves no output point with an
    empty neighbour list.
    """
    d, _ = cKDTree(inp.points).query(out.points, k=1)
    return float(np.max(d))


def choose_alpha(inp: Mesh, out: Mesh, target_S: float, rel_tol: float = 1e-12) -> float:
    """Support radius whose mean neighbour count is closest to ``target_S``.

    Bisection locates the radius where the mean count crosses the target;
    the result is then moved to the middle of the closer plateau of the
    (piecewise constant) count so it is insensitive to round-off.
    """
    if target_S < 1:
        raise ConfigurationError("target_S must be at least 1")
    if target_S > inp.count:
        raise ConfigurationError(f"target_S={target_S} exceeds the {inp.count} input points")

    if inp.count > 1:
        d, _ = cKDTree(inp.points).query(inp.points, k=2)
        gaps = d[:, 1][d[:, 1] > 0]
        a_min = float(gaps.min()) if len(gaps) else 1e-12
    else:
        a_min = 1e-12
    both = np.vstack([inp.points, out.points])
    diameter = float(np.linalg.norm(both.max(axis=0) - both.min(axis=0)))
    a_max = diameter * (1 + 1e-9) + 1e-12

    cache = {}

    def m(a):
        if a not in cache:
            cache[a] = mean_neighbor_count(inp, out, a)
        return cache[a]

    def bisect(lo, hi, go_right):
        while hi - lo > rel_tol * hi:
            mid = 0.5 * (lo + hi)
            if go_right(mid):
                lo = mid
            else:
                hi = mid
        return lo, hi

    if m(a_min) >= target_S:
        return a_min
    lo, hi = bisect(a_min, a_max, lambda a: m(a) < target_S)
    jump = 0.5 * (lo + hi)
    m_lo, m_hi = m(lo), m(hi)
    if abs(m_lo - target_S) < abs(m_hi - target_S):
        if m(a_min) == m_lo:
            edge = a_min
        else:
            _, edge = bisect(a_min, lo, lambda a: m(a) != m_lo)
        alpha = 0.5 * (edge + jump)
        chosen = m_lo
    else:
        if m(a_max) == m_hi:
            return a_max
        edge, _ = bisect(hi, a_max, lambda a: m(a) == m_hi)
        alpha = 0.5 * (jump + edge)
        chosen = m_hi
    if abs(chosen - target_S) > 0.2 * target_S:
        log.warning("mean support count %.2f misses target %.2f by more than 20%%", chosen, target_S)
    return alpha


def save_index_map(imap: IndexMap, path) -> None:
    counts = imap.counts().astype("<u4")
    body = np.empty(imap.n_out + imap.n_pairs, dtype="<u4")
    len_pos = imap.indptr[:-1] + np.arange(imap.n_out)
    mask = np.ones(len(body), dtype=bool)
    mask[len_pos] = False
    body[len_pos] = counts
    body[mask] = imap.indices
    header = MAP_MAGIC + struct.pack("<dQ", imap.alpha, imap.n_out)
    Path(path).write_bytes(header + body.tobytes())


def load_index_map(path) -> IndexMap:
    data = Path(path).read_bytes()
    if len(data) < 24 or data[:8] != MAP_MAGIC:
        raise FormatError(f"{path}: not an index-map cache (bad magic)")
    alpha, n_out = struct.unpack_from("<dQ", data, 8)
    if (len(data) - 24) % 4:
        raise FormatError(f"{path}: truncated index-map payload")
    words = np.frombuffer(data, dtype="<u4", offset=24)
    counts = np.empty(n_out, dtype=np.int64)
    pos = 0
    starts = np.empty(n_out, dtype=np.int64)
    for j in range(n_out):
        if pos >= len(words):
            raise FormatError(f"{path}: truncated at output {j} of {n_out}")
        counts[j] = words[pos]
        starts[j] = pos + 1
        pos += 1 + int(words[pos])
    if pos != len(words):
        raise FormatError(f"{path}: payload length mismatch ({pos} words expected, {len(words)} found)")
    indptr = np.zeros(n_out + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    mask = np.ones(len(words), dtype=bool)
    mask[starts - 1] = False
    return IndexMap(float(alpha), indptr, words[mask].astype(np.int64))


def cache_dir() -> Path:
    return Path(os.environ.get("QCKIT_CACHE_DIR", Path.home() / ".cache" / "qckit"))


def cache_path(inp: Mesh, out: Mesh, alpha: float, directory=None) -> Path:
    directory = Path(directory) if directory is not None else cache_dir()
    return directory / f"{inp.fingerprint()}-{out.fingerprint()}-{float(alpha).hex()}.qcmap"


def cached_index_map(inp: Mesh, out: Mesh, alpha: float, counter=None, directory=None, method="auto"):
    """Load the map from the cache directory or build and store it.

    Returns ``(map, hit)``.
    """
    path = cache_path(inp, out, alpha, directory)
    if path.exists():
        try:
            imap = load_index_map(path)
        except FormatError as exc:
            log.warning("ignoring unreadable cache %s: %s", path, exc)
        else:
            if imap.n_out == out.count and (imap.n_pairs == 0 or imap.indices.max() < inp.count):
                imap.n_in = inp.count
                log.info("cache hit %s", path.name)
                return imap, True
            log.warning("cache %s does not match the meshes, rebuilding", path.name)
    imap = build_index_map(inp, out, alpha, counter, method=method)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_index_map(imap, path)
    log.info("cache miss, wrote %s", path.name)
    return imap, False
