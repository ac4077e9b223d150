"""Quadtree hierarchical compression of dense matrices.

A matrix is stored as a quadtree whose leaves are either zero blocks or
truncated-SVD factor pairs. A block becomes a leaf when it is admissible:
all zeros, or small enough, or its (r+1)-th singular value falls below the
threshold delta. Inadmissible blocks split at ceil-midpoints into four
children (upper-left, upper-right, lower-left, lower-right).

The truncated SVD uses randomized subspace iteration (oversampling 4, two
power iterations) with a fixed seed; when the Ritz values have not
stabilized it falls back to a full dense SVD, which keeps every factor
exactly verifiable against the dense oracle.

Flop counting: each scalar multiply and each scalar add is one flop;
matmul (a x b)@(b x c) costs a*c*(2b - 1). QR and SVD costs use the fixed
conventions documented in :mod:`pgstab.krylov`. Per-leaf ``tail`` residuals
are verification bookkeeping and are not counted.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CompressionParams",
    "HNode",
    "truncated_svd",
    "admissible",
    "compress_block",
    "create_tree",
    "hmatvec",
    "hmatvec_transpose",
    "decompress",
    "leaf_error_bound",
    "structure_summary",
    "tree_stats",
    "save_hmatrix",
    "load_hmatrix",
]

INTERNAL = "internal"
ZERO = "zero"
SVD = "svd"

_OVERSAMPLE = 4
_POWER_ITERS = 2
_RITZ_TOL = 1e-9
_RNG_SEED = 20240217

_HMAT_MAGIC = b"PGHMAT01"
_HMAT_VERSION = 1


@dataclass(frozen=True)
class CompressionParams:
    """max_rank r, threshold delta, max admissible leaf size l, and the
    minimum block size below which blocks are never subdivided."""

    max_rank: int = 16
    threshold: float = 1e-7
    max_leaf_size: int = 1024
    min_block_size: int = 4

    def __post_init__(self):
        if self.max_rank < 1:
            raise ValueError("max_rank must be >= 1")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if self.max_leaf_size <= 1:
            raise ValueError("max_leaf_size must be > 1")
        if not 2 <= self.min_block_size <= self.max_leaf_size:
            raise ValueError("min_block_size must be in [2, max_leaf_size]")


class HNode:
    """Quadtree node over row range [t0, t1) and column range [s0, s1).

    ``internal`` nodes have exactly four children; ``zero`` leaves
    decompress to the zero block; ``svd`` leaves store U (rows x k),
    V = diag(sigma) @ Vt (k x cols) with the singular values folded in,
    the singular values themselves, and the exact Frobenius residual
    ``tail`` of the dropped spectrum.
    """

    __slots__ = ("t0", "t1", "s0", "s1", "kind", "children", "rank",
                 "U", "V", "sigma", "tail")

    def __init__(self, t0, t1, s0, s1, kind, children=None, rank=0,
                 U=None, V=None, sigma=None, tail=0.0):
        self.t0, self.t1, self.s0, self.s1 = t0, t1, s0, s1
        self.kind = kind
        self.children = children
        self.rank = rank
        self.U = U
        self.V = V
        self.sigma = sigma
        self.tail = tail

    @property
    def rows(self) -> int:
        return self.t1 - self.t0

    @property
    def cols(self) -> int:
        return self.s1 - self.s0

    @property
    def shape(self):
        return (self.rows, self.cols)


def _split(lo: int, hi: int) -> int:
    """Ceil-midpoint split of [lo, hi)."""
    return lo + (hi - lo + 1) // 2


def _dense_svd(block, k, counter, phase):
    a, b = block.shape
    u, s, vt = np.linalg.svd(block, full_matrices=False)
    if counter is not None:
        counter.add(phase, 10 * a * b * min(a, b))
    return u[:, :k], s[:k], vt[:k]


def truncated_svd(block, k: int, counter=None, phase: str = "svd"):
    """Leading k singular triplets (U, sigma, Vt) of a dense block.

    Randomized subspace iteration with fixed seed; falls back to a full
    dense SVD when the Ritz values of the last two iterations disagree.
    """
    block = np.asarray(block, dtype=float)
    a, b = block.shape
    if not 1 <= k <= min(a, b):
        raise ValueError(f"k={k} out of range for block {block.shape}")
    p = k + _OVERSAMPLE
    if p >= min(a, b):
        return _dense_svd(block, k, counter, phase)

    rng = np.random.default_rng(_RNG_SEED)
    omega = rng.standard_normal((b, p))
    y = block @ omega
    if counter is not None:
        counter.add(phase, a * p * (2 * b - 1))
    q, _ = np.linalg.qr(y)
    if counter is not None:
        counter.add(phase, 2 * a * p * p)
    prev = None
    converged = False
    for _ in range(_POWER_ITERS):
        z = block.T @ q
        qz, _ = np.linalg.qr(z)
        y = block @ qz
        ritz = np.linalg.svd(y, compute_uv=False)
        q, _ = np.linalg.qr(y)
        if counter is not None:
            counter.add(phase, b * p * (2 * a - 1) + 2 * b * p * p
                        + a * p * (2 * b - 1) + 10 * a * p * p + 2 * a * p * p)
        if prev is not None:
            scale = max(ritz[0], np.finfo(float).tiny)
            converged = bool(np.max(np.abs(ritz[:k] - prev[:k])) <= _RITZ_TOL * scale)
        prev = ritz
    if not converged:
        return _dense_svd(block, k, counter, phase)
    small = q.T @ block
    u2, s, vt = np.linalg.svd(small, full_matrices=False)
    u = q @ u2[:, :k]
    if counter is not None:
        counter.add(phase, p * b * (2 * a - 1) + 10 * b * p * p + a * k * (2 * p - 1))
    return u, s[:k], vt[:k]


def admissible(matrix, t0, t1, s0, s1, params: CompressionParams,
               counter=None, sigma_query=None) -> bool:
    """Admissibility of the block [t0, t1) x [s0, s1).

    True for all-zero blocks; false for blocks exceeding max_leaf_size in
    either dimension; true when min(rows, cols) <= min_block_size or
    <= max_rank (the (r+1)-th singular value is identically zero); else the
    spectral test sigma_{r+1} < delta. ``sigma_query`` may supply the
    singular values (used by the neural surrogate); by default they come
    from :func:`truncated_svd` with k = r + 1.
    """
    rows, cols = t1 - t0, s1 - s0
    if rows <= 0 or cols <= 0:
        raise ValueError("empty block")
    block = matrix[t0:t1, s0:s1]
    if not block.any():
        return True
    if rows > params.max_leaf_size or cols > params.max_leaf_size:
        return False
    if min(rows, cols) <= params.min_block_size:
        return True
    if min(rows, cols) <= params.max_rank:
        return True
    if sigma_query is not None:
        s = np.asarray(sigma_query())
    else:
        _, s, _ = truncated_svd(block, params.max_rank + 1, counter, "admissibility")
    return bool(s[params.max_rank] < params.threshold)


def svd_leaf_from_block(block, t0, t1, s0, s1, k, params, counter=None,
                        full_rank: bool = False) -> HNode:
    """SVD leaf built from an already-extracted nonzero block.

    Drops singular values below the threshold (or only exact zeros when
    ``full_rank``, used for the dense-equivalent corner case); the stored
    ``tail`` is the exactly computed Frobenius residual (verification
    bookkeeping, not counted as flops).
    """
    u, s, vt = truncated_svd(block, k, counter, "svd")
    if full_rank:
        kept = max(int(np.sum(s > 0.0)), 1)
    else:
        kept = int(np.sum(s >= params.threshold))
    if kept == 0:
        return HNode(t0, t1, s0, s1, ZERO, tail=float(np.linalg.norm(block)))
    u = np.ascontiguousarray(u[:, :kept])
    v = s[:kept, None] * vt[:kept]
    tail = float(np.linalg.norm(block - u @ v))
    return HNode(t0, t1, s0, s1, SVD, rank=kept, U=u, V=v,
                 sigma=s[:kept].copy(), tail=tail)


def compress_block(matrix, t0, t1, s0, s1, params: CompressionParams,
                   counter=None) -> HNode:
    """rSVD leaf for an admissible block: zero leaf for zero blocks, else
    an svd leaf keeping the singular values >= delta (at most max_rank)."""
    block = matrix[t0:t1, s0:s1]
    if not block.any():
        return HNode(t0, t1, s0, s1, ZERO)
    k = min(params.max_rank, min(block.shape))
    return svd_leaf_from_block(block, t0, t1, s0, s1, k, params, counter)


def _full_rank_leaf(matrix, t0, t1, s0, s1, params, counter):
    # inadmissible (too wide/tall) but unsplittable: dense-equivalent leaf
    block = matrix[t0:t1, s0:s1]
    if not block.any():
        return HNode(t0, t1, s0, s1, ZERO)
    return svd_leaf_from_block(block, t0, t1, s0, s1, min(block.shape),
                               params, counter, full_rank=True)


def create_tree(matrix, params: CompressionParams, counter=None) -> HNode:
    """Recursive hierarchical compression of a dense matrix."""
    matrix = np.ascontiguousarray(matrix, dtype=float)
    if matrix.size == 0:
        raise ValueError("matrix must be nonempty")

    def build(t0, t1, s0, s1):
        if admissible(matrix, t0, t1, s0, s1, params, counter):
            return compress_block(matrix, t0, t1, s0, s1, params, counter)
        if min(t1 - t0, s1 - s0) <= params.min_block_size:
            return _full_rank_leaf(matrix, t0, t1, s0, s1, params, counter)
        tm, sm = _split(t0, t1), _split(s0, s1)
        children = [build(t0, tm, s0, sm), build(t0, tm, sm, s1),
                    build(tm, t1, s0, sm), build(tm, t1, sm, s1)]
        return HNode(t0, t1, s0, s1, INTERNAL, children=children)

    return build(0, matrix.shape[0], 0, matrix.shape[1])


# -- matrix-vector products ----------------------------------------------------


def _leaf_matvec(node, x, counter):
    t = node.V @ x
    y = node.U @ t
    if counter is not None:
        s = x.shape[1]
        counter.add("matvec-H", node.rank * s * (2 * node.cols - 1)
                    + node.rows * s * (2 * node.rank - 1))
    return y


def _matvec(node, x, counter):
    if node.kind == ZERO:
        return np.zeros((node.rows, x.shape[1]))
    if node.kind == SVD:
        return _leaf_matvec(node, x, counter)
    ul, ur, ll, lr = node.children
    x1, x2 = x[: ul.cols], x[ul.cols :]
    top = _matvec(ul, x1, counter) + _matvec(ur, x2, counter)
    bot = _matvec(ll, x1, counter) + _matvec(lr, x2, counter)
    if counter is not None:
        counter.add("matvec-H", node.rows * x.shape[1])
    return np.concatenate([top, bot], axis=0)


def _leaf_matvec_t(node, x, counter):
    t = node.U.T @ x
    y = node.V.T @ t
    if counter is not None:
        s = x.shape[1]
        counter.add("matvec-H", node.rank * s * (2 * node.rows - 1)
                    + node.cols * s * (2 * node.rank - 1))
    return y


def _matvec_t(node, x, counter):
    if node.kind == ZERO:
        return np.zeros((node.cols, x.shape[1]))
    if node.kind == SVD:
        return _leaf_matvec_t(node, x, counter)
    ul, ur, ll, lr = node.children
    x1, x2 = x[: ul.rows], x[ul.rows :]
    left = _matvec_t(ul, x1, counter) + _matvec_t(ll, x2, counter)
    right = _matvec_t(ur, x1, counter) + _matvec_t(lr, x2, counter)
    if counter is not None:
        counter.add("matvec-H", node.cols * x.shape[1])
    return np.concatenate([left, right], axis=0)


def _as_columns(x, expected):
    x = np.asarray(x, dtype=float)
    vec = x.ndim == 1
    if vec:
        x = x[:, None]
    if x.shape[0] != expected:
        raise ValueError(f"operand has {x.shape[0]} rows, expected {expected}")
    return x, vec


def hmatvec(node: HNode, x, counter=None):
    """Y = H @ X computed recursively over the quadtree."""
    x, vec = _as_columns(x, node.cols)
    y = _matvec(node, x, counter)
    return y[:, 0] if vec else y


def hmatvec_transpose(node: HNode, x, counter=None):
    """Y = H^T @ X by swapping child roles and transposing leaf factors."""
    x, vec = _as_columns(x, node.rows)
    y = _matvec_t(node, x, counter)
    return y[:, 0] if vec else y


def decompress(node: HNode) -> np.ndarray:
    """Dense reconstruction (testing oracle)."""
    out = np.zeros((node.rows, node.cols))

    def fill(nd):
        if nd.kind == INTERNAL:
            for child in nd.children:
                fill(child)
        elif nd.kind == SVD:
            out[nd.t0 - node.t0 : nd.t1 - node.t0,
                nd.s0 - node.s0 : nd.s1 - node.s0] = nd.U @ nd.V

    fill(node)
    return out


def leaf_error_bound(node: HNode) -> float:
    """sqrt(sum over leaves of tail^2): the computable global Frobenius
    compression-error bound."""
    total = 0.0
    stack = [node]
    while stack:
        nd = stack.pop()
        if nd.kind == INTERNAL:
            stack.extend(nd.children)
        else:
            total += nd.tail * nd.tail
    return float(np.sqrt(total))


def iter_nodes(node: HNode):
    """Pre-order node iterator yielding (depth, node)."""
    stack = [(0, node)]
    while stack:
        depth, nd = stack.pop()
        yield depth, nd
        if nd.kind == INTERNAL:
            for child in reversed(nd.children):
                stack.append((depth + 1, child))


def structure_summary(node: HNode) -> str:
    """Text listing of per-node ranges and ranks (pre-order), used for
    golden-file tests and block-structure pictures. Ranges are 0-based,
    half-open."""
    lines = []
    for depth, nd in iter_nodes(node):
        base = f"{'  ' * depth}[{nd.t0},{nd.t1})x[{nd.s0},{nd.s1}) {nd.kind}"
        if nd.kind == SVD:
            base += f" rank={nd.rank}"
        lines.append(base)
    return "\n".join(lines) + "\n"


def tree_stats(node: HNode) -> dict:
    stats = {"nodes": 0, "leaves": 0, "zero_leaves": 0, "svd_leaves": 0,
             "max_depth": 0, "max_rank": 0, "stored_floats": 0}
    for depth, nd in iter_nodes(node):
        stats["nodes"] += 1
        stats["max_depth"] = max(stats["max_depth"], depth)
        if nd.kind == ZERO:
            stats["leaves"] += 1
            stats["zero_leaves"] += 1
        elif nd.kind == SVD:
            stats["leaves"] += 1
            stats["svd_leaves"] += 1
            stats["max_rank"] = max(stats["max_rank"], nd.rank)
            stats["stored_floats"] += nd.U.size + nd.V.size + nd.rank
    return stats


# -- serialization -------------------------------------------------------------

_KIND_CODE = {INTERNAL: 0, ZERO: 1, SVD: 2}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


def _write_node(fh, node):
    fh.write(struct.pack("<Bqqqq", _KIND_CODE[node.kind],
                         node.t0, node.t1, node.s0, node.s1))
    if node.kind == SVD:
        fh.write(struct.pack("<qd", node.rank, node.tail))
        fh.write(np.ascontiguousarray(node.sigma, "<f8").tobytes())
        fh.write(np.ascontiguousarray(node.U, "<f8").tobytes())
        fh.write(np.ascontiguousarray(node.V, "<f8").tobytes())
    elif node.kind == ZERO:
        fh.write(struct.pack("<d", node.tail))
    else:
        for child in node.children:
            _write_node(fh, child)


def save_hmatrix(path, node: HNode, params: CompressionParams):
    """Self-describing binary: magic, version, params, pre-order node stream."""
    buf = io.BytesIO()
    buf.write(_HMAT_MAGIC)
    buf.write(struct.pack("<IqdqQ", _HMAT_VERSION, params.max_rank,
                          params.threshold, params.max_leaf_size,
                          params.min_block_size))
    _write_node(buf, node)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_node(fh):
    code, t0, t1, s0, s1 = struct.unpack("<Bqqqq", fh.read(33))
    kind = _CODE_KIND[code]
    if kind == SVD:
        rank, tail = struct.unpack("<qd", fh.read(16))
        rows, cols = t1 - t0, s1 - s0
        sigma = np.frombuffer(fh.read(8 * rank), "<f8").copy()
        u = np.frombuffer(fh.read(8 * rows * rank), "<f8").reshape(rows, rank).copy()
        v = np.frombuffer(fh.read(8 * rank * cols), "<f8").reshape(rank, cols).copy()
        return HNode(t0, t1, s0, s1, SVD, rank=rank, U=u, V=v, sigma=sigma, tail=tail)
    if kind == ZERO:
        (tail,) = struct.unpack("<d", fh.read(8))
        return HNode(t0, t1, s0, s1, ZERO, tail=tail)
    children = [_read_node(fh) for _ in range(4)]
    return HNode(t0, t1, s0, s1, INTERNAL, children=children)


def load_hmatrix(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _HMAT_MAGIC:
            raise ValueError(f"not an H-matrix file: bad magic {magic!r}")
        version, max_rank, threshold, max_leaf, min_block = struct.unpack(
            "<IqdqQ", fh.read(36))
        if version != _HMAT_VERSION:
            raise ValueError(f"unsupported H-matrix format version {version}")
        params = CompressionParams(max_rank, threshold, max_leaf, min_block)
        node = _read_node(fh)
    return node, params
