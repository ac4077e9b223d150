"""Optimal test function coefficients W_mu = G^{-1} B_mu.

The Gram matrix is factored once with a dense Cholesky decomposition (G is
parameter independent); the per-part solves G^{-1} B_k can be cached so
that W_mu for a new mu is just a linear combination. A dense solver for the
saddle-point (mixed) system serves as the correctness oracle for the whole
Petrov-Galerkin pipeline.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .assembly import AffineFormSet
from .krylov import FlopCounter

__all__ = [
    "SPDError",
    "InstabilityError",
    "GramFactorization",
    "factor_gram",
    "optimal_test_matrix",
    "solve_parts",
    "mixed_solve_oracle",
    "save_dense",
    "load_dense",
]

_DENSE_MAGIC = b"PGDENSE1"


class SPDError(ValueError):
    """The Gram matrix is not symmetric positive definite."""


class InstabilityError(RuntimeError):
    """Singular mixed system; the discrete spaces are likely not Fortin
    compatible."""


@dataclass
class GramFactorization:
    """Lower-triangular Cholesky factor of the SPD Gram matrix."""

    lower: np.ndarray

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def solve(self, rhs) -> np.ndarray:
        """Solve G x = rhs for one or many right-hand sides."""
        if sp.issparse(rhs):
            rhs = rhs.toarray()
        rhs = np.asarray(rhs, dtype=float)
        return scipy.linalg.cho_solve((self.lower, True), rhs)


def factor_gram(G, counter: FlopCounter | None = None) -> GramFactorization:
    """Cholesky factorization of the Gram matrix, reusable across all mu."""
    dense = G.toarray() if sp.issparse(G) else np.asarray(G, dtype=float)
    m = dense.shape[0]
    if dense.shape != (m, m):
        raise SPDError("Gram matrix must be square")
    try:
        lower = scipy.linalg.cholesky(dense, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise SPDError(f"Gram matrix is not positive definite: {exc}") from exc
    if counter is not None:
        counter.add("assembly", m * m * m // 3)
    return GramFactorization(lower)


def solve_parts(forms: AffineFormSet, fac: GramFactorization,
                counter: FlopCounter | None = None) -> list:
    """Cached offline product: W_k = G^{-1} B_k for every affine part."""
    if fac.dim != forms.test_dim:
        raise ValueError("factorization dimension does not match the form set")
    out = [fac.solve(part) for part in forms.parts]
    if counter is not None:
        # two triangular solves per right-hand side
        counter.add("assembly", 2 * fac.dim * fac.dim * forms.trial_dim * len(out))
    return out


def combine_parts(parts: list, forms: AffineFormSet, mu: float,
                  counter: FlopCounter | None = None) -> np.ndarray:
    """W_mu from cached per-part solves (theta_0 == 1)."""
    w = forms.theta[0](mu) * parts[0]
    for th, part in zip(forms.theta[1:], parts[1:]):
        w = w + th(mu) * part
    if counter is not None:
        counter.add("assembly", 2 * w.size * (len(parts) - 1) + w.size)
    return w


def optimal_test_matrix(forms: AffineFormSet, fac: GramFactorization, mu: float,
                        parts: list | None = None,
                        counter: FlopCounter | None = None) -> np.ndarray:
    """Dense m x n matrix W_mu with G W_mu = B_mu columnwise.

    When ``parts`` (from :func:`solve_parts`) is given, W_mu is the cached
    linear combination; otherwise a direct multi-RHS solve.
    """
    if fac.dim != forms.test_dim:
        raise ValueError("factorization dimension does not match the form set")
    if parts is not None:
        return combine_parts(parts, forms, mu, counter)
    w = fac.solve(forms.evaluate(mu))
    if counter is not None:
        counter.add("assembly", 2 * fac.dim * fac.dim * forms.trial_dim)
    return w


def mixed_solve_oracle(forms: AffineFormSet, mu: float, L) -> tuple:
    """Dense solve of the saddle system [[G, -B],[B^T, 0]] [r; x] = [-L; 0].

    Correctness oracle for the Petrov-Galerkin pipeline; guarded to small
    problems (m + n <= 5000).
    """
    m, n = forms.test_dim, forms.trial_dim
    if m + n > 5000:
        raise ValueError(f"mixed oracle limited to m+n <= 5000, got {m + n}")
    L = np.asarray(L, dtype=float)
    B = forms.evaluate(mu).toarray()
    G = forms.gram.toarray()
    K = np.zeros((m + n, m + n))
    K[:m, :m] = G
    K[:m, m:] = -B
    K[m:, :m] = B.T
    rhs = np.concatenate([-L, np.zeros(n)])
    try:
        sol = scipy.linalg.solve(K, rhs)
    except scipy.linalg.LinAlgError as exc:
        raise InstabilityError(
            "singular mixed system; Fortin compatibility presumably fails "
            "for these trial/test spaces"
        ) from exc
    resid = np.linalg.norm(K @ sol - rhs)
    scale = max(np.linalg.norm(rhs), 1.0)
    if not np.isfinite(sol).all() or resid > 1e-6 * scale:
        raise InstabilityError(
            "mixed system numerically singular; Fortin compatibility "
            "presumably fails for these trial/test spaces"
        )
    return sol[m:], sol[:m]


def save_dense(path, matrix: np.ndarray):
    """Binary dump: 8-byte magic, int64 rows/cols, row-major little-endian f64."""
    matrix = np.ascontiguousarray(matrix, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_DENSE_MAGIC)
        fh.write(struct.pack("<qq", *matrix.shape))
        fh.write(matrix.tobytes())


def load_dense(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _DENSE_MAGIC:
            raise ValueError(f"not a dense-matrix dump: bad magic {magic!r}")
        rows, cols = struct.unpack("<qq", fh.read(16))
        data = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8")
    return data.reshape(rows, cols).copy()
