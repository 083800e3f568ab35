"""Symmetric positive-definite sparse factorization helper.

Wraps SuperLU in symmetric mode (no diagonal pivoting, natural column
order) applied after a reverse Cuthill-McKee fill-reducing permutation that
is computed once per sparsity pattern and reused across refactorizations of
the same model.  For an SPD input this yields Q = P^T L diag(d) L^T P,
which gives solves, log determinants and Gaussian sampling with precision Q.

A relative diagonal jitter is escalated (doubling) when the factorization
reports a non-positive pivot, up to a hard cap.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import reverse_cuthill_mckee
from scipy.sparse.linalg import splu

from .errors import NumericalError


def fill_reducing_permutation(pattern: sp.spmatrix) -> np.ndarray:
    """Reverse Cuthill-McKee ordering for a symmetric sparsity pattern."""
    return np.asarray(reverse_cuthill_mckee(sp.csr_matrix(pattern), symmetric_mode=True))


class SymmetricFactor:
    """Factorization of a sparse SPD matrix with a cached ordering."""

    def __init__(self, q: sp.spmatrix, perm: np.ndarray | None = None,
                 jitter: float = 1e-8, jitter_cap: float = 1e-2):
        q = sp.csc_matrix(q)
        n = q.shape[0]
        if perm is None:
            perm = fill_reducing_permutation(q)
        self.n = n
        self.perm = perm
        scale = float(np.max(q.diagonal())) if n else 1.0
        if not np.isfinite(scale) or scale <= 0.0:
            scale = 1.0
        qp = q[perm][:, perm].tocsc()
        level = 0.0
        while True:
            try:
                lu = splu(qp if level == 0.0 else
                          (qp + sp.identity(n, format="csc") * (level * scale)),
                          permc_spec="NATURAL", diag_pivot_thresh=0.0,
                          options=dict(SymmetricMode=True))
                du = lu.U.diagonal()
                if np.all(du > 0.0) and np.all(np.isfinite(du)):
                    break
            except RuntimeError:
                pass
            level = jitter if level == 0.0 else 2.0 * level
            if level > jitter_cap:
                raise NumericalError(
                    "SymmetricFactor: matrix not positive definite even with "
                    f"relative jitter {jitter_cap:g}")
        self.jitter_used = level * scale
        self._lu = lu
        self._du = du
        self.logdet = float(np.sum(np.log(du)))

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        out = np.empty_like(b)
        out[self.perm] = self._lu.solve(np.ascontiguousarray(b[self.perm]))
        return out

    def sample(self, rng: np.random.Generator, size: int = 1) -> np.ndarray:
        """Draws with covariance Q^{-1} (zero mean), shape (size, n).

        Uses x = Q^{-1} C z with C the Cholesky-like factor of the permuted
        matrix, so Cov(x) = Q^{-1} C C^T Q^{-1} = Q^{-1}.
        """
        z = rng.standard_normal((self.n, size))
        c = self._lu.L @ sp.diags(np.sqrt(self._du))
        y = self._lu.solve(np.asarray(c @ z))
        out = np.empty_like(y)
        out[self.perm] = y
        return out.T

    def inv_quadratic_diag(self, d: sp.spmatrix) -> np.ndarray:
        """diag(D Q^{-1} D^T) for sparse D via one multi-RHS solve."""
        d = sp.csr_matrix(d)
        w = self.solve(np.asarray(d.T.todense()))
        return np.maximum(np.asarray(d.multiply(w.T).sum(axis=1)).ravel(), 0.0)

    def inverse_diag(self, batch: int = 512) -> np.ndarray:
        """diag(Q^{-1}) by batched identity solves."""
        out = np.empty(self.n)
        for start in range(0, self.n, batch):
            cols = np.arange(start, min(start + batch, self.n))
            e = np.zeros((self.n, cols.size))
            e[cols, np.arange(cols.size)] = 1.0
            x = self.solve(e)
            out[cols] = x[cols, np.arange(cols.size)]
        return out
