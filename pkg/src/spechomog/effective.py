"""Homogenized constant-coefficient operator -A_ij d2/dxidxj on a box.

Finite differences on a uniform interior grid with Dirichlet conditions
eliminated (boundary values are zero and simply folded away).  Pure second
derivatives use the 3-point stencil, mixed terms the symmetric 4-point
cross stencil.  The matrix is sparse, symmetric and positive definite for
SPD coefficient matrices A.

Eigenvalues come from inverse subspace iteration (block k+2, deterministic
coordinate start vectors, sparse LU of the operator); the resolvent solve
(op + I) v = f uses conjugate gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, GridError, ValidationError
from .model import DomainSpec


@dataclass(frozen=True)
class FDGrid:
    """Interior nodes of a box: counts[k] nodes per axis, h_k = span/(N_k+1)."""

    domain: DomainSpec
    counts: tuple

    def __post_init__(self):
        if len(self.counts) != self.domain.d:
            raise GridError("counts must give one entry per axis")
        if any(n < 3 for n in self.counts):
            raise GridError("effective grid needs at least 3 interior nodes per axis")
        h = self.spacings
        if float(np.max(h)) / float(np.min(h)) > 8.0:
            raise GridError("grid anisotropy h_max/h_min exceeds 8")

    @property
    def spacings(self) -> np.ndarray:
        lo, hi = self.domain.lower, self.domain.upper
        return (hi - lo) / (np.asarray(self.counts, dtype=float) + 1.0)

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.counts))

    def axes(self) -> list:
        lo = self.domain.lower
        h = self.spacings
        return [
            lo[k] + h[k] * np.arange(1, self.counts[k] + 1)
            for k in range(self.domain.d)
        ]

    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)


@dataclass
class EffectiveOperator:
    matrix: sp.csr_matrix
    A: np.ndarray
    grid: FDGrid


def _check_spd(A: np.ndarray):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError("coefficient matrix must be square")
    if float(np.max(np.abs(A - A.T))) > 1e-12 * max(1.0, float(np.max(np.abs(A)))):
        raise ValidationError("coefficient matrix must be symmetric")
    if np.any(np.linalg.eigvalsh(A) <= 0.0):
        raise ValidationError("coefficient matrix must be positive definite")


def assemble_effective(A, grid: FDGrid) -> EffectiveOperator:
    """Sparse FD matrix of -A_ij d2/dxidxj with Dirichlet rows eliminated."""
    A = np.asarray(A, dtype=float)
    _check_spd(A)
    d = grid.domain.d
    if A.shape != (d, d):
        raise ValidationError(f"coefficient matrix must be {d}x{d}")
    counts = grid.counts
    h = grid.spacings
    N = grid.num_nodes
    shape = tuple(counts)
    idx = np.arange(N).reshape(shape)

    rows, cols, vals = [], [], []

    def add_offset(offset, coeff):
        # pair every node with its (node + offset) neighbor when both interior
        src = [slice(None)] * d
        dst = [slice(None)] * d
        for k, o in enumerate(offset):
            if o == 1:
                src[k] = slice(0, counts[k] - 1)
                dst[k] = slice(1, counts[k])
            elif o == -1:
                src[k] = slice(1, counts[k])
                dst[k] = slice(0, counts[k] - 1)
        r = idx[tuple(src)].ravel()
        c = idx[tuple(dst)].ravel()
        rows.append(r)
        cols.append(c)
        vals.append(np.full(r.shape, coeff))

    diag = np.zeros(N)
    for k in range(d):
        diag += 2.0 * A[k, k] / h[k] ** 2
        off = [0] * d
        off[k] = 1
        add_offset(tuple(off), -A[k, k] / h[k] ** 2)
        off[k] = -1
        add_offset(tuple(off), -A[k, k] / h[k] ** 2)
    for k in range(d):
        for l in range(k + 1, d):
            c = 2.0 * A[k, l] / (4.0 * h[k] * h[l])  # A_kl and A_lk together
            for sk, sl, sign in ((1, 1, -1.0), (-1, -1, -1.0), (1, -1, 1.0), (-1, 1, 1.0)):
                off = [0] * d
                off[k], off[l] = sk, sl
                add_offset(tuple(off), sign * c)

    rows.append(np.arange(N))
    cols.append(np.arange(N))
    vals.append(diag)
    mat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N, N),
    )
    return EffectiveOperator(matrix=mat, A=A, grid=grid)


def dirichlet_spectrum(
    op: EffectiveOperator,
    k: int,
    tol: float = 1e-10,
    max_iter: int = 500,
) -> np.ndarray:
    """k smallest eigenvalues, ascending, by inverse subspace iteration."""
    if k > 8:
        raise ValueError("at most 8 eigenvalues are supported")
    N = op.matrix.shape[0]
    block = min(k + 2, N)
    solver = spla.splu(op.matrix.tocsc())
    # deterministic coordinate-like start basis, spread through the domain
    X = np.zeros((N, block))
    for j in range(block):
        X[(j + 1) * N // (block + 1), j] = 1.0
    B = op.matrix
    lam = np.zeros(block)
    for _ in range(max_iter):
        Y = solver.solve(X)
        Q, _ = np.linalg.qr(Y)
        T = Q.T @ (B @ Q)
        T = 0.5 * (T + T.T)
        lam, V = np.linalg.eigh(T)
        X = Q @ V
        R = B @ X[:, :k] - X[:, :k] * lam[:k]
        res = np.linalg.norm(R, axis=0) / np.maximum(np.abs(lam[:k]), 1e-300)
        if float(np.max(res)) <= tol:
            return lam[:k].copy()
    raise ConvergenceError(
        f"inverse subspace iteration did not converge (residuals {res})"
    )


def resolvent_effective(
    op: EffectiveOperator, f: np.ndarray, tol: float = 1e-10, max_iter: int | None = None
) -> np.ndarray:
    """Solve (op + I) v = f by conjugate gradients to relative residual tol."""
    N = op.matrix.shape[0]
    f = np.asarray(f, dtype=float).reshape(N)
    mat = op.matrix + sp.identity(N, format="csr")
    v, info = spla.cg(mat, f, rtol=tol, atol=0.0, maxiter=max_iter or 20 * N)
    if info != 0:
        raise ConvergenceError(f"resolvent CG did not converge (info {info})")
    return v
