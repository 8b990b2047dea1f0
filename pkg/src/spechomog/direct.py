"""The epsilon-scale nonlocal operator on the box and its spectrum bottom.

    (L_eps rho)(x) = -(1/eps^d) int_Omega J((x-y)/eps) kappa(x, y, x/eps, y/eps)
                      rho(y) dy + a(x, x/eps) rho(x)

discretized by the rectangle rule on the absolute lattice h_x Z^d with
h_x = eps/q, so that the fast samples x/eps land exactly on multiples of
1/q.  The integral is restricted to Omega (hostile exterior): rows near the
boundary simply lose kernel mass, no ghost values are introduced.

The bottom point lambda_eps comes from the same shifted Perron iteration as
the cell problems; any positive grid function certifies the lower bound
min_i (L v)_i / v_i.  The factorization rho = e^{-p.x/eps} phi(x/eps) v
turns L_eps into the mass-conserving operator built from the kernel
K(xi, eta) = J e^{p.(xi-eta)} kappa(xi, eta) phi(eta) / phi(xi); it is
assembled here directly from K (never as an explicit similarity transform)
so the positivity structure survives, with the diagonal coefficient summed
over the full lattice, exterior included.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from . import expr as _expr
from .cell import default_tol_class, ESSENTIAL_BOTTOM, PRINCIPAL, TorusGrid
from .errors import (
    ConvergenceError,
    GridError,
    MemoryCapError,
    ReducibilityError,
    ValidationError,
)
from .model import ModelSpec, truncation_radius, validate_model
from .power import perron_root

DEFAULT_NODE_CAP = 2**14


def eps_denominator(eps: float) -> int:
    """The integer K with eps = 1/K, or a GridError if there is none."""
    if not 0.0 < eps <= 1.0:
        raise GridError(f"eps = {eps} must lie in (0, 1]")
    K = int(round(1.0 / eps))
    if K < 1 or abs(eps * K - 1.0) > 1e-12:
        raise GridError(
            f"eps = {eps} is not of the form 1/K; the lattice h_x = eps/q "
            "must sample x/eps exactly on the torus grid"
        )
    return K


@dataclass(frozen=True)
class EpsGrid:
    """Absolute lattice h_x = eps/q restricted to the interior of the box.

    Nodes are the lattice points i * h_x inside Omega at distance at least
    h_x/2 from the boundary (half-cell inset), so x/eps = i/q is exact.
    """

    domain: object
    K: int          # eps = 1/K
    q: int          # nodes per period per axis
    cap: int = DEFAULT_NODE_CAP

    def __post_init__(self):
        if self.K < 1 or self.q < 1:
            raise GridError("K and q must be positive integers")
        if self.num_nodes > self.cap:
            raise MemoryCapError(
                f"eps grid has {self.num_nodes} nodes, cap is {self.cap}"
            )

    @classmethod
    def build(cls, domain, eps: float, q: int, cap: int = DEFAULT_NODE_CAP):
        return cls(domain=domain, K=eps_denominator(eps), q=q, cap=cap)

    @property
    def eps(self) -> float:
        return 1.0 / self.K

    @property
    def h(self) -> float:
        return 1.0 / (self.K * self.q)

    def _axis_index_range(self, k: int):
        lo = self.domain.lower[k]
        hi = self.domain.upper[k]
        h = self.h
        imin = int(math.ceil((lo + 0.5 * h) / h - 1e-12))
        imax = int(math.floor((hi - 0.5 * h) / h + 1e-12))
        if imax < imin:
            raise GridError(f"no interior nodes along axis {k}")
        return imin, imax

    @property
    def axis_counts(self) -> tuple:
        out = []
        for k in range(self.domain.d):
            imin, imax = self._axis_index_range(k)
            out.append(imax - imin + 1)
        return tuple(out)

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.axis_counts))

    def indices(self) -> np.ndarray:
        """Integer lattice multi-indices of all nodes, lexicographic, (N, d)."""
        axes = []
        for k in range(self.domain.d):
            imin, imax = self._axis_index_range(k)
            axes.append(np.arange(imin, imax + 1))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def nodes(self) -> np.ndarray:
        return self.indices() * self.h

    def fast_coords(self, indices: np.ndarray | None = None) -> np.ndarray:
        """x/eps folded into [0,1)^d, exact because q divides the lattice."""
        if indices is None:
            indices = self.indices()
        return (indices % self.q) / float(self.q)


# ---------------------------------------------------------------------------
# L_eps assembly and the spectrum bottom


@dataclass
class DirectOperator:
    grid: EpsGrid
    matrix: np.ndarray
    kern: np.ndarray     # nonnegative kernel part: matrix = diag(a) - kern
    a_vals: np.ndarray
    radius: float


def assemble_L_eps(
    m: ModelSpec,
    grid: EpsGrid,
    tol_trunc: float = 1e-10,
    kappa_max: float | None = None,
) -> DirectOperator:
    """Dense matrix of L_eps on the interior lattice, Dirichlet-by-restriction."""
    if kappa_max is None:
        kappa_max = validate_model(m).kappa_max
    d = m.d
    R = truncation_radius(m.kernel, 0.0, kappa_max, tol_trunc, d)
    idx = grid.indices()
    N = idx.shape[0]
    xs = idx * grid.h
    fast = grid.fast_coords(idx)
    eps = grid.eps

    # pairwise offsets in fast units: z = (x_i - x_j) / eps
    z = (idx[:, None, :] - idx[None, :, :]) / float(grid.q)
    within = np.all(np.abs(z) <= R, axis=-1)
    jv = m.kernel.values(z)
    jv[~within] = 0.0
    pairs = np.argwhere(jv > 0.0)
    kern = np.zeros((N, N))
    if pairs.size:
        i_idx, j_idx = pairs[:, 0], pairs[:, 1]
        kv = m.kappa_value(xs[i_idx], xs[j_idx], fast[i_idx], fast[j_idx])
        kv = np.broadcast_to(np.asarray(kv, dtype=float), (pairs.shape[0],))
        kern[i_idx, j_idx] = jv[i_idx, j_idx] * kv
    kern *= grid.q ** (-d)   # h_x^d / eps^d
    a_vals = np.broadcast_to(
        np.asarray(m.a_value(xs, fast), dtype=float), (N,)
    ).copy()
    mat = np.diag(a_vals) - kern
    return DirectOperator(grid=grid, matrix=mat, kern=kern, a_vals=a_vals, radius=R)


@dataclass
class SpectralResult:
    lambda_eps: float
    rho: np.ndarray
    residual: float
    lower_bound: float
    classification: str
    iterations: int
    mu_eps: float | None = None


def certify_lower_bound(op: DirectOperator, v: np.ndarray) -> float:
    """min_i (L v)_i / v_i: a rigorous discrete lower bound for lambda_eps."""
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0.0):
        raise ValidationError("certificate test function must be positive")
    return float(np.min((op.matrix @ v) / v))


def bottom_of_spectrum(
    op: DirectOperator,
    tol: float = 1e-10,
    max_iter: int = 400000,
    tol_class: float | None = None,
) -> SpectralResult:
    """lambda_eps with positive eigenvector, residual, certified lower bound."""
    rowmax = np.max(op.kern, axis=1)
    if np.any(rowmax <= 0.0):
        raise ReducibilityError(
            "kernel part has a zero row: grid too coarse relative to the "
            "kernel width"
        )
    s = float(np.max(op.a_vals)) + 1.0
    B = op.kern.copy()
    np.fill_diagonal(B, B.diagonal() + (s - op.a_vals))
    res = perron_root(B, tol, max_iter)
    lam = s - res.rho
    rho = res.vector / float(np.max(res.vector))
    if np.min(rho) <= 0.0:
        raise ConvergenceError("eigenvector lost positivity")
    lb = certify_lower_bound(op, rho)
    m_min = float(np.min(op.a_vals))
    if tol_class is None:
        tol_class = default_tol_class(tol, m_min)
    classification = ESSENTIAL_BOTTOM if m_min - lam <= tol_class else PRINCIPAL
    if lb > lam + 10.0 * res.residual * (1.0 + abs(lam)):
        raise ConvergenceError(
            f"certificate {lb!r} inconsistent with eigenvalue {lam!r}"
        )
    return SpectralResult(
        lambda_eps=lam, rho=rho, residual=res.residual, lower_bound=lb,
        classification=classification, iterations=res.iterations,
    )


def mu_from_lambda(lambda_eps: float, H0: float, eps: float) -> float:
    """Rescaled spectral parameter (lambda_eps - H0) / eps^2."""
    return (lambda_eps - H0) / eps**2


# ---------------------------------------------------------------------------
# Factorized operator (periodic case)


def _require_periodic(m: ModelSpec):
    slow = {
        name
        for name in m.coefficients.kappa.free_variables
        if name[0] in ("x", "y") and not name.startswith("xi")
    }
    if isinstance(m.coefficients.a, _expr.Expression):
        slow |= {
            name
            for name in m.coefficients.a.free_variables
            if name[0] in ("x", "y") and not name.startswith("xi")
        }
    if slow:
        raise ValidationError(
            f"factorization needs a periodic model; slow variables {sorted(slow)} present"
        )


def _sample_on_fast_lattice(values: np.ndarray, torus: TorusGrid, q: int) -> np.ndarray:
    """Restrict a torus-grid function to the q-per-period sublattice."""
    if torus.n % q != 0:
        raise GridError(f"torus n = {torus.n} must be a multiple of q = {q}")
    stride = torus.n // q
    field = values.reshape((torus.n,) * torus.d)
    sub = field[(slice(None, None, stride),) * torus.d]
    return sub.ravel()


@dataclass
class FactorizedOperator:
    """Dense matrix of the factorized operator (eigenvalues are mu-scale)."""

    grid: EpsGrid
    matrix: np.ndarray
    p: np.ndarray


def assemble_factorized(
    m: ModelSpec,
    grid: EpsGrid,
    p,
    phi: np.ndarray,
    torus: TorusGrid,
    tol_trunc: float = 1e-10,
    kappa_max: float | None = None,
) -> FactorizedOperator:
    """Assemble (1/eps^2)-scaled factorized operator from the kernel K.

    ``phi`` is the positive cell eigenfunction on ``torus`` at momentum p.
    The diagonal sums K over the full lattice (exterior included), so
    constants are annihilated on rows whose kernel box stays inside Omega.
    """
    _require_periodic(m)
    if kappa_max is None:
        kappa_max = validate_model(m).kappa_max
    d = m.d
    p = np.asarray(p, dtype=float).reshape(d)
    R = truncation_radius(m.kernel, float(np.linalg.norm(p)), kappa_max, tol_trunc, d)
    q = grid.q
    eps = grid.eps
    phi_q = _sample_on_fast_lattice(np.asarray(phi, dtype=float), torus, q)

    idx = grid.indices()
    N = idx.shape[0]
    fast_idx = idx % q
    fast_flat = fast_idx[:, 0].copy()
    for k in range(1, d):
        fast_flat = fast_flat * q + fast_idx[:, k]
    fast = fast_idx / float(q)

    # in-Omega pairs
    z = (idx[:, None, :] - idx[None, :, :]) / float(q)
    within = np.all(np.abs(z) <= R, axis=-1)
    jv = m.kernel.values(z)
    jv[~within] = 0.0
    tilt = np.exp(np.tensordot(z, p, axes=([-1], [0])))
    kmat = np.zeros((N, N))
    pairs = np.argwhere(jv > 0.0)
    if pairs.size:
        i_idx, j_idx = pairs[:, 0], pairs[:, 1]
        dummy_x = np.zeros((pairs.shape[0], d))
        kv = m.kappa_value(dummy_x, dummy_x, fast[i_idx], fast[j_idx])
        kv = np.broadcast_to(np.asarray(kv, dtype=float), (pairs.shape[0],))
        kmat[i_idx, j_idx] = (
            jv[i_idx, j_idx] * tilt[i_idx, j_idx] * kv
            * phi_q[fast_flat[j_idx]] / phi_q[fast_flat[i_idx]]
        )
    scale = q ** (-d) / eps**2
    kmat *= scale

    # full-lattice row sums for the diagonal
    cmax = int(math.floor(R * q))
    per_axis = np.arange(-cmax, cmax + 1)
    mesh = np.meshgrid(*([per_axis] * d), indexing="ij")
    offs = np.stack([g.ravel() for g in mesh], axis=-1)          # (n_off, d)
    zoff = offs / float(q)
    joff = m.kernel.values(zoff)
    keep = joff > 0.0
    offs, zoff, joff = offs[keep], zoff[keep], joff[keep]
    tilt_off = np.exp(zoff @ p)
    # fast lattice tables on the q-per-period cell
    qd = q**d
    q_mi = np.stack(
        [g.ravel() for g in np.meshgrid(*([np.arange(q)] * d), indexing="ij")],
        axis=-1,
    )
    q_coords = q_mi / float(q)
    diag = np.zeros(qd)
    dummy_x = np.zeros((qd, d))
    for o, zo, jo, to in zip(offs, zoff, joff, tilt_off):
        tgt_mi = (q_mi - o) % q
        tgt_flat = tgt_mi[:, 0].copy()
        for k in range(1, d):
            tgt_flat = tgt_flat * q + tgt_mi[:, k]
        kv = m.kappa_value(dummy_x, dummy_x, q_coords, q_coords - zo)
        kv = np.broadcast_to(np.asarray(kv, dtype=float), (qd,))
        diag += jo * to * kv * phi_q[tgt_flat] / phi_q
    diag *= scale

    mat = -kmat
    mat[np.arange(N), np.arange(N)] += diag[fast_flat]
    return FactorizedOperator(grid=grid, matrix=mat, p=p)


def factorized_resolvent_solve(
    fop: FactorizedOperator,
    f: np.ndarray,
    tol: float = 1e-9,
    max_iter: int | None = None,
) -> np.ndarray:
    """Solve (factorized op + I) v = f, v = 0 outside Omega, iteratively."""
    N = fop.matrix.shape[0]
    f = np.asarray(f, dtype=float).reshape(N)
    mat = fop.matrix.copy()
    mat[np.arange(N), np.arange(N)] += 1.0
    precond = spla.LinearOperator(
        (N, N), matvec=lambda v: v / mat.diagonal()
    )
    v, info = spla.bicgstab(
        mat, f, rtol=0.1 * tol, atol=0.0, maxiter=max_iter or 40 * N, M=precond
    )
    resid = float(np.linalg.norm(mat @ v - f)) / max(float(np.linalg.norm(f)), 1e-300)
    if info != 0 or resid > tol:
        raise ConvergenceError(
            f"factorized resolvent solve did not converge (residual {resid:.3e})"
        )
    return v


def factorized_spectrum_dense(fop: FactorizedOperator, count: int) -> np.ndarray:
    """First ``count`` eigenvalue real parts of the factorized operator.

    Dense decomposition only; callers keep grids at oracle size.
    """
    N = fop.matrix.shape[0]
    if N > 2000:
        raise MemoryCapError(
            f"dense factorized spectrum limited to 2000 nodes, got {N}"
        )
    eigs = np.linalg.eigvals(fop.matrix)
    reals = np.sort(eigs.real)
    return reals[:count].copy()
