"""Periodic cell eigenproblems on the unit torus.

Discretization: a uniform torus grid with n nodes per axis (n a power of
two) and rectangle-rule quadrature whose z-offsets live on the *same*
lattice, so that shifted samples phi(xi - z) never need interpolation and
the assembled operator keeps the exact positivity structure

    (M phi)(xi_i) = a(x, xi_i) phi(xi_i)
                    - h^d sum_z J(z) e^{p.z} kappa(x, x, xi_i, xi_i - z) phi(xi_i - z),

with z running over h Z^d intersected with the truncation box [-R, R]^d.
Offsets that wrap to the same torus node are lattice-summed, which makes M
a dense matrix of the form  diag(a) - h^d * kappa .* circulant(S).

The bottom of the spectrum H(p) is computed by shifted Perron iteration on
s I - M with s = max a + 1 (entrywise nonnegative, irreducible because
J(0) > 0).  The grid minimum m of a(x, .) is an upper barrier: the discrete
operator always has an eigenvalue below m, so proximity to m within
``tol_class`` is what classifies a solve as sitting at the bottom of the
essential spectrum rather than at a genuine principal eigenvalue.

Correctors solve the singular balance system

    sum_z Q(xi + z, xi) (z_i + chi_i(xi + z) - chi_i(xi)) = 0,

gauged to mean zero, and the effective matrix is assembled from the same
lattice moment sums; a finite-difference Hessian of H(p) cross-checks it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .errors import (
    ClassificationError,
    ConvergenceError,
    GridError,
    MemoryCapError,
    ReducibilityError,
)
from .model import ModelSpec, truncation_radius, validate_model
from .power import perron_root

DEFAULT_NODE_CAP = 2**20
DEFAULT_DENSE_CAP = 4096
DEFAULT_OFFSET_CAP = 2**26

PRINCIPAL = "principal"
ESSENTIAL_BOTTOM = "essential-bottom"


def default_tol_class(tol: float, m: float) -> float:
    return 10.0 * tol * (1.0 + abs(m))


# ---------------------------------------------------------------------------
# Grid


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on the unit torus with n nodes per axis, h = 1/n."""

    d: int
    n: int
    cap: int = DEFAULT_NODE_CAP

    def __post_init__(self):
        if self.n < 4:
            raise GridError("torus grid needs n >= 4")
        if self.n & (self.n - 1) != 0:
            raise GridError(f"n = {self.n} is not a power of two")
        if self.n**self.d > self.cap:
            raise GridError(
                f"torus grid has {self.n ** self.d} nodes, cap is {self.cap}"
            )

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def num_nodes(self) -> int:
        return self.n**self.d

    def multi_indices(self) -> np.ndarray:
        """All node multi-indices in lexicographic order, shape (N, d)."""
        axes = [np.arange(self.n)] * self.d
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def nodes(self) -> np.ndarray:
        return self.multi_indices() * self.h

    def flatten(self, mi: np.ndarray) -> np.ndarray:
        """Flat index of multi-indices (..., d), lexicographic."""
        flat = mi[..., 0] % self.n
        for k in range(1, self.d):
            flat = flat * self.n + (mi[..., k] % self.n)
        return flat


# ---------------------------------------------------------------------------
# Frozen-x assembly context


class CellContext:
    """Precomputed geometry for cell solves at one frozen slow point x.

    Holds everything p-independent: node coordinates, a(x, xi) values, the
    kappa matrix, the class-index matrix mapping node pairs to their torus
    offset class, and the offset table used for the tilted lattice sums.
    """

    def __init__(
        self,
        m: ModelSpec,
        grid: TorusGrid,
        x,
        tol_trunc: float = 1e-10,
        p_scale: float = 3.0,
        dense_cap: int = DEFAULT_DENSE_CAP,
        kappa_max: float | None = None,
    ):
        if grid.d != m.d:
            raise GridError("grid dimension does not match the model")
        N = grid.num_nodes
        if N > dense_cap:
            raise MemoryCapError(
                f"dense cell assembly with {N} nodes exceeds cap {dense_cap}"
            )
        self.model = m
        self.grid = grid
        self.x = np.asarray(x, dtype=float).reshape(m.d)
        self.tol_trunc = tol_trunc
        if kappa_max is None:
            kappa_max = validate_model(m).kappa_max
        self.kappa_max = kappa_max
        # radius for the largest tilt we expect to see; enlarged on demand
        self.p_scale = p_scale
        self.radius = truncation_radius(
            m.kernel, p_scale * math.sqrt(m.d), kappa_max, tol_trunc, m.d
        )

        mi = grid.multi_indices()
        self.node_coords = mi * grid.h
        xb = np.broadcast_to(self.x, (N, m.d))
        self.a_vals = np.asarray(
            m.a_value(xb, self.node_coords), dtype=float
        )
        self.a_vals = np.broadcast_to(self.a_vals, (N,)).copy()
        self.kappa_mat = self._build_kappa_matrix()
        self.cls = self._build_class_matrix(mi)
        self.offset_cls, self.offset_z, self.offset_j = self._build_offsets()

    def _build_kappa_matrix(self) -> np.ndarray:
        N = self.grid.num_nodes
        d = self.model.d
        xi = np.repeat(self.node_coords, N, axis=0)
        eta = np.tile(self.node_coords, (N, 1))
        xb = np.broadcast_to(self.x, (N * N, d))
        kv = self.model.kappa_value(xb, xb, xi, eta)
        kv = np.broadcast_to(np.asarray(kv, dtype=float), (N * N,))
        return kv.reshape(N, N)

    def _build_class_matrix(self, mi: np.ndarray) -> np.ndarray:
        n = self.grid.n
        cls = ((mi[:, None, 0] - mi[None, :, 0]) % n).astype(np.int32)
        for k in range(1, self.grid.d):
            cls *= n
            cls += ((mi[:, None, k] - mi[None, :, k]) % n).astype(np.int32)
        return cls

    def _build_offsets(self):
        n, h, d = self.grid.n, self.grid.h, self.grid.d
        cmax = int(math.floor(self.radius * n))
        per_axis = np.arange(-cmax, cmax + 1)
        if (2 * cmax + 1) ** d > DEFAULT_OFFSET_CAP:
            raise MemoryCapError(
                f"offset table of {(2 * cmax + 1) ** d} entries exceeds cap"
            )
        mesh = np.meshgrid(*([per_axis] * d), indexing="ij")
        c = np.stack([g.ravel() for g in mesh], axis=-1)
        z = c * h
        cls = self.grid.flatten(c)
        jv = self.model.kernel.values(z)
        keep = jv > 0.0
        return cls[keep], z[keep], jv[keep]

    def moment_sums(self, p, orders=(0,)):
        """Lattice moment sums of J(z) e^{p.z} per torus offset class.

        Returns a dict with keys 0 -> (N,), 1 -> (d, N), 2 -> (d, d, N).
        """
        p = np.asarray(p, dtype=float).reshape(self.model.d)
        pnorm = float(np.linalg.norm(p))
        if pnorm > self.p_scale * math.sqrt(self.model.d) + 1e-12:
            # tilt larger than the precomputed radius covers: rebuild
            self.p_scale = (pnorm + 1.0) / math.sqrt(self.model.d)
            self.radius = truncation_radius(
                self.model.kernel, pnorm + 1.0, self.kappa_max,
                self.tol_trunc, self.model.d,
            )
            self.offset_cls, self.offset_z, self.offset_j = self._build_offsets()
        N = self.grid.num_nodes
        w = self.offset_j * np.exp(self.offset_z @ p)
        out = {}
        if 0 in orders:
            out[0] = np.bincount(self.offset_cls, weights=w, minlength=N)
        d = self.model.d
        if 1 in orders:
            s1 = np.empty((d, N))
            for k in range(d):
                s1[k] = np.bincount(
                    self.offset_cls, weights=w * self.offset_z[:, k], minlength=N
                )
            out[1] = s1
        if 2 in orders:
            s2 = np.empty((d, d, N))
            for k in range(d):
                for l in range(k, d):
                    s2[k, l] = np.bincount(
                        self.offset_cls,
                        weights=w * self.offset_z[:, k] * self.offset_z[:, l],
                        minlength=N,
                    )
                    s2[l, k] = s2[k, l]
            out[2] = s2
        return out

    def kernel_matrix(self, class_sums: np.ndarray) -> np.ndarray:
        """h^d * kappa .* circulant(class_sums), the nonnegative kernel part."""
        hd = self.grid.h**self.model.d
        return hd * self.kappa_mat * class_sums[self.cls]


# ---------------------------------------------------------------------------
# Operator assembly and eigenpairs


@dataclass
class CellOperator:
    """Dense cell operator M = diag(a) - kern at one (p, x)."""

    context: CellContext
    p: np.ndarray
    matrix: np.ndarray
    kern: np.ndarray
    a_vals: np.ndarray
    radius: float

    @property
    def grid(self) -> TorusGrid:
        return self.context.grid

    @property
    def m_min(self) -> float:
        return float(np.min(self.a_vals))


def assemble_cell_operator(
    m: ModelSpec,
    grid: TorusGrid,
    p,
    x,
    tol_trunc: float = 1e-10,
    context: CellContext | None = None,
) -> CellOperator:
    """Assemble the dense torus operator for momentum p at frozen x."""
    if context is None:
        context = CellContext(m, grid, x, tol_trunc=tol_trunc)
    p = np.asarray(p, dtype=float).reshape(m.d)
    s0 = context.moment_sums(p, orders=(0,))[0]
    kern = context.kernel_matrix(s0)
    mat = np.diag(context.a_vals) - kern
    return CellOperator(
        context=context, p=p, matrix=mat, kern=kern,
        a_vals=context.a_vals, radius=context.radius,
    )


def _check_irreducible(kern: np.ndarray):
    rowmax = np.max(kern, axis=1)
    if np.any(rowmax <= 0.0):
        raise ReducibilityError(
            "kernel part has a zero row: grid too coarse for the kernel width"
        )


def _shifted_perron(B: np.ndarray, s: float, tol: float, max_iter: int):
    res = perron_root(B, tol, max_iter)
    lam = s - res.rho
    vec = res.vector
    if np.min(vec) <= 0.0:
        raise ConvergenceError(
            "Perron vector has nonpositive entries after convergence"
        )
    return lam, vec, res.residual, res.iterations


def principal_eigenpair(
    op: CellOperator, tol: float = 1e-10, max_iter: int = 200000
):
    """Bottom eigenvalue H and positive eigenfunction of the cell operator.

    phi is normalized to unit cell average, sum(phi) h^d = 1.
    """
    _check_irreducible(op.kern)
    s = float(np.max(op.a_vals)) + 1.0
    B = op.kern.copy()
    np.fill_diagonal(B, B.diagonal() + (s - op.a_vals))
    H, vec, residual, iters = _shifted_perron(B, s, tol, max_iter)
    hd = op.grid.h**op.grid.d
    phi = vec / (np.sum(vec) * hd)
    return H, phi, residual, iters


def adjoint_eigenpair(
    op: CellOperator, tol: float = 1e-10, max_iter: int = 200000
):
    """Eigenpair of the transposed kernel assembly (same H, eigenfunction phi*)."""
    _check_irreducible(op.kern)
    s = float(np.max(op.a_vals)) + 1.0
    B = op.kern.T.copy()
    np.fill_diagonal(B, B.diagonal() + (s - op.a_vals))
    H, vec, residual, iters = _shifted_perron(B, s, tol, max_iter)
    hd = op.grid.h**op.grid.d
    phi_star = vec / (np.sum(vec) * hd)
    return H, phi_star, residual, iters


@dataclass
class CellEigenpair:
    """Converged direct/adjoint eigenpair with its classification."""

    H: float
    phi: np.ndarray
    phi_star: np.ndarray
    residual_direct: float
    residual_adjoint: float
    classification: str
    m: float
    p: np.ndarray
    tol: float


def solve_cell_eigenpair(
    op: CellOperator,
    tol: float = 1e-10,
    max_iter: int = 200000,
    tol_class: float | None = None,
) -> CellEigenpair:
    H, phi, res_d, _ = principal_eigenpair(op, tol, max_iter)
    H_star, phi_star, res_a, _ = adjoint_eigenpair(op, tol, max_iter)
    if abs(H_star - H) > 10.0 * tol * (1.0 + abs(H)):
        raise ConvergenceError(
            f"direct and adjoint eigenvalues disagree: {H!r} vs {H_star!r}"
        )
    m_min = op.m_min
    if tol_class is None:
        tol_class = default_tol_class(tol, m_min)
    if H > m_min + tol_class:
        raise ConvergenceError(
            f"bottom eigenvalue {H!r} exceeds the min-rate barrier {m_min!r}"
        )
    classification = (
        ESSENTIAL_BOTTOM if m_min - H <= tol_class else PRINCIPAL
    )
    return CellEigenpair(
        H=H, phi=phi, phi_star=phi_star,
        residual_direct=res_d, residual_adjoint=res_a,
        classification=classification, m=m_min,
        p=op.p.copy(), tol=tol,
    )


def hamiltonian(
    m: ModelSpec,
    p,
    x,
    grid: TorusGrid,
    tol: float = 1e-10,
    tol_trunc: float = 1e-10,
    tol_class: float | None = None,
    context: CellContext | None = None,
    max_iter: int = 200000,
):
    """H(p, x) with its classification (principal vs essential bottom)."""
    op = assemble_cell_operator(m, grid, p, x, tol_trunc, context=context)
    H, _, _, _ = principal_eigenpair(op, tol, max_iter)
    m_min = op.m_min
    if tol_class is None:
        tol_class = default_tol_class(tol, m_min)
    if H > m_min + tol_class:
        raise ConvergenceError(
            f"bottom eigenvalue {H!r} exceeds the min-rate barrier {m_min!r}"
        )
    classification = ESSENTIAL_BOTTOM if m_min - H <= tol_class else PRINCIPAL
    return H, classification


# ---------------------------------------------------------------------------
# Maximization of H over p


def gradient_H(context: CellContext, pair: CellEigenpair) -> np.ndarray:
    """Exact gradient of the discrete H(p) from the converged eigenpair.

    dH/dp_k = <phi*, dM/dp_k phi> / <phi*, phi>, and dM/dp_k is minus the
    first-moment kernel matrix, so the gradient costs one gather per axis.
    """
    d = context.model.d
    s1 = context.moment_sums(pair.p, orders=(1,))[1]
    denom = float(pair.phi_star @ pair.phi)
    g = np.empty(d)
    for k in range(d):
        kern1 = context.kernel_matrix(s1[k])
        g[k] = -float(pair.phi_star @ (kern1 @ pair.phi)) / denom
    return g


def _eval_H(context: CellContext, p, tol, max_iter) -> float:
    op = assemble_cell_operator(
        context.model, context.grid, p, context.x, context.tol_trunc,
        context=context,
    )
    H, _, _, _ = principal_eigenpair(op, tol, max_iter)
    return H


def maximize_H(
    m: ModelSpec,
    x,
    grid: TorusGrid,
    tol_p: float = 1e-5,
    p_max: float = 3.0,
    coarse_points: int = 7,
    tol: float = 1e-10,
    tol_trunc: float = 1e-10,
    max_iter: int = 200000,
    context: CellContext | None = None,
    polish: bool = True,
):
    """Maximizer p0 of the concave map p -> H(p, x), with H(p0).

    Coarse grid scan over [-p_max, p_max]^d, then compass search with step
    halving down to ``tol_p``.  When ``polish`` is set, a few Newton steps
    driven by the exact eigenvalue gradient sharpen p0 to near machine
    precision (the corrector system needs the stationarity residual far
    below what a derivative-free search leaves behind).
    """
    if context is None:
        context = CellContext(m, grid, x, tol_trunc=tol_trunc, p_scale=p_max)
    d = m.d
    enlarged = False
    while True:
        axes = [np.linspace(-p_max, p_max, coarse_points)] * d
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in mesh], axis=-1)
        values = np.array([_eval_H(context, pt, tol, max_iter) for pt in pts])
        best = int(np.argmax(values))
        p0 = pts[best].copy()
        H0 = float(values[best])

        step = 2.0 * p_max / (coarse_points - 1)
        while step >= tol_p:
            improved = False
            for k in range(d):
                for sgn in (1.0, -1.0):
                    cand = p0.copy()
                    cand[k] += sgn * step
                    Hc = _eval_H(context, cand, tol, max_iter)
                    if Hc > H0:
                        p0, H0 = cand, Hc
                        improved = True
            if not improved:
                step *= 0.5
        on_boundary = np.any(np.abs(p0) >= p_max - tol_p)
        if not on_boundary:
            break
        if enlarged:
            raise ConvergenceError(
                f"maximizer of H sits on the search boundary |p| = {p_max}"
            )
        enlarged = True
        p_max *= 2.0

    if polish:
        p0, H0 = _newton_polish(context, p0, tol, max_iter)
    return p0, H0


def _newton_polish(context: CellContext, p0, tol, max_iter, steps: int = 12):
    d = context.model.d
    fd_step = 1e-3

    def grad_at(p):
        op = assemble_cell_operator(
            context.model, context.grid, p, context.x, context.tol_trunc,
            context=context,
        )
        pair = solve_cell_eigenpair(op, tol, max_iter)
        return gradient_H(context, pair), pair.H

    g, H0 = grad_at(p0)
    for _ in range(steps):
        gtol = 1e-9 * (1.0 + abs(H0))
        if float(np.max(np.abs(g))) <= gtol:
            break
        hess = np.empty((d, d))
        for k in range(d):
            dp = np.zeros(d)
            dp[k] = fd_step
            gp, _ = grad_at(p0 + dp)
            gm, _ = grad_at(p0 - dp)
            hess[:, k] = (gp - gm) / (2.0 * fd_step)
        hess = 0.5 * (hess + hess.T)
        try:
            delta = np.linalg.solve(hess, -g)
        except np.linalg.LinAlgError:
            break
        nrm = float(np.max(np.abs(delta)))
        if nrm > 0.5:
            delta *= 0.5 / nrm
        p0 = p0 + delta
        g, H0 = grad_at(p0)
    return p0, H0


# ---------------------------------------------------------------------------
# Factorized kernel Q, correctors, effective matrix


class QKernel:
    """Discrete factorized kernel Q(xi, xi - z) = phi*(xi) J e^{p.z} kappa phi(xi - z) h^d.

    ``out_matrix[i, j]`` collects the mass leaving node i toward node j
    (all offsets z with xi_i - z = xi_j on the torus, lattice-summed);
    its transpose collects the incoming mass.  Mass balance, the corrector
    system and the effective-matrix sums are all built from this matrix and
    the first/second moment variants.
    """

    def __init__(self, context: CellContext, pair: CellEigenpair):
        self.context = context
        self.pair = pair
        self.classification = pair.classification
        sums = context.moment_sums(pair.p, orders=(0, 1, 2))
        self._s1 = sums[1]
        self._s2 = sums[2]
        kern = context.kernel_matrix(sums[0])
        self.out_matrix = pair.phi_star[:, None] * kern * pair.phi[None, :]
        self.hd = context.grid.h**context.model.d

    def _moment_matrix(self, sums_1d: np.ndarray) -> np.ndarray:
        kern = self.context.kernel_matrix(sums_1d)
        return self.pair.phi_star[:, None] * kern * self.pair.phi[None, :]

    def mass_imbalance(self):
        """(max node |out - in|, max row sum): the discrete balance check."""
        out = np.sum(self.out_matrix, axis=1)
        inc = np.sum(self.out_matrix, axis=0)
        return float(np.max(np.abs(out - inc))), float(np.max(out))

    def corrector_matrix(self) -> np.ndarray:
        win = self.out_matrix.T
        G = win.copy()
        np.fill_diagonal(G, G.diagonal() - np.sum(win, axis=1))
        return G

    def corrector_rhs(self, axis: int) -> np.ndarray:
        q1 = self._moment_matrix(self._s1[axis])
        return -np.sum(q1, axis=0)

    def effective_matrix(self, chi: np.ndarray) -> np.ndarray:
        """A from the corrector formula: symmetrized second-moment sums
        normalized by the phi phi* mass.

        ``chi`` has shape (d, N), one mean-zero corrector per axis.
        """
        d = self.context.model.d
        a_star = np.empty((d, d))
        for k in range(d):
            for l in range(d):
                q2_total = float(
                    self.pair.phi_star
                    @ (self.context.kernel_matrix(self._s2[k, l]) @ self.pair.phi)
                )
                q1_l = self._moment_matrix(self._s1[l])
                a_star[k, l] = self.hd * (
                    0.5 * q2_total + float(chi[k] @ np.sum(q1_l, axis=1))
                )
        a_star = 0.5 * (a_star + a_star.T)
        denom = float(np.sum(self.pair.phi * self.pair.phi_star)) * self.hd
        return a_star / denom


def corrector_solve(
    q: QKernel, axis: int, tol: float = 1e-8, maxiter: int = 400
) -> np.ndarray:
    """Mean-zero corrector for one axis from the singular balance system.

    The system has constants in its kernel; the solve runs projected GMRES
    in the mean-zero subspace and verifies the assembled residual.
    """
    if q.classification == ESSENTIAL_BOTTOM:
        raise ClassificationError(
            "correctors are undefined at the bottom of the essential spectrum"
        )
    G = q.corrector_matrix()
    b = q.corrector_rhs(axis)
    N = G.shape[0]

    def project(v):
        return v - np.mean(v)

    lin = spla.LinearOperator((N, N), matvec=lambda v: project(G @ v))
    rhs = project(b)
    scale = max(float(np.max(np.abs(b))), 1e-300)
    chi, info = spla.gmres(
        lin, rhs, rtol=0.0, atol=0.05 * tol * scale,
        restart=min(N, 600), maxiter=maxiter, x0=np.zeros(N),
    )
    chi = chi - np.mean(chi)
    residual = float(np.max(np.abs(G @ chi - b)))
    if info != 0 or residual > tol * max(1.0, scale):
        raise ConvergenceError(
            f"corrector solve stagnated: residual {residual:.3e}, tol {tol:.3e}"
        )
    return chi


def hessian_H_fd(
    context: CellContext, p0, tol: float = 1e-10,
    step: float = 1e-2, max_iter: int = 200000,
) -> np.ndarray:
    """Central-difference Hessian of the discrete H(p) at p0."""
    d = context.model.d
    p0 = np.asarray(p0, dtype=float).reshape(d)
    H0 = _eval_H(context, p0, tol, max_iter)
    hess = np.empty((d, d))
    for k in range(d):
        ek = np.zeros(d)
        ek[k] = step
        hp = _eval_H(context, p0 + ek, tol, max_iter)
        hm = _eval_H(context, p0 - ek, tol, max_iter)
        hess[k, k] = (hp - 2.0 * H0 + hm) / step**2
        for l in range(k + 1, d):
            el = np.zeros(d)
            el[l] = step
            hpp = _eval_H(context, p0 + ek + el, tol, max_iter)
            hpm = _eval_H(context, p0 + ek - el, tol, max_iter)
            hmp = _eval_H(context, p0 - ek + el, tol, max_iter)
            hmm = _eval_H(context, p0 - ek - el, tol, max_iter)
            hess[k, l] = (hpp - hpm - hmp + hmm) / (4.0 * step**2)
            hess[l, k] = hess[k, l]
    return hess


# ---------------------------------------------------------------------------
# Full effective model at one slow point


@dataclass
class EffectiveModel:
    """Maximizer, correctors and effective diffusion matrix at one x."""

    p0: np.ndarray
    H0: float
    chi_star: np.ndarray      # (d, N) mean-zero correctors
    A: np.ndarray             # corrector-formula matrix, symmetrized
    A_fd: np.ndarray          # -1/2 FD Hessian cross-check
    m: float
    M: float
    classification: str
    pair: CellEigenpair


def build_effective_model(
    m: ModelSpec,
    grid: TorusGrid,
    x=None,
    tol: float = 1e-10,
    tol_trunc: float = 1e-10,
    tol_p: float = 1e-5,
    tol_class: float | None = None,
    tol_corrector: float = 1e-8,
    p_max: float = 3.0,
    max_iter: int = 200000,
    kappa_max: float | None = None,
) -> EffectiveModel:
    """Run the whole cell pipeline: p0, eigenpair, correctors, A and A_fd."""
    if x is None:
        x = 0.5 * (m.domain.lower + m.domain.upper)
    context = CellContext(
        m, grid, x, tol_trunc=tol_trunc, p_scale=p_max, kappa_max=kappa_max
    )
    p0, _ = maximize_H(
        m, x, grid, tol_p=tol_p, p_max=p_max, tol=tol,
        tol_trunc=tol_trunc, max_iter=max_iter, context=context,
    )
    op = assemble_cell_operator(m, grid, p0, x, tol_trunc, context=context)
    pair = solve_cell_eigenpair(op, tol, max_iter, tol_class=tol_class)
    if pair.classification == ESSENTIAL_BOTTOM:
        raise ClassificationError(
            "no effective diffusion model: bottom of the essential spectrum"
        )
    q = QKernel(context, pair)
    d = m.d
    chi = np.stack(
        [corrector_solve(q, k, tol=tol_corrector) for k in range(d)], axis=0
    )
    A = q.effective_matrix(chi)
    A_fd = -0.5 * hessian_H_fd(context, p0, tol=tol, max_iter=max_iter)
    eigs = np.linalg.eigvalsh(A)
    if np.any(eigs <= 0.0):
        raise ConvergenceError(
            f"effective matrix is not positive definite (eigenvalues {eigs})"
        )
    return EffectiveModel(
        p0=p0, H0=pair.H, chi_star=chi, A=A, A_fd=A_fd,
        m=float(np.min(context.a_vals)), M=float(np.max(context.a_vals)),
        classification=pair.classification, pair=pair,
    )
