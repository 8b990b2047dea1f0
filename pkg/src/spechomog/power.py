"""Perron root iteration for entrywise-nonnegative matrices.

Power iteration with infinity-norm normalization from the deterministic
all-ones start vector.  The scalar estimate is the Rayleigh quotient,
refreshed every sweep; every 16 sweeps an Aitken delta-squared extrapolation
of the estimate history is formed and kept as a candidate.  The reported
root is whichever candidate gives the smaller residual
``||B v - rho v||_inf / ||v||_inf``.  Reproducibility is preferred over
speed: no randomness, fixed update order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError

_AITKEN_STRIDE = 16


@dataclass
class PowerResult:
    rho: float
    vector: np.ndarray
    residual: float
    iterations: int


def perron_root(B: np.ndarray, tol: float, max_iter: int) -> PowerResult:
    """Dominant eigenpair of the nonnegative matrix ``B``.

    Raises :class:`ConvergenceError` if the residual does not reach ``tol``
    within ``max_iter`` sweeps (the message reports the final residual).
    """
    n = B.shape[0]
    v = np.ones(n)
    history: list[float] = []
    aitken: float | None = None
    residual = np.inf
    rho = 0.0
    for it in range(1, max_iter + 1):
        w = B @ v
        vv = float(v @ v)
        rayleigh = float(v @ w) / vv
        history.append(rayleigh)
        if it % _AITKEN_STRIDE == 0 and len(history) >= 3:
            r0, r1, r2 = history[-3], history[-2], history[-1]
            denom = r2 - 2.0 * r1 + r0
            if abs(denom) > 1e-300:
                aitken = r2 - (r2 - r1) ** 2 / denom
        # ||v||_inf == 1 after the first sweep; guard the start sweep anyway
        vinf = float(np.max(np.abs(v)))
        rho = rayleigh
        residual = float(np.max(np.abs(w - rayleigh * v))) / vinf
        if aitken is not None:
            res_a = float(np.max(np.abs(w - aitken * v))) / vinf
            if res_a < residual:
                rho, residual = aitken, res_a
        if residual <= tol:
            return PowerResult(rho=rho, vector=v, residual=residual, iterations=it)
        wmax = float(np.max(w))
        if wmax <= 0.0:
            raise ConvergenceError(
                "power iteration collapsed: nonpositive iterate "
                f"(max component {wmax:.3g})"
            )
        v = w / wmax
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} sweeps "
        f"(final residual {residual:.3e}, tol {tol:.3e})"
    )
