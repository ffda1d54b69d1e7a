"""Minimum residual method for symmetric (possibly indefinite) systems."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MinresBreakdown(RuntimeError):
    pass


@dataclass
class MinresResult:
    x: np.ndarray
    converged: bool
    iterations: int
    residuals: list[float] = field(default_factory=list)  # ||b - A x_k|| estimates
    breakdown: bool = False


def _check_symmetric(apply_A, n: int, seed: int = 1234, rtol: float = 1e-8):
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal(n), rng.standard_normal(n)
    lhs, rhs = float(np.dot(apply_A(u), v)), float(np.dot(u, apply_A(v)))
    if abs(lhs - rhs) > rtol * max(1.0, abs(lhs), abs(rhs)):
        raise ValueError(f"operator is not symmetric: <Au,v>={lhs:.6g}, <u,Av>={rhs:.6g}")


def minres_solve(apply_A, b: np.ndarray, tol: float = 1e-10, max_iters: int | None = None,
                 *, x0: np.ndarray | None = None, check_symmetry: bool = False) -> MinresResult:
    """Solve ``A x = b`` with MINRES (Paige-Saunders recurrences).

    Stops when the residual estimate drops below ``tol * ||b||``. A vanishing
    Lanczos vector ends the iteration; ``breakdown`` is set if that happens
    before convergence.
    """
    shape = b.shape
    b = np.asarray(b, dtype=np.float64).ravel()
    n = b.size
    max_iters = 5 * n if max_iters is None else max_iters

    def A(v):
        return np.asarray(apply_A(v.reshape(shape)), dtype=np.float64).ravel()

    if check_symmetry:
        _check_symmetric(A, n)

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64).ravel()
    r1 = b - A(x) if x0 is not None else b.copy()
    bnorm = np.linalg.norm(b)
    beta1 = np.linalg.norm(r1)
    residuals = [float(beta1)]
    if beta1 <= tol * bnorm or beta1 == 0:
        return MinresResult(x.reshape(shape), True, 0, residuals)

    eps = np.finfo(np.float64).eps
    r2 = r1.copy()
    oldb, beta = 0.0, beta1
    dbar = epsln = 0.0
    phibar = beta1
    cs, sn = -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    converged = breakdown = False
    itn = 0
    while itn < max_iters:
        itn += 1
        v = r2 / beta
        y = A(v)
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = float(v @ y)
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        oldb, beta = beta, float(np.linalg.norm(r2))

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta

        gamma = np.hypot(gbar, beta)
        if gamma == 0:
            breakdown = True
            break
        gamma = max(gamma, eps)
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w
        residuals.append(float(phibar))

        if phibar <= tol * bnorm:
            converged = True
            break
        if beta <= eps * beta1:
            breakdown = True
            break
    return MinresResult(x.reshape(shape), converged, itn, residuals, breakdown)
