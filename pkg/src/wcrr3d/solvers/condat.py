"""Primal-dual (Condat) solver for isotropic-TV regularized least squares."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nmapg import SolverError

# ||grad||^2 <= 12 for 3D forward differences; the dual step keeps a factor 2 margin
DUAL_STEP_DIVISOR = 24.0


def grad3(x: np.ndarray) -> np.ndarray:
    """Periodic forward differences along the three trailing axes, stacked first."""
    return np.stack([np.roll(x, -1, axis=a) - x for a in (-3, -2, -1)])


def grad3_adjoint(p: np.ndarray) -> np.ndarray:
    return sum(np.roll(p[d], 1, axis=a) - p[d] for d, a in enumerate((-3, -2, -1)))


def tv_norm(x: np.ndarray) -> float:
    g = grad3(x)
    return float(np.sum(np.sqrt(np.sum(np.abs(g) ** 2, axis=0))))


def project_dual(p: np.ndarray, lam: float) -> np.ndarray:
    """Scale each voxel's (complex) 3-vector of dual variables into the lam-ball."""
    nrm = np.sqrt(np.sum(np.abs(p) ** 2, axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(nrm > lam, lam / np.where(nrm > 0, nrm, 1.0), 1.0)
    return p * scale


@dataclass
class CondatResult:
    x: np.ndarray
    converged: bool
    iterations: int
    trace: list[dict] = field(default_factory=list)


def condat_tv_reconstruct(forward, adjoint, y, lam: float, x0, tol: float = 5e-4,
                          max_iters: int = 2000, *, norm_sq: float | None = None,
                          normal=None) -> CondatResult:
    """Minimize ``1/2 ||A x - y||^2 + lam * TV(x)`` with a dual-first Condat scheme.

    ``p <- proj(p + eta grad x);  x <- x - tau (A^H (A x - y) + grad^T (2 p_new - p))``
    with ``tau = 1/||A||^2`` and ``eta = 1/(24 tau)``. ``normal`` may supply a fast
    ``A^H A``; otherwise ``adjoint(forward(x))`` is used.
    """
    if norm_sq is None:
        raise ValueError("norm_sq (||A||^2) is required")
    tau = 1.0 / norm_sq
    eta = 1.0 / (DUAL_STEP_DIVISOR * tau)
    normal = normal or (lambda v: adjoint(forward(v)))
    aty = adjoint(y)
    yy = float(np.vdot(y, y).real)
    x = np.array(x0, dtype=np.complex128)
    p = np.zeros((3,) + x.shape, dtype=np.complex128)
    trace = []
    converged = False
    for k in range(1, max_iters + 1):
        p_new = project_dual(p + eta * grad3(x), lam)
        ax = normal(x)
        data = 0.5 * (float(np.vdot(x, ax).real) - 2 * float(np.vdot(x, aty).real) + yy)
        x_new = x - tau * (ax - aty + grad3_adjoint(2 * p_new - p))
        if not np.all(np.isfinite(x_new)):
            raise SolverError(f"non-finite TV iterate at iteration {k}")
        xn = float(np.linalg.norm(x))
        d = float(np.linalg.norm(x_new - x))
        rel = d / xn if xn > 0 else (math.inf if d > 0 else 0.0)
        trace.append({"iter": k, "objective": data + lam * tv_norm(x), "L_k": norm_sq,
                      "rel_change": rel})
        x, p = x_new, p_new
        if rel < tol:
            converged = True
            break
    return CondatResult(x, converged, len(trace), trace)
