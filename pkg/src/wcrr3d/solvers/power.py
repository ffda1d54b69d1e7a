"""Power iteration for operator norms."""
from __future__ import annotations

import numpy as np


def power_iteration_norm(apply_A, dim: int, iters: int = 50, *, seed: int = 0,
                         tol: float | None = None, v0: np.ndarray | None = None):
    """Spectral-norm estimate of a symmetric operator by power iteration.

    Returns ``(estimate, v)`` where ``estimate`` is the magnitude of the last
    Rayleigh quotient and ``v`` the final unit vector. A zero operator gives 0.
    ``tol`` stops early once consecutive Rayleigh quotients agree to that
    relative precision.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if v0 is None:
        v = np.random.default_rng(seed).standard_normal(dim)
    else:
        v = np.array(v0, dtype=np.float64).ravel()
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = np.asarray(apply_A(v), dtype=np.float64).ravel()
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0, v
        v = w / nw
        done = tol is not None and abs(abs(lam_new) - abs(lam)) <= tol * abs(lam_new)
        lam = lam_new
        if done:
            break
    return abs(lam), v
