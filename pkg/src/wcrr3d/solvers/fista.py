"""FISTA for smooth-plus-proximable objectives."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nmapg import SolverError


@dataclass
class FistaResult:
    x: np.ndarray
    converged: bool
    iterations: int
    rel_changes: list[float] = field(default_factory=list)


def fista_minimize(grad_f, prox_g, x0, step: float, max_iters: int = 500,
                   tol: float = 5e-3) -> FistaResult:
    """Beck-Teboulle FISTA; ``prox_g(v, step)`` is the prox of ``step * g``.

    ``step`` should not exceed ``1/L`` for the Lipschitz constant ``L`` of
    ``grad_f``. Stops on relative change between iterates below ``tol``.
    """
    x = np.array(x0)
    y = x.copy()
    t = 1.0
    rels = []
    converged = False
    for k in range(1, max_iters + 1):
        x_new = prox_g(y - step * grad_f(y), step)
        if not np.all(np.isfinite(x_new)):
            raise SolverError(f"non-finite FISTA iterate at iteration {k}")
        t_new = (1 + math.sqrt(1 + 4 * t * t)) / 2
        y = x_new + ((t - 1) / t_new) * (x_new - x)
        xn = float(np.linalg.norm(x))
        d = float(np.linalg.norm(x_new - x))
        rel = d / xn if xn > 0 else (math.inf if d > 0 else 0.0)
        rels.append(rel)
        x, t = x_new, t_new
        if rel < tol:
            converged = True
            break
    return FistaResult(x, converged, len(rels), rels)
