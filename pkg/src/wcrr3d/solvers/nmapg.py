"""Non-monotone accelerated proximal gradient (nmAPG) for smooth objectives."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass
class Objective:
    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    prox: Callable | None = None


@dataclass
class SolverConfig:
    delta: float = 0.1      # sufficient decrease
    eta: float = 0.8        # averaging of the reference energy
    rho: float = 0.9        # backtracking factor
    max_linesearch: int = 20
    eps: float = 1e-4       # relative-change tolerance
    L1: float = 1.0         # initial Lipschitz estimate
    max_iters: int = 1000

    def __post_init__(self):
        if self.delta <= 0 or self.eps <= 0 or self.L1 <= 0:
            raise ValueError("delta, eps and L1 must be positive")
        if not (0 < self.eta < 1 and 0 < self.rho < 1):
            raise ValueError("eta and rho must lie in (0, 1)")


@dataclass
class SolverState:
    x: np.ndarray
    x_prev: np.ndarray
    z: np.ndarray
    t: float = 1.0
    t_prev: float = 0.0
    q: float = 1.0
    c: float = 0.0
    L: float = 1.0
    k: int = 1


@dataclass
class SolverResult:
    x: np.ndarray
    converged: bool
    iterations: int
    trace: list[dict] = field(default_factory=list)

    def write_trace(self, path):
        write_trace_csv(self.trace, path)


TRACE_COLUMNS = ("iter", "objective", "L_k", "rel_change", "wall_ms")


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS, extrasaction="ignore")
        wr.writeheader()
        for row in trace:
            wr.writerow(row)


def _bb(dx: np.ndarray, dg: np.ndarray, L: float) -> float:
    num = float(np.vdot(dg, dg).real)
    den = float(np.vdot(dg, dx).real)
    if den <= 1e-12 * math.sqrt(num) * float(np.linalg.norm(dx)) or num == 0:
        return L
    return num / den


def _finite(val: float, what: str, k: int) -> float:
    if not math.isfinite(val):
        raise SolverError(f"non-finite {what} at iteration {k}: {val}")
    return val


def nmapg_minimize(obj: Objective, x0: np.ndarray, cfg: SolverConfig | None = None,
                   callback: Callable[[SolverState], None] | None = None) -> SolverResult:
    """Minimize a smooth objective with nmAPG.

    Barzilai-Borwein step initialization, backtracking, and the averaged
    non-monotone acceptance test with a non-extrapolated fallback candidate.
    Stops when ``||x_k - x_{k-1}|| / ||x_{k-1}|| < eps`` or after ``max_iters``.
    """
    cfg = cfg or SolverConfig()
    J, grad = obj.value, obj.grad
    x = np.array(x0, dtype=np.float64)
    st = SolverState(x=x, x_prev=x.copy(), z=x.copy(), L=cfg.L1)
    st.c = _finite(J(x), "objective", 0)
    xbar_prev = gbar_prev = None
    trace: list[dict] = []
    t_start = time.perf_counter()
    converged = False

    def line_search(base, g, ref, L):
        cand = jc = None
        for _ in range(cfg.max_linesearch):
            cand = base - g / L
            jc = _finite(J(cand), "objective", st.k)
            if jc <= ref - cfg.delta * float(np.sum((cand - base) ** 2)):
                return cand, jc, L, True
            L = L / cfg.rho
            if not math.isfinite(L):
                raise SolverError(f"Lipschitz estimate overflow at iteration {st.k}")
        return cand, jc, L, False

    while True:
        k = st.k
        xbar = st.x + (st.t_prev / st.t) * (st.z - st.x) \
            + ((st.t_prev - 1) / st.t) * (st.x - st.x_prev)
        gbar = grad(xbar)
        if k > 1:
            st.L = _bb(xbar - xbar_prev, gbar - gbar_prev, st.L)
        c_prime = max(_finite(J(xbar), "objective", k), st.c)

        z, jz, st.L, ok = line_search(xbar, gbar, c_prime, st.L)
        if not ok:
            log.warning("nmAPG line search hit %d steps at iteration %d", cfg.max_linesearch, k)
        if jz <= st.c - cfg.delta * float(np.sum((z - xbar) ** 2)):
            x_new, j_new = z, jz
        else:
            gx = grad(st.x)
            if gbar_prev is not None:
                st.L = _bb(st.x - xbar_prev, gx - gbar_prev, st.L)
            v, jv, st.L, ok = line_search(st.x, gx, st.c, st.L)
            if not ok:
                log.warning("nmAPG fallback line search hit %d steps at iteration %d",
                            cfg.max_linesearch, k)
            x_new, j_new = (z, jz) if jz <= jv else (v, jv)

        t_new = (math.sqrt(4 * st.t ** 2 + 1) + 1) / 2
        q_new = cfg.eta * st.q + 1
        st.c = (cfg.eta * st.q * st.c + j_new) / q_new
        st.q = q_new
        st.t_prev, st.t = st.t, t_new
        st.z = z
        st.x_prev, st.x = st.x, x_new
        xbar_prev, gbar_prev = xbar, gbar
        st.k = k + 1

        prev_norm = float(np.linalg.norm(st.x_prev))
        step = float(np.linalg.norm(st.x - st.x_prev))
        rel = step / prev_norm if prev_norm > 0 else (math.inf if step > 0 else 0.0)
        trace.append({"iter": k, "objective": j_new, "L_k": st.L, "rel_change": rel,
                      "wall_ms": 1e3 * (time.perf_counter() - t_start)})
        if callback is not None:
            callback(st)
        if rel < cfg.eps:
            converged = True
            break
        if k >= cfg.max_iters:
            break
    return SolverResult(st.x, converged, len(trace), trace)
