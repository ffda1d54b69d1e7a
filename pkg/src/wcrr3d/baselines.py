"""Classical reconstructions: density-compensated adjoint, l1-wavelet, isotropic TV."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .forward import (CoilSet, DensityWeights, EncodingOperator, KSpaceData, KSpaceTrajectory,
                      adjoint, estimate_density_weights)
from .solvers import condat_tv_reconstruct, fista_minimize
from .volume import ComplexVolume
from .wavelet import WaveletPlan, detail_mask, dwt3, idwt3, soft_threshold

TV_TOL = 5e-4
RECON_TOL = 5e-3


@dataclass
class ReconResult:
    volume: ComplexVolume
    iterations: int = 0
    trace: list = field(default_factory=list)
    wall_s: float = 0.0


def _op(coils, traj, op):
    return op if op is not None else EncodingOperator(coils, traj)


def recon_dcp(y: KSpaceData, coils: CoilSet, traj: KSpaceTrajectory, dims=None,
              weights: DensityWeights | None = None) -> ComplexVolume:
    """``sum_c conj(S_c) F^H (w * y_c)`` with Pipe density weights."""
    dims = tuple(dims) if dims is not None else coils.dims
    if weights is None:
        weights = estimate_density_weights(traj, dims)
    return adjoint(KSpaceData(y.samples * weights.weights), coils, traj, dims)


def recon_l1_wavelet(y: KSpaceData, coils: CoilSet, traj: KSpaceTrajectory, lam: float, *,
                     levels: int = 4, max_iters: int = 300, tol: float = RECON_TOL,
                     x0=None, op: EncodingOperator | None = None) -> ReconResult:
    """FISTA on ``1/2 ||A x - y||^2 + lam ||detail(Psi x)||_1`` from the DCp image."""
    t0 = time.perf_counter()
    op = _op(coils, traj, op)
    plan = WaveletPlan.for_dims(op.dims, levels)
    dmask = detail_mask(op.dims, plan)
    aty = op.adjoint(y)
    step = 1.0 / op.norm_sq()
    if x0 is None:
        x0 = recon_dcp(y, coils, traj, op.dims)
    x0 = x0.to_complex() if isinstance(x0, ComplexVolume) else np.asarray(x0, complex)

    def grad_f(x):
        return op.normal(x) - aty

    def prox(v, s):
        c, _ = dwt3(v, plan)
        c[dmask] = soft_threshold(c[dmask], s * lam)
        return idwt3(c, plan)

    res = fista_minimize(grad_f, prox, x0, step, max_iters, tol)
    trace = [{"iter": i + 1, "rel_change": r} for i, r in enumerate(res.rel_changes)]
    return ReconResult(ComplexVolume.from_complex(res.x), res.iterations, trace,
                       time.perf_counter() - t0)


def recon_tv(y: KSpaceData, coils: CoilSet, traj: KSpaceTrajectory, lam: float, *,
             tol: float = TV_TOL, max_iters: int = 1000, x0=None,
             op: EncodingOperator | None = None) -> ReconResult:
    """Condat primal-dual TV with ``tau = 1/||A||^2`` and ``eta = 1/(24 tau)``."""
    t0 = time.perf_counter()
    op = _op(coils, traj, op)
    if x0 is None:
        x0 = recon_dcp(y, coils, traj, op.dims)
    x0 = x0.to_complex() if isinstance(x0, ComplexVolume) else np.asarray(x0, complex)
    res = condat_tv_reconstruct(op.forward, op.adjoint, y.samples, lam, x0, tol, max_iters,
                                norm_sq=op.norm_sq(), normal=op.normal)
    return ReconResult(ComplexVolume.from_complex(res.x), res.iterations, res.trace,
                       time.perf_counter() - t0)
