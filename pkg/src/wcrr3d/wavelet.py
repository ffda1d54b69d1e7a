"""Orthonormal periodic 3D Daubechies-4 wavelet transform."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

# db4 (four vanishing moments, eight taps) analysis low-pass filter
DB4_LO = np.array([
    -0.010597401785069032, 0.0328830116668852, 0.030841381835560764,
    -0.18703481171909309, -0.027983769416859854, 0.6308807679298589,
    0.7148465705529157, 0.2303778133088965,
])


def quadrature_mirror(lo: np.ndarray) -> np.ndarray:
    n = np.arange(len(lo))
    return (-1.0) ** n * lo[::-1]


MIN_COARSE = 8


@dataclass(frozen=True)
class WaveletPlan:
    levels: int = 4
    lo: tuple = tuple(DB4_LO)
    boundary: str = "periodic"
    hi: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "hi", tuple(quadrature_mirror(np.asarray(self.lo))))
        if self.boundary != "periodic":
            raise ValueError("only periodic boundaries are supported")

    @classmethod
    def for_dims(cls, dims, levels: int = 4, min_coarse: int = MIN_COARSE) -> "WaveletPlan":
        """Cap ``levels`` so the coarsest band keeps ``min_coarse`` samples per axis."""
        lv = levels
        while lv > 0 and any(n % 2 ** lv or n // 2 ** lv < min_coarse for n in dims):
            lv -= 1
        return cls(lv)

    def approx_slices(self, dims) -> tuple[slice, ...]:
        return tuple(slice(0, n >> self.levels) for n in dims)

    def check(self, dims):
        for n in dims:
            if n % (2 ** self.levels):
                raise ValueError(f"dims {tuple(dims)} not divisible by 2^{self.levels}")


@lru_cache(maxsize=64)
def _analysis_matrix(n: int, lo: tuple, hi: tuple) -> np.ndarray:
    """Rows ``[approx; detail]`` of the one-level periodic analysis operator."""
    W = np.zeros((n, n))
    half = n // 2
    for k in range(half):
        for m, (h, g) in enumerate(zip(lo, hi)):
            W[k, (2 * k + m) % n] += h
            W[half + k, (2 * k + m) % n] += g
    return W


def _apply_axis(x, M, axis):
    return np.moveaxis(np.tensordot(M, x, axes=([1], [axis])), 0, axis)


def dwt3(v: np.ndarray, plan: WaveletPlan):
    """Multilevel separable transform of the three trailing axes.

    Returns the coefficient array (octave layout, same shape as ``v``) and the
    index slices of the approximation band.
    """
    v = np.asarray(v)
    dims = v.shape[-3:]
    plan.check(dims)
    out = v.astype(np.result_type(v.dtype, np.float64), copy=True)
    lead = (slice(None),) * (v.ndim - 3)
    size = list(dims)
    for _ in range(plan.levels):
        sl = lead + tuple(slice(0, s) for s in size)
        block = out[sl]
        for ax in range(3):
            block = _apply_axis(block, _analysis_matrix(size[ax], plan.lo, plan.hi), v.ndim - 3 + ax)
        out[sl] = block
        size = [s // 2 for s in size]
    return out, lead + plan.approx_slices(dims)


def idwt3(c: np.ndarray, plan: WaveletPlan) -> np.ndarray:
    c = np.asarray(c)
    dims = c.shape[-3:]
    plan.check(dims)
    out = c.copy()
    lead = (slice(None),) * (c.ndim - 3)
    for lv in range(plan.levels - 1, -1, -1):
        size = [n >> lv for n in dims]
        sl = lead + tuple(slice(0, s) for s in size)
        block = out[sl]
        for ax in range(3):
            block = _apply_axis(block, _analysis_matrix(size[ax], plan.lo, plan.hi).T,
                                c.ndim - 3 + ax)
        out[sl] = block
    return out


def detail_mask(dims, plan: WaveletPlan) -> np.ndarray:
    m = np.ones(tuple(dims), dtype=bool)
    m[plan.approx_slices(dims)] = False
    return m


def soft_threshold(c: np.ndarray, thresh: float) -> np.ndarray:
    """Magnitude shrinkage; keeps the phase of complex coefficients."""
    mag = np.abs(c)
    scale = np.maximum(1 - thresh / np.where(mag > 0, mag, 1.0), 0.0)
    return c * scale
