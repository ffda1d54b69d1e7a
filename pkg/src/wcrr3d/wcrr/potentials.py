"""Huber-difference potential and noise-conditioned channel scales."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SIGMA_MIN = 0.01
SIGMA_MAX = 0.1
N_KNOTS = 12
ALPHA_EPS = 1e-5


def huber(t, beta):
    t = np.asarray(t, dtype=np.float64)
    a = np.abs(t)
    return np.where(a <= 1.0 / beta, 0.5 * beta * t * t, a - 0.5 / beta)


def phi(t, beta):
    """``huber(t, beta) - huber(t, 1)``: 1-weakly convex, bounded by 1/2 - 1/(2 beta)."""
    return huber(t, beta) - huber(t, 1.0)


def dphi(t, beta):
    t = np.asarray(t, dtype=np.float64)
    return np.clip(beta * t, -1.0, 1.0) - np.clip(t, -1.0, 1.0)


def d2phi(t, beta):
    """Second derivative with open intervals: ``beta [|t| < 1/beta] - [|t| < 1]``."""
    a = np.abs(np.asarray(t, dtype=np.float64))
    return beta * (a < 1.0 / beta) - (a < 1.0)


def shared_potential(t, beta):
    """Value, first and second derivative of the shared potential."""
    return phi(t, beta), dphi(t, beta), d2phi(t, beta)


@dataclass
class PotentialParams:
    """Shape parameter ``beta = exp(b)`` and per-channel spline values ``c`` (J x K)."""

    b: float
    c: np.ndarray
    sigma_min: float = SIGMA_MIN
    sigma_max: float = SIGMA_MAX

    def __post_init__(self):
        self.b = float(self.b)
        self.c = np.atleast_2d(np.asarray(self.c, dtype=np.float64))
        if self.c.shape[1] < 2:
            raise ValueError("the spline needs at least two knots")

    @classmethod
    def init(cls, n_channels: int, n_knots: int = N_KNOTS, beta: float = 2.0,
             sigma_min: float = SIGMA_MIN, sigma_max: float = SIGMA_MAX) -> "PotentialParams":
        return cls(np.log(beta), np.zeros((n_channels, n_knots)), sigma_min, sigma_max)

    @property
    def beta(self) -> float:
        return float(np.exp(self.b))

    @property
    def n_channels(self) -> int:
        return self.c.shape[0]

    @property
    def n_knots(self) -> int:
        return self.c.shape[1]

    @property
    def knots(self) -> np.ndarray:
        return np.linspace(self.sigma_min, self.sigma_max, self.n_knots)

    def clamp(self, sigma: float) -> float:
        return float(min(max(sigma, self.sigma_min), self.sigma_max))

    def spline_position(self, sigma: float) -> tuple[int, float, float]:
        """Left knot index, interpolation weight and clamped sigma."""
        s = self.clamp(sigma)
        p = (s - self.sigma_min) / (self.sigma_max - self.sigma_min) * (self.n_knots - 1)
        i = min(int(np.floor(p)), self.n_knots - 2)
        return i, p - i, s

    def alphas(self, sigma: float) -> np.ndarray:
        i, w, s = self.spline_position(sigma)
        spline = (1 - w) * self.c[:, i] + w * self.c[:, i + 1]
        return np.exp(spline) / (s + ALPHA_EPS)

    def alpha_grad_c(self, sigma: float, dalpha: np.ndarray) -> np.ndarray:
        """Pull a gradient w.r.t. the channel scales back onto the knot values."""
        i, w, _ = self.spline_position(sigma)
        g = np.zeros_like(self.c)
        a = self.alphas(sigma) * dalpha
        g[:, i] = (1 - w) * a
        g[:, i + 1] += w * a
        return g


def alpha(sigma: float, j: int, potentials: PotentialParams) -> float:
    return float(potentials.alphas(sigma)[j])
