"""Rotation-averaged weakly convex ridge regularizer.

``R(x) = |G|^-1 sum_{r in G} sum_j sum_n psi_j((W r x)_j[n])`` with
``W = U / ||U||`` and ``psi_j(t) = alpha_j^-2 phi_beta(alpha_j t)``. Inputs are
real ``(2, Nx, Ny, Nz)`` arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..volume import RotationSet, rotate_array
from .filters import Cascade, DegenerateFilterError, FilterBank
from .potentials import PotentialParams, d2phi, dphi, phi


class _Grid:
    """Cascades for every rotated grid of one input shape, plus the shared scale."""

    def __init__(self, bank: FilterBank, rotations: RotationSet, dims):
        kernels = bank.effective()
        self.cascades: dict[tuple, Cascade] = {}
        self.per_rotation = []
        for r in rotations:
            rd = r.output_dims(dims)
            if rd not in self.cascades:
                self.cascades[rd] = Cascade(kernels, rd)
            self.per_rotation.append((r, self.cascades[rd]))
        best = max(self.cascades.values(), key=lambda c: c.spectral_norm().value)
        self.norm_cascade = best
        self.norm = best.spectral_norm().value
        if self.norm <= 0:
            raise DegenerateFilterError("cascade is identically zero; cannot normalize")
        self.scale = 1.0 / self.norm


@dataclass
class WcrrModel:
    filters: FilterBank
    potentials: PotentialParams
    rotations: RotationSet = field(default_factory=RotationSet.axis_quarter_turns)
    _grids: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.potentials.n_channels != self.filters.n_out:
            raise ValueError(f"{self.potentials.n_channels} spline rows for "
                             f"{self.filters.n_out} filter channels")
        if self.filters.channels[0] != 2:
            raise ValueError("the cascade must take the 2-channel (real, imaginary) input")

    @classmethod
    def init(cls, channels=(2, 8, 16, 32), kernel_size: int = 3,
             rotations: RotationSet | None = None, n_knots: int = 12, beta: float = 2.0,
             seed: int = 0, sigma_min: float = 0.01, sigma_max: float = 0.1) -> "WcrrModel":
        bank = FilterBank.random(channels, kernel_size, seed)
        pots = PotentialParams.init(channels[-1], n_knots, beta, sigma_min, sigma_max)
        return cls(bank, pots, rotations or RotationSet.axis_quarter_turns())

    @classmethod
    def tiny(cls, seed: int = 0, rotations: RotationSet | None = None) -> "WcrrModel":
        """Desk-scale model: 2 -> 4 -> 8 -> 8 channels."""
        return cls.init((2, 4, 8, 8), 3, rotations, seed=seed)

    # -- parameters ------------------------------------------------------------

    def get_params(self) -> dict[str, np.ndarray]:
        p = {f"kernel{i}": k.copy() for i, k in enumerate(self.filters.kernels)}
        p["b"] = np.array(self.potentials.b)
        p["c"] = self.potentials.c.copy()
        return p

    def with_params(self, params: dict[str, np.ndarray]) -> "WcrrModel":
        ks = [np.array(params[f"kernel{i}"], dtype=np.float64)
              for i in range(len(self.filters.kernels))]
        bank = FilterBank(ks, self.filters.zero_mean_first)
        pots = PotentialParams(float(params["b"]), np.array(params["c"]),
                               self.potentials.sigma_min, self.potentials.sigma_max)
        return WcrrModel(bank, pots, self.rotations)

    def invalidate(self):
        self._grids.clear()

    def grid(self, dims) -> _Grid:
        dims = tuple(int(n) for n in dims)
        if dims not in self._grids:
            self._grids[dims] = _Grid(self.filters, self.rotations, dims)
        return self._grids[dims]

    def norm(self, dims) -> float:
        return self.grid(dims).norm

    # -- evaluations -------------------------------------------------------------

    def _features(self, x, cas: Cascade, scale: float, r):
        return scale * cas.apply(rotate_array(x, r))

    def value(self, x: np.ndarray, sigma: float) -> float:
        g = self.grid(x.shape[1:])
        alpha = self.potentials.alphas(sigma)[:, None, None, None]
        beta = self.potentials.beta
        total = 0.0
        for r, cas in g.per_rotation:
            a = self._features(x, cas, g.scale, r)
            total += float(np.sum(phi(alpha * a, beta) / alpha ** 2))
        return total / len(g.per_rotation)

    def grad(self, x: np.ndarray, sigma: float) -> np.ndarray:
        g = self.grid(x.shape[1:])
        alpha = self.potentials.alphas(sigma)[:, None, None, None]
        beta = self.potentials.beta
        out = np.zeros_like(x, dtype=np.float64)
        for r, cas in g.per_rotation:
            a = self._features(x, cas, g.scale, r)
            back = g.scale * cas.adjoint(dphi(alpha * a, beta) / alpha)
            out += rotate_array(back, r.inverse())
        return out / len(g.per_rotation)

    def value_and_grad(self, x: np.ndarray, sigma: float):
        g = self.grid(x.shape[1:])
        alpha = self.potentials.alphas(sigma)[:, None, None, None]
        beta = self.potentials.beta
        total = 0.0
        out = np.zeros_like(x, dtype=np.float64)
        for r, cas in g.per_rotation:
            a = self._features(x, cas, g.scale, r)
            total += float(np.sum(phi(alpha * a, beta) / alpha ** 2))
            out += rotate_array(g.scale * cas.adjoint(dphi(alpha * a, beta) / alpha), r.inverse())
        n = len(g.per_rotation)
        return total / n, out / n

    def hvp(self, x: np.ndarray, sigma: float, v: np.ndarray) -> np.ndarray:
        g = self.grid(x.shape[1:])
        alpha = self.potentials.alphas(sigma)[:, None, None, None]
        beta = self.potentials.beta
        out = np.zeros_like(x, dtype=np.float64)
        for r, cas in g.per_rotation:
            a = self._features(x, cas, g.scale, r)
            b = self._features(v, cas, g.scale, r)
            back = g.scale * cas.adjoint(d2phi(alpha * a, beta) * b)
            out += rotate_array(back, r.inverse())
        return out / len(g.per_rotation)

    def breakpoint_pattern(self, x: np.ndarray, sigma: float) -> np.ndarray:
        """Which quadratic piece each feature sits on (for finite-difference hygiene)."""
        g = self.grid(x.shape[1:])
        alpha = self.potentials.alphas(sigma)[:, None, None, None]
        beta = self.potentials.beta
        pats = []
        for r, cas in g.per_rotation:
            t = np.abs(alpha * self._features(x, cas, g.scale, r))
            pats.append(((t < 1.0 / beta).astype(np.int8) + (t < 1.0)).ravel())
        return np.concatenate(pats)

    # -- parameter gradients ---------------------------------------------------

    def _finish(self, g: _Grid, per_cascade_pairs, s_grad: float, dalpha, dbeta, sigma):
        """Assemble raw-parameter gradients from cascade cotangents and scalar parts."""
        n_layers = len(self.filters.kernels)
        kgrads = [np.zeros_like(k) for k in self.filters.kernels]
        for cas, pairs in per_cascade_pairs:
            if not pairs:
                continue
            for l, gk in enumerate(cas.kernel_grads(pairs)):
                kgrads[l] += gk
        # s = 1/||U||  =>  ds/dK = -s^2 d||U||/dK
        for l, gk in enumerate(g.norm_cascade.norm_kernel_grads()):
            kgrads[l] += -(g.scale ** 2) * s_grad * gk
        if self.filters.zero_mean_first:
            kgrads[0] = kgrads[0] - kgrads[0].mean(axis=(2, 3, 4), keepdims=True)
        out = {f"kernel{l}": kgrads[l] for l in range(n_layers)}
        out["b"] = np.array(dbeta * self.potentials.beta)
        out["c"] = self.potentials.alpha_grad_c(sigma, dalpha)
        return out

    def grad_param_vjp(self, x: np.ndarray, sigma: float, v: np.ndarray) -> dict[str, np.ndarray]:
        """Gradient over raw parameters of ``<grad_x R(x), v>`` with ``x, v`` fixed."""
        g = self.grid(x.shape[1:])
        alphas = self.potentials.alphas(sigma)
        alpha = alphas[:, None, None, None]
        beta = self.potentials.beta
        n = len(g.per_rotation)
        pairs: dict[int, tuple[Cascade, list]] = {}
        s_grad = 0.0
        dalpha = np.zeros_like(alphas)
        dbeta = 0.0
        for r, cas in g.per_rotation:
            xr = rotate_array(x, r)
            vr = rotate_array(v, r)
            xh, vh = cas.fft(xr), cas.fft(vr)
            a = g.scale * cas.ifft(cas.apply_hat(xh))
            b = g.scale * cas.ifft(cas.apply_hat(vh))
            t = alpha * a
            d1, d2 = dphi(t, beta), d2phi(t, beta)
            ga = d2 * b / n                  # d/da of psi'(a) b
            gb = d1 / alpha / n              # d/db
            dalpha += np.sum(b * (-d1 / alpha ** 2 + d2 * a / alpha), axis=(1, 2, 3)) / n
            dbeta += float(np.sum(b * a * (np.abs(beta * t) < 1.0))) / n
            s_grad += float(np.sum(ga * a) + np.sum(gb * b)) / g.scale
            entry = pairs.setdefault(id(cas), (cas, []))
            entry[1].append((cas.fft(g.scale * ga), xh))
            entry[1].append((cas.fft(g.scale * gb), vh))
        return self._finish(g, pairs.values(), s_grad, dalpha, dbeta, sigma)

    def hess_quad(self, x: np.ndarray, sigma: float, u: np.ndarray) -> float:
        return float(np.vdot(u, self.hvp(x, sigma, u)))

    def grad_param_hess_quad(self, x: np.ndarray, sigma: float,
                             u: np.ndarray) -> dict[str, np.ndarray]:
        """Gradient over raw parameters of ``<u, H_R(x) u>`` (a.e., piecewise-constant curvature)."""
        g = self.grid(x.shape[1:])
        alphas = self.potentials.alphas(sigma)
        alpha = alphas[:, None, None, None]
        beta = self.potentials.beta
        n = len(g.per_rotation)
        pairs: dict[int, tuple[Cascade, list]] = {}
        s_grad = 0.0
        dbeta = 0.0
        for r, cas in g.per_rotation:
            ur = rotate_array(u, r)
            uh = cas.fft(ur)
            a = g.scale * cas.apply(rotate_array(x, r))
            b = g.scale * cas.ifft(cas.apply_hat(uh))
            t = np.abs(alpha * a)
            gb = 2 * d2phi(t, beta) * b / n
            dbeta += float(np.sum((t < 1.0 / beta) * b * b)) / n
            s_grad += float(np.sum(gb * b)) / g.scale
            entry = pairs.setdefault(id(cas), (cas, []))
            entry[1].append((cas.fft(g.scale * gb), uh))
        return self._finish(g, pairs.values(), s_grad, np.zeros_like(alphas), dbeta, sigma)


def wcrr_value(model: WcrrModel, x, sigma: float) -> float:
    return model.value(np.asarray(x, dtype=np.float64), sigma)


def wcrr_grad(model: WcrrModel, x, sigma: float) -> np.ndarray:
    return model.grad(np.asarray(x, dtype=np.float64), sigma)


def wcrr_hvp(model: WcrrModel, x, sigma: float, v) -> np.ndarray:
    return model.hvp(np.asarray(x, dtype=np.float64), sigma, np.asarray(v, dtype=np.float64))
