"""Periodic 3D convolution cascades evaluated in the Fourier domain."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np


class DegenerateFilterError(ValueError):
    pass


def tap_offsets(k: int) -> np.ndarray:
    """Integer tap offsets of a size-``k`` kernel (size 3 gives -1, 0, 1)."""
    return np.arange(k) - k // 2


@dataclass
class FilterBank:
    """Raw kernels ``(c_out, c_in, k, k, k)`` of a bias-free, unit-stride cascade.

    Layer ``l`` computes ``y[o, n] = sum_{i, d} K[o, i, d] h[i, n + d]`` with
    periodic wrap. The first layer's kernels are mean-subtracted at every
    evaluation when ``zero_mean_first`` is set. ``norm`` caches the FFT spectral
    norm of the effective cascade on ``norm_dims``.
    """

    kernels: list
    zero_mean_first: bool = True
    norm: float | None = None
    norm_dims: tuple | None = None

    def __post_init__(self):
        self.kernels = [np.asarray(k, dtype=np.float64) for k in self.kernels]
        for a, b in zip(self.kernels[:-1], self.kernels[1:]):
            if b.shape[1] != a.shape[0]:
                raise ValueError(f"channel mismatch between layers: {a.shape} -> {b.shape}")

    @classmethod
    def random(cls, channels: Sequence[int] = (2, 8, 16, 32), kernel_size: int = 3,
               seed: int = 0, zero_mean_first: bool = True) -> "FilterBank":
        """Gaussian kernels with std ``(fan_in * 27)^(-1/2)``."""
        rng = np.random.default_rng(seed)
        ks = []
        for cin, cout in zip(channels[:-1], channels[1:]):
            std = (cin * 27) ** -0.5
            ks.append(rng.normal(0.0, std, size=(cout, cin) + (kernel_size,) * 3))
        return cls(ks, zero_mean_first)

    @property
    def channels(self) -> tuple[int, ...]:
        return (self.kernels[0].shape[1],) + tuple(k.shape[0] for k in self.kernels)

    @property
    def n_out(self) -> int:
        return self.kernels[-1].shape[0]

    def effective(self) -> list[np.ndarray]:
        ks = list(self.kernels)
        if self.zero_mean_first:
            k0 = ks[0]
            ks[0] = k0 - k0.mean(axis=(2, 3, 4), keepdims=True)
        return ks

    def scaled(self, factor: float) -> "FilterBank":
        return FilterBank([k * factor for k in self.kernels], self.zero_mean_first)


def _freqs(dims):
    return np.fft.fftfreq(dims[0]), np.fft.fftfreq(dims[1]), np.fft.rfftfreq(dims[2])


def half_spectrum_weights(dims) -> np.ndarray:
    """Multiplicities of the rfft half-grid entries within the full spectrum."""
    nz = dims[2]
    w = np.full(nz // 2 + 1, 2.0)
    w[0] = 1.0
    if nz % 2 == 0:
        w[-1] = 1.0
    return np.broadcast_to(w, (dims[0], dims[1], len(w))).ravel()


def kernel_transfer(k: np.ndarray, dims) -> np.ndarray:
    """Frequency response ``sum_d K[..., d] exp(2 pi i f.d)`` on the rfft grid, flattened."""
    fx, fy, fz = _freqs(dims)
    d = tap_offsets(k.shape[-1])
    ex, ey, ez = (np.exp(2j * np.pi * np.outer(d, f)) for f in (fx, fy, fz))
    t = np.tensordot(k, ez, axes=([-1], [0]))                   # (..., a, b, Fz)
    t = np.moveaxis(np.tensordot(t, ey, axes=([-2], [0])), -1, -2)  # (..., a, Fy, Fz)
    t = np.moveaxis(np.tensordot(t, ex, axes=([-3], [0])), -1, -3)  # (..., Fx, Fy, Fz)
    return t.reshape(k.shape[:2] + (-1,))


def offsets_from_spectrum(p: np.ndarray, dims, k: int) -> np.ndarray:
    """``Re sum_f p[..., f] exp(2 pi i f.d)`` for the kernel tap offsets ``d``."""
    fx, fy, fz = _freqs(dims)
    d = tap_offsets(k)
    ex, ey, ez = (np.exp(2j * np.pi * np.outer(f, d)) for f in (fx, fy, fz))
    p = p.reshape(p.shape[:-1] + (len(fx), len(fy), len(fz)))
    t = np.tensordot(p, ez, axes=([-1], [0]))                   # (..., Fx, Fy, c)
    t = np.moveaxis(np.tensordot(t, ey, axes=([-2], [0])), -1, -2)  # (..., Fx, b, c)
    t = np.moveaxis(np.tensordot(t, ex, axes=([-3], [0])), -1, -3)  # (..., a, b, c)
    return t.real


@dataclass
class SpectralNorm:
    value: float
    f_index: int      # flat rfft-grid index of the maximizing frequency
    u: np.ndarray     # left singular vector (c_out of last layer)
    v: np.ndarray     # right singular vector (c_in of first layer)
    dims: tuple


class Cascade:
    """A kernel cascade frozen on one grid: per-layer and composite transfers."""

    def __init__(self, kernels: list[np.ndarray], dims):
        self.dims = tuple(int(n) for n in dims)
        self.N = int(np.prod(self.dims))
        self.ksizes = [k.shape[-1] for k in kernels]
        self.layers = [kernel_transfer(k, self.dims) for k in kernels]
        T = self.layers[0]
        for Tl in self.layers[1:]:
            T = np.einsum("oif,icf->ocf", Tl, T)
        self.T = T
        self.weights = half_spectrum_weights(self.dims)
        self._norm = None

    @property
    def n_out(self) -> int:
        return self.T.shape[0]

    def fft(self, x: np.ndarray) -> np.ndarray:
        return np.fft.rfftn(x, axes=(-3, -2, -1)).reshape(x.shape[:-3] + (-1,))

    def ifft(self, xf: np.ndarray) -> np.ndarray:
        nz = self.dims[2] // 2 + 1
        xf = xf.reshape(xf.shape[:-1] + (self.dims[0], self.dims[1], nz))
        return np.fft.irfftn(xf, s=self.dims, axes=(-3, -2, -1))

    def apply_hat(self, xf):
        return np.einsum("jcf,cf->jf", self.T, xf)

    def adjoint_hat(self, zf):
        return np.einsum("jcf,jf->cf", self.T.conj(), zf)

    def apply(self, x):
        return self.ifft(self.apply_hat(self.fft(x)))

    def adjoint(self, z):
        return self.ifft(self.adjoint_hat(self.fft(z)))

    def spectral_norm(self) -> SpectralNorm:
        if self._norm is None:
            M = np.einsum("jaf,jbf->fab", self.T.conj(), self.T)
            evals, evecs = np.linalg.eigh(M)
            top = np.clip(evals[:, -1], 0, None)
            f = int(np.argmax(top))
            sig = float(np.sqrt(top[f]))
            v = evecs[f, :, -1]
            u = self.T[:, :, f] @ v / sig if sig > 0 else np.zeros(self.n_out, complex)
            self._norm = SpectralNorm(sig, f, u, v, self.dims)
        return self._norm

    def kernel_grads(self, pairs) -> list[np.ndarray]:
        """Gradients of ``sum_pairs <G, U h>`` w.r.t. each layer's effective kernel.

        ``pairs`` yields ``(g_hat, h_hat)``: rfft-grid spectra of an output
        cotangent ``(c_out, F)`` and the matching cascade input ``(c_in, F)``.
        """
        cross = [0.0] * len(self.layers)
        for g_hat, h_hat in pairs:
            hidden = [h_hat]
            for Tl in self.layers[:-1]:
                hidden.append(np.einsum("oif,if->of", Tl, hidden[-1]))
            cot = g_hat
            for l in range(len(self.layers) - 1, -1, -1):
                cross[l] = cross[l] + np.einsum("of,if->oif", cot.conj(), hidden[l])
                if l:
                    cot = np.einsum("oif,of->if", self.layers[l].conj(), cot)
        return [offsets_from_spectrum(c * self.weights, self.dims, k) / self.N
                if not np.isscalar(c) else None
                for c, k in zip(cross, self.ksizes)]

    def norm_kernel_grads(self) -> list[np.ndarray]:
        """Gradient of the spectral norm w.r.t. each layer's effective kernel."""
        sn = self.spectral_norm()
        f = sn.f_index
        fx, fy, fz = _freqs(self.dims)
        ix, iy, iz = np.unravel_index(f, (len(fx), len(fy), len(fz)))
        freq = np.array([fx[ix], fy[iy], fz[iz]])
        fwd = [sn.v]
        for Tl in self.layers[:-1]:
            fwd.append(Tl[:, :, f] @ fwd[-1])
        back = sn.u
        grads = [None] * len(self.layers)
        for l in range(len(self.layers) - 1, -1, -1):
            k = self.ksizes[l]
            d = tap_offsets(k)
            ph = np.exp(2j * np.pi * (freq[0] * d[:, None, None] + freq[1] * d[None, :, None]
                                      + freq[2] * d[None, None, :]))
            outer = np.outer(back.conj(), fwd[l])
            grads[l] = (outer[:, :, None, None, None] * ph).real
            back = self.layers[l][:, :, f].conj().T @ back
        return grads


def spectral_norm_fft(filter_bank: FilterBank, dims) -> float:
    """Largest singular value of the periodic cascade, maximized over the DFT grid."""
    return Cascade(filter_bank.effective(), dims).spectral_norm().value


def normalize(filter_bank: FilterBank, dims) -> FilterBank:
    """Attach the spectral norm so evaluation uses ``W = U / ||U||``; kernels untouched."""
    nrm = spectral_norm_fft(filter_bank, dims)
    if nrm <= 0:
        raise DegenerateFilterError("cascade is identically zero; cannot normalize")
    return replace(filter_bank, norm=nrm, norm_dims=tuple(int(n) for n in dims))
