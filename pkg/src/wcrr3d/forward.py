"""Non-uniform DFT encoding: trajectories, coil maps, density weights, simulation.

The Fourier transform is evaluated by direct summation over voxels with
integer coordinates centred at ``floor(N/2)``; frequencies are in cycles per
voxel. Repeated normal-operator products ``A^H A`` go through an exact
Toeplitz embedding on a doubled FFT grid instead of two direct sums.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

_CHUNK = 1024  # k-space samples per direct-summation block
SSOS_TOL = 1e-6


class DegenerateTrajectoryError(ValueError):
    pass


@dataclass
class KSpaceTrajectory:
    points: np.ndarray  # (M, 3), cycles/voxel in [-0.5, 0.5)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if self.points.ndim != 2 or self.points.shape[1] != 3 or len(self.points) < 1:
            raise ValueError(f"trajectory must have shape (M, 3) with M >= 1, got {self.points.shape}")
        if np.any(self.points < -0.5) or np.any(self.points >= 0.5):
            raise ValueError("trajectory components must lie in [-0.5, 0.5)")

    @property
    def M(self) -> int:
        return len(self.points)


@dataclass
class KSpaceData:
    samples: np.ndarray  # (C, M) complex

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.complex128))
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("k-space data contains non-finite values")

    @property
    def coils(self) -> int:
        return self.samples.shape[0]

    @property
    def M(self) -> int:
        return self.samples.shape[1]


@dataclass
class CoilSet:
    maps: np.ndarray  # (C, Nx, Ny, Nz) complex

    def __post_init__(self):
        self.maps = np.asarray(self.maps, dtype=np.complex128)
        if self.maps.ndim == 3:
            self.maps = self.maps[None]
        if self.maps.ndim != 4:
            raise ValueError(f"coil maps must have shape (C, Nx, Ny, Nz), got {self.maps.shape}")
        ssos = np.sum(np.abs(self.maps) ** 2, axis=0)
        if np.max(np.abs(ssos - 1)) > SSOS_TOL:
            raise ValueError("coil maps are not sum-of-squares normalized")

    @property
    def C(self) -> int:
        return self.maps.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.maps.shape[1:])

    @classmethod
    def unit(cls, dims) -> "CoilSet":
        return cls(np.ones((1, *dims), dtype=np.complex128))


@dataclass
class DensityWeights:
    weights: np.ndarray


@dataclass
class NoiseModel:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("noise sigma must be nonnegative")


# ----------------------------------------------------------------------------
# direct NDFT

def voxel_offsets(n: int) -> np.ndarray:
    return np.arange(n) - n // 2


def _axis_phases(k: np.ndarray, r: np.ndarray, sign: float) -> np.ndarray:
    return np.exp(sign * 2j * np.pi * np.outer(k, r))


def _ndft(x: np.ndarray, k: np.ndarray, coords) -> np.ndarray:
    """sum_n x[..., n] exp(-2 pi i <k_m, r_n>) for axis coordinate vectors ``coords``."""
    lead = x.shape[:-3]
    out = np.empty(lead + (len(k),), dtype=np.complex128)
    for s in range(0, len(k), _CHUNK):
        kc = k[s:s + _CHUNK]
        ex, ey, ez = (_axis_phases(kc[:, a], coords[a], -1.0) for a in range(3))
        t = x @ ez.T                                   # (..., Nx, Ny, m)
        t = np.einsum("...ijm,mj->...im", t, ey)
        out[..., s:s + _CHUNK] = np.einsum("...im,mi->...m", t, ex)
    return out


def _ndft_adj(y: np.ndarray, k: np.ndarray, coords) -> np.ndarray:
    """sum_m y[..., m] exp(+2 pi i <k_m, r_n>) on the grid spanned by ``coords``."""
    lead = y.shape[:-1]
    out = np.zeros(lead + tuple(len(c) for c in coords), dtype=np.complex128)
    for s in range(0, len(k), _CHUNK):
        kc, yc = k[s:s + _CHUNK], y[..., s:s + _CHUNK]
        ex, ey, ez = (_axis_phases(kc[:, a], coords[a], 1.0) for a in range(3))
        b = yc[..., :, None] * ex                      # (..., m, Nx)
        b = b[..., :, :, None] * ey[:, None, :]        # (..., m, Nx, Ny)
        b = np.moveaxis(b, -3, -1)                     # (..., Nx, Ny, m)
        out += b @ ez
    return out


def _as_complex(x) -> np.ndarray:
    from .volume import ComplexVolume

    if isinstance(x, ComplexVolume):
        return x.to_complex()
    x = np.asarray(x)
    if not np.iscomplexobj(x) and x.ndim == 4 and x.shape[0] == 2:
        return x[0] + 1j * x[1]
    return x.astype(np.complex128)


def ndft_forward(x, traj: KSpaceTrajectory) -> np.ndarray:
    """Direct NDFT of a complex volume at the trajectory points, shape ``(M,)``."""
    x = _as_complex(x)
    coords = [voxel_offsets(n) for n in x.shape[-3:]]
    return _ndft(x, traj.points, coords)


def ndft_adjoint(y, traj: KSpaceTrajectory, dims):
    """Adjoint NDFT, returned as a :class:`ComplexVolume`."""
    from .volume import ComplexVolume

    y = np.asarray(y, dtype=np.complex128)
    if y.shape[-1] != traj.M:
        raise ValueError(f"expected {traj.M} samples, got {y.shape[-1]}")
    coords = [voxel_offsets(int(n)) for n in dims]
    return ComplexVolume.from_complex(_ndft_adj(y, traj.points, coords))


def estimate_density_weights(traj: KSpaceTrajectory, dims, iters: int = 10) -> DensityWeights:
    """Pipe-Menon fixed point ``w <- w / |F F^H w|`` from unit weights."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    coords = [voxel_offsets(int(n)) for n in dims]
    w = np.ones(traj.M)
    for _ in range(iters):
        denom = np.abs(_ndft(_ndft_adj(w.astype(np.complex128), traj.points, coords),
                             traj.points, coords))
        if np.any(denom < 1e-12):
            raise DegenerateTrajectoryError("density iteration hit a vanishing denominator")
        w = w / denom
    return DensityWeights(w)


# ----------------------------------------------------------------------------
# coils, multi-coil encoding, simulation

def fibonacci_sphere(n: int, hemisphere: bool = False) -> np.ndarray:
    """``n`` near-uniform unit vectors (upper hemisphere only if requested)."""
    i = np.arange(n) + 0.5
    z = 1 - i / n if hemisphere else 1 - 2 * i / n
    phi = np.pi * (3 - np.sqrt(5)) * i
    rho = np.sqrt(np.clip(1 - z * z, 0, None))
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


def synth_coils(dims, C: int, seed: int = 0, width: float = 1.2, radius: float = 1.6) -> CoilSet:
    """Gaussian-profile coils around the volume with linear phase, root-sum-of-squares normalized."""
    from .volume import grid_coordinates

    if C < 1:
        raise ValueError("need at least one coil")
    rng = np.random.default_rng(seed)
    pts = grid_coordinates(dims)
    centers = radius * fibonacci_sphere(C)
    slopes = rng.uniform(-np.pi / 4, np.pi / 4, size=(C, 3))
    offsets = rng.uniform(-np.pi, np.pi, size=C)
    maps = np.empty((C, *dims), dtype=np.complex128)
    for c in range(C):
        d2 = np.sum((pts - centers[c]) ** 2, axis=-1)
        maps[c] = np.exp(-d2 / (2 * width ** 2)) * np.exp(1j * (pts @ slopes[c] + offsets[c]))
    maps /= np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return CoilSet(maps)


def forward(x, coils: CoilSet, traj: KSpaceTrajectory) -> KSpaceData:
    x = _as_complex(x)
    if x.shape != coils.dims:
        raise ValueError(f"volume dims {x.shape} do not match coil dims {coils.dims}")
    coords = [voxel_offsets(n) for n in x.shape]
    return KSpaceData(_ndft(coils.maps * x, traj.points, coords))


def adjoint(y: KSpaceData, coils: CoilSet, traj: KSpaceTrajectory, dims=None):
    from .volume import ComplexVolume

    dims = tuple(dims) if dims is not None else coils.dims
    if dims != coils.dims:
        raise ValueError(f"dims {dims} do not match coil dims {coils.dims}")
    if y.samples.shape != (coils.C, traj.M):
        raise ValueError(f"data shape {y.samples.shape} != ({coils.C}, {traj.M})")
    coords = [voxel_offsets(n) for n in dims]
    per_coil = _ndft_adj(y.samples, traj.points, coords)
    return ComplexVolume.from_complex(np.sum(np.conj(coils.maps) * per_coil, axis=0))


def simulate_acquisition(gt, coils: CoilSet, traj: KSpaceTrajectory,
                         noise: NoiseModel) -> KSpaceData:
    """Noiseless encoding plus complex white noise of total variance sigma^2."""
    clean = forward(gt, coils, traj).samples
    if noise.sigma == 0:
        return KSpaceData(clean)
    rng = np.random.Generator(np.random.Philox(key=noise.seed))
    n = rng.standard_normal((2,) + clean.shape) * (noise.sigma / np.sqrt(2))
    return KSpaceData(clean + n[0] + 1j * n[1])


# ----------------------------------------------------------------------------
# trajectories

_BELOW_HALF = np.nextafter(0.5, 0.0)


def radial_density(r: np.ndarray, exponent: float = 2.0, core: float = 0.05) -> np.ndarray:
    """Unnormalized pdf of the sample radius for ``random_vds`` on [0, 0.5]."""
    r = np.asarray(r, dtype=np.float64)
    return np.where((r >= 0) & (r <= 0.5), r ** 2 * (r + core) ** (-exponent), 0.0)


def generate_trajectory(kind: str, M_total: int, *, samples_per_spoke: int | None = None,
                        exponent: float = 2.0, core: float = 0.05,
                        seed: int = 0) -> KSpaceTrajectory:
    """Radial spokes on Fibonacci directions, or i.i.d. variable-density draws."""
    if M_total < 1:
        raise ValueError("M_total must be >= 1")
    if kind == "radial3d":
        ns = samples_per_spoke or max(2, int(round(M_total ** (1 / 3) * 2)))
        n_spokes = -(-M_total // ns)
        t = -0.5 + np.arange(ns) / ns
        dirs = fibonacci_sphere(n_spokes, hemisphere=True)
        pts = (dirs[:, None, :] * t[None, :, None]).reshape(-1, 3)[:M_total]
    elif kind == "random_vds":
        rng = np.random.default_rng(seed)
        grid = np.linspace(0, 0.5, 20001)
        pdf = radial_density(grid, exponent, core)
        cdf = np.concatenate([[0], np.cumsum((pdf[1:] + pdf[:-1]) / 2)])
        radii = np.interp(rng.uniform(0, cdf[-1], M_total), cdf, grid)
        dirs = rng.standard_normal((M_total, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pts = radii[:, None] * dirs
    else:
        raise ValueError(f"unknown trajectory kind {kind!r}")
    return KSpaceTrajectory(np.clip(pts, -0.5, _BELOW_HALF))


# ----------------------------------------------------------------------------
# encoding operator with Toeplitz normal products

class EncodingOperator:
    """Stacked coil encoding ``A = [F S_1; ...; F S_C]`` on complex volumes.

    ``normal`` evaluates ``A^H D A`` (``D`` optional sample weights) through an
    exact circulant embedding of the NDFT point-spread kernel.
    """

    def __init__(self, coils: CoilSet, traj: KSpaceTrajectory, weights=None):
        self.coils = coils
        self.traj = traj
        self.dims = coils.dims
        self.weights = None if weights is None else np.asarray(weights, dtype=np.float64)
        self._kernel_ft = None
        self._norm_sq = None

    def forward(self, x) -> np.ndarray:
        return forward(x, self.coils, self.traj).samples

    def adjoint(self, y) -> np.ndarray:
        y = y.samples if isinstance(y, KSpaceData) else np.asarray(y)
        return adjoint(KSpaceData(y), self.coils, self.traj).to_complex()

    def _kernel(self):
        if self._kernel_ft is None:
            coords = [np.arange(-(n - 1), n) for n in self.dims]
            w = np.ones(self.traj.M) if self.weights is None else self.weights
            psf = _ndft_adj(w.astype(np.complex128), self.traj.points, coords)
            big = np.zeros(tuple(2 * n for n in self.dims), dtype=np.complex128)
            idx = np.ix_(*[np.arange(-(n - 1), n) % (2 * n) for n in self.dims])
            big[idx] = psf
            self._kernel_ft = np.fft.fftn(big)
        return self._kernel_ft

    def normal(self, x: np.ndarray) -> np.ndarray:
        """``A^H A x`` for a complex volume array ``x``."""
        kft = self._kernel()
        big = tuple(2 * n for n in self.dims)
        crop = tuple(slice(0, n) for n in self.dims)
        out = np.zeros(self.dims, dtype=np.complex128)
        for s in self.coils.maps:
            conv = np.fft.ifftn(kft * np.fft.fftn(s * x, big, axes=(0, 1, 2)))[crop]
            out += np.conj(s) * conv
        return out

    def norm_sq(self, iters: int = 50, seed: int = 0) -> float:
        """Power-iteration estimate of ``||A||^2``."""
        if self._norm_sq is None:
            from .solvers.power import power_iteration_norm

            shape = (2, *self.dims)

            def apply(v):
                z = self.normal(v.reshape(shape)[0] + 1j * v.reshape(shape)[1])
                return np.stack([z.real, z.imag]).ravel()

            self._norm_sq, _ = power_iteration_norm(apply, int(np.prod(shape)), iters, seed=seed)
        return self._norm_sq
