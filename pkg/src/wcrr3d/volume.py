"""Complex volumes, quarter-turn rotations, phantoms, patches and masked metrics.

Complex images are held as real arrays of shape ``(2, Nx, Ny, Nz)`` (real and
imaginary channel first). Everything numerical downstream works on that layout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation as _SciRotation

PSNR_CAP_DB = 99.0
MASK_THRESHOLD = 0.05


@dataclass
class ComplexVolume:
    """A 3D complex image stored as a real/imaginary channel pair."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 4 or self.data.shape[0] != 2:
            raise ValueError(f"expected shape (2, Nx, Ny, Nz), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("volume contains non-finite values")

    @classmethod
    def from_complex(cls, arr) -> "ComplexVolume":
        arr = np.asarray(arr)
        return cls(np.stack([arr.real, arr.imag]).astype(np.float64))

    @classmethod
    def zeros(cls, dims) -> "ComplexVolume":
        return cls(np.zeros((2, *dims)))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape[1:])

    def to_complex(self) -> np.ndarray:
        return self.data[0] + 1j * self.data[1]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.data[0], self.data[1])

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def copy(self) -> "ComplexVolume":
        return ComplexVolume(self.data.copy())


def as_array(v) -> np.ndarray:
    """Return the ``(2, Nx, Ny, Nz)`` array behind a volume-like input."""
    if isinstance(v, ComplexVolume):
        return v.data
    arr = np.asarray(v)
    if np.iscomplexobj(arr):
        return np.stack([arr.real, arr.imag])
    return arr


# ----------------------------------------------------------------------------
# rotations

_AXES = ("X", "Y", "Z")
# rot90 plane per rotation axis, in spatial-axis numbering (x=0, y=1, z=2).
_PLANES = {"X": (1, 2), "Y": (2, 0), "Z": (0, 1)}


@dataclass(frozen=True)
class Rotation:
    """Quarter-turn rotation about a coordinate axis.

    One quarter turn maps a volume ``v`` of dims ``(Nx, Ny, Nz)`` to ``out`` with

    ====  ==========================================  ===============
    axis  out[i, j, k]                                out dims
    ====  ==========================================  ===============
    Z     v[j, Ny-1-i, k]                             (Ny, Nx, Nz)
    X     v[i, k, Nz-1-j]                             (Nx, Nz, Ny)
    Y     v[Nx-1-k, j, i]                             (Nz, Ny, Nx)
    ====  ==========================================  ===============

    Several quarter turns apply the table repeatedly.
    """

    axis: str = "Z"
    quarter_turns: int = 1

    def __post_init__(self):
        if self.axis not in _AXES:
            raise ValueError(f"axis must be one of {_AXES}, got {self.axis!r}")
        if self.quarter_turns not in (0, 1, 2, 3):
            raise ValueError(f"quarter_turns must be 0..3, got {self.quarter_turns!r}")
        object.__setattr__(self, "quarter_turns", int(self.quarter_turns))

    @property
    def is_identity(self) -> bool:
        return self.quarter_turns == 0

    def inverse(self) -> "Rotation":
        return Rotation(self.axis, -self.quarter_turns % 4)

    def output_dims(self, dims) -> tuple[int, int, int]:
        dims = list(dims)
        if self.quarter_turns % 2:
            p, q = _PLANES[self.axis]
            dims[p], dims[q] = dims[q], dims[p]
        return tuple(dims)


IDENTITY = Rotation("Z", 0)


def rotate_array(x: np.ndarray, r: Rotation) -> np.ndarray:
    """Rotate the three trailing axes of ``x`` (leading axes are channels)."""
    if r.quarter_turns == 0:
        return x
    lead = x.ndim - 3
    p, q = _PLANES[r.axis]
    return np.rot90(x, r.quarter_turns, axes=(lead + p, lead + q))


def rotate(v: ComplexVolume, r: Rotation) -> ComplexVolume:
    return ComplexVolume(np.ascontiguousarray(rotate_array(v.data, r)))


@dataclass
class RotationSet:
    """Ordered rotation set whose first element is the identity."""

    elements: list[Rotation]
    is_group: bool = field(init=False)

    def __post_init__(self):
        self.elements = list(self.elements)
        if not self.elements or not self.elements[0].is_identity:
            raise ValueError("the first element of a rotation set must be the identity")
        probe = np.arange(27.0).reshape(1, 3, 3, 3)
        images = [rotate_array(probe, r) for r in self.elements]
        for a in range(len(images)):
            for b in range(a):
                if np.array_equal(images[a], images[b]):
                    raise ValueError(f"duplicate rotation {self.elements[a]}")
        self.is_group = all(
            any(np.array_equal(rotate_array(img, r), other) for other in images)
            for img in images
            for r in self.elements
        )

    def __len__(self):
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    @classmethod
    def axis_quarter_turns(cls) -> "RotationSet":
        """Identity plus one quarter turn about each of X, Y and Z (not a group)."""
        return cls([IDENTITY, Rotation("X", 1), Rotation("Y", 1), Rotation("Z", 1)])

    @classmethod
    def cyclic_z(cls) -> "RotationSet":
        return cls([IDENTITY, Rotation("Z", 1), Rotation("Z", 2), Rotation("Z", 3)])

    @classmethod
    def identity_only(cls) -> "RotationSet":
        return cls([IDENTITY])

    def to_list(self) -> list[list]:
        return [[r.axis, r.quarter_turns] for r in self.elements]

    @classmethod
    def from_list(cls, items) -> "RotationSet":
        return cls([Rotation(a, int(q)) for a, q in items])


# ----------------------------------------------------------------------------
# phantoms

@dataclass(frozen=True)
class Ellipsoid:
    center: tuple[float, float, float]
    semi_axes: tuple[float, float, float]
    angles: tuple[float, float, float] = (0.0, 0.0, 0.0)  # intrinsic z-y-x, degrees
    intensity: float = 1.0

    def rotation_matrix(self) -> np.ndarray:
        return _SciRotation.from_euler("ZYX", self.angles, degrees=True).as_matrix()

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Membership test for points of shape ``(..., 3)`` in normalized coordinates."""
        local = (points - np.asarray(self.center)) @ self.rotation_matrix()
        return np.sum((local / np.asarray(self.semi_axes)) ** 2, axis=-1) <= 1.0


# monomials of the phase polynomial, in coefficient order
PHASE_MONOMIALS = ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1),
                   (2, 0, 0), (0, 2, 0), (0, 0, 2), (1, 1, 0), (1, 0, 1), (0, 1, 1))


@dataclass(frozen=True)
class EllipsoidPhantom:
    """Sum of constant-intensity ellipsoids times a smooth polynomial phase.

    ``phase`` holds radian coefficients of the monomials in ``PHASE_MONOMIALS``
    (1, x, y, z, x^2, y^2, z^2, xy, xz, yz) over normalized coordinates.
    """

    ellipsoids: tuple[Ellipsoid, ...] = ()
    phase: tuple[float, ...] = (0.0,) * len(PHASE_MONOMIALS)

    @classmethod
    def default(cls) -> "EllipsoidPhantom":
        """Modified 3D Shepp-Logan head with a gentle phase ramp."""
        rows = [
            # intensity, semi-axes, center, angles
            (1.0, (0.69, 0.92, 0.81), (0.0, 0.0, 0.0), (0, 0, 0)),
            (-0.8, (0.6624, 0.874, 0.78), (0.0, -0.0184, 0.0), (0, 0, 0)),
            (-0.2, (0.11, 0.31, 0.22), (0.22, 0.0, 0.0), (-18, 0, 10)),
            (-0.2, (0.16, 0.41, 0.28), (-0.22, 0.0, 0.0), (18, 0, 10)),
            (0.2, (0.21, 0.25, 0.41), (0.0, 0.35, -0.15), (0, 0, 0)),
            (0.2, (0.046, 0.046, 0.05), (0.0, 0.1, 0.25), (0, 0, 0)),
            (0.2, (0.046, 0.046, 0.05), (0.0, -0.1, 0.25), (0, 0, 0)),
            (0.2, (0.046, 0.023, 0.05), (-0.08, -0.605, 0.0), (0, 0, 0)),
            (0.2, (0.023, 0.023, 0.02), (0.0, -0.606, 0.0), (0, 0, 0)),
            (0.2, (0.023, 0.046, 0.02), (0.06, -0.605, 0.0), (0, 0, 0)),
        ]
        ells = tuple(Ellipsoid(c, a, ang, i) for i, a, c, ang in rows)
        return cls(ells, (0.1, 0.6, -0.4, 0.3, 0.2, 0.0, -0.1, 0.0, 0.0, 0.0))

    @classmethod
    def random(cls, seed: int, n_inner: int = 8) -> "EllipsoidPhantom":
        """Random head-like phantom: a bright shell, a body and ``n_inner`` features."""
        rng = np.random.default_rng(seed)
        outer = rng.uniform(0.7, 0.92, 3)
        ells = [Ellipsoid((0.0, 0.0, 0.0), tuple(outer), (0.0, 0.0, 0.0), 1.0)]
        body = outer * rng.uniform(0.88, 0.95)
        ells.append(Ellipsoid((0.0, 0.0, 0.0), tuple(body),
                              tuple(rng.uniform(-10, 10, 3)), -rng.uniform(0.5, 0.7)))
        for _ in range(n_inner):
            axes = rng.uniform(0.06, 0.35, 3)
            center = rng.uniform(-0.5, 0.5, 3)
            ells.append(Ellipsoid(tuple(center), tuple(axes),
                                  tuple(rng.uniform(-90, 90, 3)),
                                  float(rng.choice([-1, 1]) * rng.uniform(0.08, 0.3))))
        phase = np.zeros(len(PHASE_MONOMIALS))
        phase[:4] = rng.uniform(-0.6, 0.6, 4)
        phase[4:] = rng.uniform(-0.2, 0.2, 6)
        return cls(tuple(ells), tuple(phase))


def grid_coordinates(dims) -> np.ndarray:
    """Normalized voxel coordinates ``(i - floor(N/2)) / (N/2)``, shape ``(*dims, 3)``."""
    axes = [(np.arange(n) - n // 2) / (n / 2) for n in dims]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def phase_map(coeffs, points: np.ndarray) -> np.ndarray:
    phase = np.zeros(points.shape[:-1])
    for c, (a, b, d) in zip(coeffs, PHASE_MONOMIALS):
        if c:
            phase += c * points[..., 0] ** a * points[..., 1] ** b * points[..., 2] ** d
    return phase


def generate_phantom(spec: EllipsoidPhantom, dims) -> ComplexVolume:
    dims = tuple(int(n) for n in dims)
    if any(n <= 0 for n in dims):
        raise ValueError(f"dims must be positive, got {dims}")
    pts = grid_coordinates(dims)
    mag = np.zeros(dims)
    for e in spec.ellipsoids:
        mag[e.contains(pts)] += e.intensity
    return ComplexVolume.from_complex(mag * np.exp(1j * phase_map(spec.phase, pts)))


# ----------------------------------------------------------------------------
# patches and masks

def extract_patch(v: ComplexVolume, corner: Sequence[int], size: Sequence[int]) -> ComplexVolume:
    corner = tuple(int(c) for c in corner)
    size = tuple(int(s) for s in size)
    if len(corner) != 3 or len(size) != 3:
        raise ValueError("corner and size need three entries")
    for c, s, n in zip(corner, size, v.dims):
        if c < 0 or s < 1 or c + s > n:
            raise IndexError(f"patch corner={corner} size={size} exceeds volume {v.dims}")
    sl = tuple(slice(c, c + s) for c, s in zip(corner, size))
    return ComplexVolume(v.data[(slice(None),) + sl].copy())


def foreground_mask(gt: ComplexVolume, threshold: float = MASK_THRESHOLD) -> np.ndarray:
    """Voxels whose magnitude exceeds ``threshold`` times the maximum magnitude."""
    mag = gt.magnitude()
    peak = mag.max()
    if peak <= 0:
        raise ValueError("ground truth is identically zero; mask undefined")
    return mag > threshold * peak


def _check_pair(gt: ComplexVolume, rec: ComplexVolume, mask: np.ndarray):
    if gt.dims != rec.dims:
        raise ValueError(f"dimension mismatch: {gt.dims} vs {rec.dims}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != gt.dims:
        raise ValueError(f"mask shape {mask.shape} does not match {gt.dims}")
    if not mask.any():
        raise ValueError("empty mask")
    return mask


def zscore(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Standardize ``img`` with mean/std taken over ``mask``; zero std skips scaling."""
    vals = img[mask]
    mu, sd = vals.mean(), vals.std()
    out = img - mu
    return out / sd if sd > 0 else out


def masked_psnr(gt: ComplexVolume, rec: ComplexVolume, mask, cap: float = PSNR_CAP_DB) -> float:
    mask = _check_pair(gt, rec, mask)
    g = zscore(gt.magnitude(), mask)[mask]
    r = zscore(rec.magnitude(), mask)[mask]
    mse = np.mean((g - r) ** 2)
    if mse == 0:
        return cap
    return float(min(cap, 10 * np.log10(g.max() ** 2 / mse)))


def masked_ssim(gt: ComplexVolume, rec: ComplexVolume, mask, *, normalize: bool = True,
                data_range: float | None = None, sigma: float = 1.5, radius: int = 5,
                k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean of the local SSIM map (Gaussian window) over the mask, on magnitudes.

    With ``normalize`` both magnitudes are z-scored on the mask first. The data
    range defaults to max - min of the (normalized) ground truth on the mask.
    """
    mask = _check_pair(gt, rec, mask)
    g, r = gt.magnitude(), rec.magnitude()
    if normalize:
        g, r = zscore(g, mask), zscore(r, mask)
    if data_range is None:
        data_range = float(g[mask].max() - g[mask].min())
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2

    def blur(a):
        return ndimage.gaussian_filter(a, sigma, mode="reflect", truncate=radius / sigma)

    mu_g, mu_r = blur(g), blur(r)
    var_g = blur(g * g) - mu_g ** 2
    var_r = blur(r * r) - mu_r ** 2
    cov = blur(g * r) - mu_g * mu_r
    num = (2 * mu_g * mu_r + c1) * (2 * cov + c2)
    den = (mu_g ** 2 + mu_r ** 2 + c1) * (var_g + var_r + c2)
    ssim_map = np.where(den > 0, num / np.where(den > 0, den, 1.0), 1.0)
    return float(ssim_map[mask].mean())
