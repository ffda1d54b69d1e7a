"""Binary file formats for volumes, trajectories, k-space data and coil maps.

All formats are little-endian and start with an 8-byte magic: four ASCII
letters followed by a big-endian format version ``\\0\\0\\0\\1``. Spatial
arrays are written x-fastest with interleaved (re, im) float32 pairs.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .forward import CoilSet, KSpaceData, KSpaceTrajectory
from .volume import ComplexVolume

CVOL_MAGIC = b"CVOL\0\0\0\1"
KTRJ_MAGIC = b"KTRJ\0\0\0\1"
KDAT_MAGIC = b"KDAT\0\0\0\1"
CSET_MAGIC = b"CSET\0\0\0\1"


class FormatError(ValueError):
    pass


def _read(path, magic: bytes) -> tuple[bytes, int]:
    raw = Path(path).read_bytes()
    if raw[:8] != magic:
        raise FormatError(f"{path}: expected magic {magic!r}, found {raw[:8]!r}")
    return raw, 8


def _expect_size(path, raw: bytes, need: int):
    if len(raw) != need:
        raise FormatError(f"{path}: expected {need} bytes, found {len(raw)}")


def _spatial_to_bytes(arr: np.ndarray) -> bytes:
    """(..., Nx, Ny, Nz) complex -> x-fastest interleaved float32."""
    out = np.stack([arr.real, arr.imag], axis=-1)           # (..., Nx, Ny, Nz, 2)
    nd = arr.ndim
    lead = tuple(range(nd - 3))
    out = out.transpose(*lead, nd - 1, nd - 2, nd - 3, nd)  # (..., Nz, Ny, Nx, 2)
    return np.ascontiguousarray(out, dtype="<f4").tobytes()


def _spatial_from_bytes(buf: bytes, offset: int, lead: tuple, dims) -> np.ndarray:
    nx, ny, nz = dims
    n = int(np.prod(lead, dtype=np.int64)) * nx * ny * nz * 2
    a = np.frombuffer(buf, dtype="<f4", count=n, offset=offset).astype(np.float64)
    a = a.reshape(*lead, nz, ny, nx, 2)
    nd = a.ndim
    a = a.transpose(*range(len(lead)), nd - 2, nd - 3, nd - 4, nd - 1)
    return a[..., 0] + 1j * a[..., 1]


# ----------------------------------------------------------------------------
# volumes

def write_cvol(path, v: ComplexVolume) -> None:
    nx, ny, nz = v.dims
    Path(path).write_bytes(CVOL_MAGIC + struct.pack("<3I", nx, ny, nz)
                           + _spatial_to_bytes(v.to_complex()))


def read_cvol(path) -> ComplexVolume:
    raw, off = _read(path, CVOL_MAGIC)
    if len(raw) < off + 12:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack_from("<3I", raw, off)
    off += 12
    _expect_size(path, raw, off + 8 * int(np.prod(dims, dtype=np.int64)))
    return ComplexVolume.from_complex(_spatial_from_bytes(raw, off, (), dims))


# ----------------------------------------------------------------------------
# trajectories and measurements

def write_ktrj(path, traj: KSpaceTrajectory) -> None:
    Path(path).write_bytes(KTRJ_MAGIC + struct.pack("<I", traj.M)
                           + np.ascontiguousarray(traj.points, dtype="<f8").tobytes())


def read_ktrj(path) -> KSpaceTrajectory:
    raw, off = _read(path, KTRJ_MAGIC)
    (M,) = struct.unpack_from("<I", raw, off)
    off += 4
    _expect_size(path, raw, off + 24 * M)
    pts = np.frombuffer(raw, dtype="<f8", count=3 * M, offset=off).reshape(M, 3)
    return KSpaceTrajectory(pts.astype(np.float64))


def write_kdat(path, y: KSpaceData) -> None:
    s = y.samples
    inter = np.stack([s.real, s.imag], axis=-1)
    Path(path).write_bytes(KDAT_MAGIC + struct.pack("<2I", y.coils, y.M)
                           + np.ascontiguousarray(inter, dtype="<f4").tobytes())


def read_kdat(path) -> KSpaceData:
    raw, off = _read(path, KDAT_MAGIC)
    C, M = struct.unpack_from("<2I", raw, off)
    off += 8
    _expect_size(path, raw, off + 8 * C * M)
    a = np.frombuffer(raw, dtype="<f4", count=2 * C * M, offset=off).astype(np.float64)
    a = a.reshape(C, M, 2)
    return KSpaceData(a[..., 0] + 1j * a[..., 1])


# ----------------------------------------------------------------------------
# coil maps: magic, u32 C, u32 Nx, Ny, Nz, then each coil as a CVOL payload

def write_coils(path, coils: CoilSet) -> None:
    nx, ny, nz = coils.dims
    Path(path).write_bytes(CSET_MAGIC + struct.pack("<4I", coils.C, nx, ny, nz)
                           + _spatial_to_bytes(coils.maps))


def read_coils(path) -> CoilSet:
    raw, off = _read(path, CSET_MAGIC)
    C, nx, ny, nz = struct.unpack_from("<4I", raw, off)
    off += 16
    _expect_size(path, raw, off + 8 * C * nx * ny * nz)
    return CoilSet(_spatial_from_bytes(raw, off, (C,), (nx, ny, nz)))


# ----------------------------------------------------------------------------
# portable graymap

def write_pgm(path, img: np.ndarray) -> None:
    """Binary (P5) 8-bit graymap; ``img`` is indexed (row, column)."""
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("PGM export needs a 2D uint8 image")
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval > 255:
        raise FormatError(f"{path}: 16-bit PGM not supported")
    pos += 1
    return np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w).copy()
