"""Minimal NIfTI-1 reader/writer for label maps, landscapes and masks.

Single-file ``.nii`` and gzip-compressed ``.nii.gz``; 3-D volumes of
uint8, int16, int32 or float32. The world affine comes from the sform when
its code is set, otherwise from the qform quaternion, otherwise from pixdim.
"""
from __future__ import annotations

import gzip
import struct
import zlib
from pathlib import Path

import numpy as np

from .volume import BinaryMask, FuzzyLandscape, Grid, LabelVolume


class NiftiError(Exception):
    """Base class for every NIfTI read/write failure."""


class NiftiFormatError(NiftiError):
    """Bad magic, header size or structural inconsistency."""


class NiftiTruncatedError(NiftiFormatError):
    """File ends before the header or voxel data does."""


class NiftiDtypeError(NiftiError):
    """Datatype code outside the supported set."""


class NiftiAffineError(NiftiError):
    """Missing, non-finite or singular voxel-to-world transform."""


class NiftiDataError(NiftiError):
    """Voxel values inconsistent with the requested volume kind."""


HEADER_SIZE = 348
VOX_OFFSET = 352

DTYPES = {2: np.uint8, 4: np.int16, 8: np.int32, 16: np.float32}
CODES = {np.dtype(v): k for k, v in DTYPES.items()}

# field layout of the 348-byte header (only the fields we touch)
_OFF = {
    "sizeof_hdr": (0, "i"),
    "dim": (40, "8h"),
    "datatype": (70, "h"),
    "bitpix": (72, "h"),
    "pixdim": (76, "8f"),
    "vox_offset": (108, "f"),
    "scl_slope": (112, "f"),
    "scl_inter": (116, "f"),
    "xyzt_units": (123, "b"),
    "qform_code": (252, "h"),
    "sform_code": (254, "h"),
    "quatern": (256, "6f"),
    "srow": (280, "12f"),
    "magic": (344, "4s"),
}


def _get(hdr: bytes, key: str, endian: str):
    off, fmt = _OFF[key]
    vals = struct.unpack_from(endian + fmt, hdr, off)
    return vals if len(vals) > 1 else vals[0]


def _read_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            return gzip.decompress(raw)
        except (OSError, EOFError, zlib.error) as exc:
            raise NiftiTruncatedError(f"{path}: corrupt gzip stream ({exc})") from None
    return raw


def _quaternion_affine(hdr: bytes, endian: str) -> np.ndarray:
    b, c, d, qx, qy, qz = _get(hdr, "quatern", endian)
    pixdim = _get(hdr, "pixdim", endian)
    qfac = -1.0 if pixdim[0] < 0 else 1.0
    a2 = 1.0 - (b * b + c * c + d * d)
    if a2 < -1e-6:
        raise NiftiAffineError("qform quaternion is not normalised")
    a = np.sqrt(max(a2, 0.0))
    rot = np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ])
    zooms = np.array([pixdim[1], pixdim[2], pixdim[3] * qfac], dtype=np.float64)
    aff = np.eye(4)
    aff[:3, :3] = rot * zooms
    aff[:3, 3] = (qx, qy, qz)
    return aff


def _header_affine(hdr: bytes, endian: str) -> np.ndarray:
    if _get(hdr, "sform_code", endian) > 0:
        aff = np.eye(4)
        aff[:3, :] = np.array(_get(hdr, "srow", endian), dtype=np.float64).reshape(3, 4)
    elif _get(hdr, "qform_code", endian) > 0:
        aff = _quaternion_affine(hdr, endian)
    else:
        pixdim = _get(hdr, "pixdim", endian)
        aff = np.diag([pixdim[1], pixdim[2], pixdim[3], 1.0]).astype(np.float64)
    if not np.all(np.isfinite(aff)):
        raise NiftiAffineError("affine contains non-finite values")
    det = np.linalg.det(aff[:3, :3])
    if not np.isfinite(det) or abs(det) < 1e-12:
        raise NiftiAffineError("affine is not invertible")
    return aff


def load(path) -> tuple[np.ndarray, np.ndarray]:
    """Read raw ``(data, affine)``; ``data`` keeps its on-disk dtype, indexed [i, j, k]."""
    path = Path(path)
    buf = _read_bytes(path)
    if len(buf) < HEADER_SIZE:
        raise NiftiTruncatedError(f"{path}: {len(buf)} bytes, header needs {HEADER_SIZE}")
    hdr = buf[:HEADER_SIZE]
    if struct.unpack_from("<i", hdr, 0)[0] == HEADER_SIZE:
        endian = "<"
    elif struct.unpack_from(">i", hdr, 0)[0] == HEADER_SIZE:
        endian = ">"
    else:
        raise NiftiFormatError(f"{path}: sizeof_hdr is not {HEADER_SIZE}")
    magic = _get(hdr, "magic", endian)
    if magic not in (b"n+1\x00", b"n+1 "):
        raise NiftiFormatError(f"{path}: bad magic {magic!r} (need single-file NIfTI-1)")

    dim = _get(hdr, "dim", endian)
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise NiftiFormatError(f"{path}: dim[0]={ndim} outside 1..7")
    shape = [int(d) for d in dim[1 : ndim + 1]]
    if any(d < 1 for d in shape):
        raise NiftiFormatError(f"{path}: non-positive dimension in {shape}")
    if any(d != 1 for d in shape[3:]):
        raise NiftiFormatError(f"{path}: only 3-D volumes are supported, got {shape}")
    shape = (shape + [1, 1, 1])[:3]

    code = _get(hdr, "datatype", endian)
    if code not in DTYPES:
        raise NiftiDtypeError(f"{path}: unsupported datatype code {code}")
    dtype = np.dtype(DTYPES[code]).newbyteorder(endian)

    vox_offset = _get(hdr, "vox_offset", endian)
    if not np.isfinite(vox_offset) or vox_offset < HEADER_SIZE or vox_offset != int(vox_offset):
        raise NiftiFormatError(f"{path}: invalid vox_offset {vox_offset}")
    start = int(vox_offset)
    nbytes = shape[0] * shape[1] * shape[2] * dtype.itemsize
    if start + nbytes > len(buf):
        raise NiftiTruncatedError(f"{path}: voxel data truncated ({len(buf) - start} of {nbytes} bytes)")

    affine = _header_affine(hdr, endian)
    data = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=start)
    data = data.reshape(shape, order="F").astype(dtype.newbyteorder("="))

    slope = _get(hdr, "scl_slope", endian)
    inter = _get(hdr, "scl_inter", endian)
    if np.isfinite(slope) and slope != 0 and (slope != 1 or (np.isfinite(inter) and inter != 0)):
        with np.errstate(over="ignore", invalid="ignore"):
            data = (data * np.float32(slope) + np.float32(inter if np.isfinite(inter) else 0)).astype(np.float32)
        if not np.all(np.isfinite(data)):
            raise NiftiDataError(f"{path}: scl_slope/scl_inter overflow the float32 range")
    return np.ascontiguousarray(data), affine


def read_nifti(path, label_names=None, empty_labels=()) -> LabelVolume | FuzzyLandscape:
    """Integer files load as :class:`LabelVolume`, float32 files as :class:`FuzzyLandscape`."""
    data, affine = load(path)
    try:
        grid = Grid(data.shape, affine)
    except ValueError as exc:
        raise NiftiAffineError(f"{path}: {exc}") from None
    try:
        if np.issubdtype(data.dtype, np.integer):
            return LabelVolume(grid, data, dict(label_names or {}), frozenset(empty_labels))
        return FuzzyLandscape(grid, data.astype(np.float64))
    except ValueError as exc:
        raise NiftiDataError(f"{path}: {exc}") from None


def read_grid(path) -> Grid:
    data, affine = load(path)
    try:
        return Grid(data.shape, affine)
    except ValueError as exc:
        raise NiftiAffineError(f"{path}: {exc}") from None


def _header(shape, dtype: np.dtype, affine: np.ndarray) -> bytes:
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *shape, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, CODES[dtype])
    struct.pack_into("<h", hdr, 72, dtype.itemsize * 8)
    zooms = np.linalg.norm(affine[:3, :3], axis=0)
    struct.pack_into("<8f", hdr, 76, 1.0, *zooms, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into("<f", hdr, 112, 1.0)
    struct.pack_into("<f", hdr, 116, 0.0)
    hdr[123] = 2 | 8  # mm, s
    struct.pack_into("<h", hdr, 254, 2)  # sform: aligned anatomical
    struct.pack_into("<12f", hdr, 280, *affine[:3, :].reshape(-1))
    hdr[344:348] = b"n+1\x00"
    return bytes(hdr) + b"\x00" * (VOX_OFFSET - HEADER_SIZE)


def save(data: np.ndarray, affine, path) -> None:
    path = Path(path)
    data = np.asarray(data)
    if data.dtype == bool:
        data = data.astype(np.uint8)
    dtype = np.dtype(data.dtype.name)
    if dtype not in CODES:
        raise NiftiDtypeError(f"cannot write dtype {data.dtype}; use uint8, int16, int32 or float32")
    if data.ndim != 3:
        raise NiftiFormatError(f"only 3-D volumes can be written, got shape {data.shape}")
    affine = np.asarray(affine, dtype=np.float64)
    payload = _header(data.shape, dtype, affine)
    payload += np.asarray(data, dtype=dtype.newbyteorder("<")).tobytes(order="F")
    if path.name.endswith(".gz"):
        payload = gzip.compress(payload, compresslevel=6, mtime=0)
    path.write_bytes(payload)


def write_nifti(v: LabelVolume | FuzzyLandscape | BinaryMask, path, dtype=None) -> None:
    """Write a volume; landscapes as float32, masks as uint8, labels as their own dtype."""
    if isinstance(v, FuzzyLandscape):
        data = v.data.astype(dtype or np.float32)
    elif isinstance(v, BinaryMask):
        data = v.data.astype(dtype or np.uint8)
    else:
        data = v.data if dtype is None else v.data.astype(dtype)
        if np.dtype(data.dtype) not in CODES:
            hi = int(data.max()) if data.size else 0
            data = data.astype(np.uint8 if hi < 256 else np.int16 if hi < 32768 else np.int32)
    save(data, v.grid.affine, path)
