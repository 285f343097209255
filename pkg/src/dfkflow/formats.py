"""VFLD/SFLD grid files and DFKM model files.

All values are little-endian.  Grid payloads are stored x fastest with the
channels interleaved, i.e. a C-order array of shape ``(nz, ny, nx, C)``.
"""

from __future__ import annotations

import struct

import numpy as np

from .grids import GridField
from .kernel_field import KernelField
from .matrix_kernels import Kind, KernelKind
from .rbf_core import ScalarRBF

FIELD_VERSION = 1
MODEL_VERSION = 1
_FIELD_HEAD = struct.Struct("<4sBBBB")
_MODEL_HEAD = struct.Struct("<4sBBBIQ")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}

KIND_CODES = {
    0: KernelKind(Kind.DIVFREE, ScalarRBF.WEN4),
    1: KernelKind(Kind.DIVFREE, ScalarRBF.POLY6),
    2: KernelKind(Kind.DIVFREE, ScalarRBF.GAUSS),
    3: KernelKind(Kind.CURL, ScalarRBF.WEN4),
    4: KernelKind(Kind.REGULAR, ScalarRBF.WEN2),
    5: KernelKind(Kind.CURLFREE, ScalarRBF.WEN4),
    6: KernelKind(Kind.NEGLAP, ScalarRBF.WEN4),
}
_CODE_OF = {(k.kind, k.base): c for c, k in KIND_CODES.items()}


class FormatError(ValueError):
    code = 1


class BadMagic(FormatError):
    code = 2


class VersionMismatch(FormatError):
    code = 3


class Truncated(FormatError):
    code = 4

    def __init__(self, expected, actual):
        super().__init__(f"truncated file: expected {expected} bytes, got {actual}")
        self.expected = expected
        self.actual = actual


class InvalidHeader(FormatError):
    code = 5


def kind_code(kind: KernelKind) -> int:
    try:
        return _CODE_OF[(kind.kind, kind.base)]
    except KeyError:
        raise FormatError(f"kernel kind {kind} has no model file code") from None


# ---- grid fields ------------------------------------------------------------------


def encode_field(grid: GridField, magic=b"VFLD", dtype=1) -> bytes:
    if dtype not in _DTYPES:
        raise ValueError("dtype code must be 0 (f32) or 1 (f64)")
    d = grid.dim
    head = _FIELD_HEAD.pack(magic, FIELD_VERSION, d, grid.channels, dtype)
    dims = struct.pack(f"<{d}I", *grid.shape)
    bbox = struct.pack(f"<{2 * d}d", *grid.lo, *grid.hi)
    order = tuple(range(d - 1, -1, -1)) + (d,)
    payload = np.ascontiguousarray(np.transpose(grid.data, order), dtype=_DTYPES[dtype]).tobytes()
    return head + dims + bbox + payload


def decode_field(buf: bytes, magic=None) -> GridField:
    if len(buf) < _FIELD_HEAD.size:
        raise Truncated(_FIELD_HEAD.size, len(buf))
    tag, version, d, channels, dtype = _FIELD_HEAD.unpack_from(buf)
    allowed = (b"VFLD", b"SFLD") if magic is None else (magic,)
    if tag not in allowed:
        raise BadMagic(f"bad magic {tag!r}")
    if version != FIELD_VERSION:
        raise VersionMismatch(f"unsupported field version {version}")
    if d not in (2, 3) or channels < 1 or dtype not in _DTYPES:
        raise InvalidHeader("invalid field header")
    off = _FIELD_HEAD.size
    need = off + 4 * d + 16 * d
    if len(buf) < need:
        raise Truncated(need, len(buf))
    dims = struct.unpack_from(f"<{d}I", buf, off)
    bbox = struct.unpack_from(f"<{2 * d}d", buf, off + 4 * d)
    off = need
    count = int(np.prod(dims)) * channels
    total = off + count * _DTYPES[dtype].itemsize
    if len(buf) < total:
        raise Truncated(total, len(buf))
    if len(buf) > total:
        raise InvalidHeader(f"{len(buf) - total} trailing bytes after payload")
    if any(n < 1 for n in dims):
        raise InvalidHeader("grid dimensions must be positive")
    raw = np.frombuffer(buf, dtype=_DTYPES[dtype], count=count, offset=off)
    arr = raw.reshape(tuple(reversed(dims)) + (channels,))
    data = np.transpose(arr, tuple(range(d - 1, -1, -1)) + (d,)).astype(float)
    lo, hi = bbox[:d], bbox[d:]
    if any(b <= a for a, b in zip(lo, hi)):
        raise InvalidHeader("bounding box min must be below max")
    return GridField(data, lo, hi)


def write_field(path, grid: GridField, scalar=False, dtype=1):
    with open(path, "wb") as fh:
        fh.write(encode_field(grid, b"SFLD" if scalar else b"VFLD", dtype))


def read_field(path, magic=None) -> GridField:
    with open(path, "rb") as fh:
        return decode_field(fh.read(), magic)


# ---- models --------------------------------------------------------------------


def encode_model(field: KernelField) -> bytes:
    code = kind_code(field.kind)
    head = _MODEL_HEAD.pack(b"DFKM", MODEL_VERSION, code, field.dim, field.n_frames, field.n_kernels)
    return b"".join([
        head,
        np.ascontiguousarray(field.centers, dtype="<f8").tobytes(),
        np.ascontiguousarray(field.radii, dtype="<f8").tobytes(),
        struct.pack("<d", field.frame_dt),
        np.ascontiguousarray(field.weights, dtype="<f8").tobytes(),
    ])


def decode_model(buf: bytes) -> KernelField:
    if len(buf) < _MODEL_HEAD.size:
        raise Truncated(_MODEL_HEAD.size, len(buf))
    tag, version, code, d, frames, n = _MODEL_HEAD.unpack_from(buf)
    if tag != b"DFKM":
        raise BadMagic(f"bad magic {tag!r}")
    if version != MODEL_VERSION:
        raise VersionMismatch(f"unsupported model version {version}")
    if code not in KIND_CODES or d not in (2, 3) or frames < 1:
        raise InvalidHeader("invalid model header")
    kind = KIND_CODES[code]
    w = kind.weight_width(d)
    total = _MODEL_HEAD.size + 8 * (n * d + n + 1 + frames * n * w)
    if len(buf) < total:
        raise Truncated(total, len(buf))
    if len(buf) > total:
        raise InvalidHeader(f"{len(buf) - total} trailing bytes after payload")
    vals = np.frombuffer(buf, dtype="<f8", offset=_MODEL_HEAD.size).astype(float)
    centers = vals[: n * d].reshape(n, d)
    radii = vals[n * d: n * d + n]
    frame_dt = float(vals[n * d + n])
    weights = vals[n * d + n + 1:].reshape(frames, n, w)
    if np.any(radii <= 0):
        raise InvalidHeader("kernel radii must be positive")
    return KernelField(kind, centers, radii, weights, frame_dt)


def write_model(path, field: KernelField):
    with open(path, "wb") as fh:
        fh.write(encode_model(field))


def read_model(path) -> KernelField:
    with open(path, "rb") as fh:
        return decode_model(fh.read())
