"""2D slice renderers writing binary PPM (P6) images.

Images are indexed ``[row, col]`` with columns along the first in-plane axis
and rows along the second, top row at its maximum.
"""

from __future__ import annotations

import numpy as np
from matplotlib.colors import LinearSegmentedColormap, hsv_to_rgb

JET5 = LinearSegmentedColormap.from_list(
    "jet5", [(0.0, 0.0, 1.0), (0.0, 1.0, 1.0), (0.5, 1.0, 0.5), (1.0, 1.0, 0.0), (1.0, 0.0, 0.0)])


def in_plane(data, axis=2, index=None):
    """In-plane vector components of a gridded field, shape (n0, n1, 2).

    2D grids pass through; 3D grids are cut normal to ``axis``.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim == 3:
        return data[..., :2]
    if data.ndim != 4:
        raise ValueError("expected a gridded vector field")
    if axis not in (0, 1, 2):
        raise ValueError("slice axis must be 0, 1 or 2")
    n = data.shape[axis]
    index = n // 2 if index is None else index
    if not 0 <= index < n:
        raise ValueError(f"slice index {index} outside [0, {n})")
    cut = np.take(data, index, axis=axis)
    keep = [i for i in range(3) if i != axis]
    return cut[..., keep]


def scalar_slice(data, axis=2, index=None):
    data = np.asarray(data, dtype=float)
    if data.ndim == 2:
        return data
    if data.ndim != 3:
        raise ValueError("expected a 2D or 3D scalar grid")
    n = data.shape[axis]
    index = n // 2 if index is None else index
    if not 0 <= index < n:
        raise ValueError(f"slice index {index} outside [0, {n})")
    return np.take(data, index, axis=axis)


def _to_image(a):
    # [i, j] grid -> [row, col] image with the j axis pointing up
    return np.swapaxes(a, 0, 1)[::-1]


def hsv_image(u2d) -> np.ndarray:
    """Direction to hue, relative magnitude (to the 99th percentile) to saturation."""
    u2d = np.asarray(u2d, dtype=float)
    mag = np.linalg.norm(u2d, axis=-1)
    p99 = np.percentile(mag, 99) if mag.size else 0.0
    sat = np.clip(mag / p99, 0.0, 1.0) if p99 > 0 else np.zeros_like(mag)
    hue = np.mod(np.degrees(np.arctan2(u2d[..., 1], u2d[..., 0])), 360.0) / 360.0
    hsv = np.stack([hue, sat, np.ones_like(sat)], axis=-1)
    return _to_rgb8(_to_image(hsv_to_rgb(hsv)))


def vorticity_image(w2d) -> np.ndarray:
    """Scalar vorticity through the 5-anchor jet map, symmetric about zero."""
    w2d = np.asarray(w2d, dtype=float)
    vmax = np.abs(w2d).max() if w2d.size else 0.0
    t = 0.5 + 0.5 * w2d / vmax if vmax > 0 else np.full_like(w2d, 0.5)
    return _to_rgb8(_to_image(JET5(t)[..., :3]))


def _to_rgb8(rgb):
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)


def encode_ppm(rgb: np.ndarray) -> bytes:
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("expected an (rows, cols, 3) image")
    rows, cols = rgb.shape[:2]
    return f"P6\n{cols} {rows}\n255\n".encode("ascii") + rgb.tobytes()


def decode_ppm(buf: bytes) -> np.ndarray:
    parts = buf.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError("not a binary PPM")
    cols, rows, _ = int(parts[1]), int(parts[2]), int(parts[3])
    return np.frombuffer(parts[4][: rows * cols * 3], dtype=np.uint8).reshape(rows, cols, 3)


def render_hsv(data, path=None, axis=2, index=None) -> bytes:
    out = encode_ppm(hsv_image(in_plane(data, axis, index)))
    if path is not None:
        with open(path, "wb") as fh:
            fh.write(out)
    return out


def render_vorticity(vort, path=None, axis=2, index=None) -> bytes:
    """``vort`` is a 2D scalar grid, or a 3D grid of scalars or 3-vectors
    (the component normal to the slice is shown)."""
    vort = np.asarray(vort, dtype=float)
    if vort.ndim == 4:
        vort = vort[..., axis]
    out = encode_ppm(vorticity_image(scalar_slice(vort, axis, index)))
    if path is not None:
        with open(path, "wb") as fh:
            fh.write(out)
    return out
