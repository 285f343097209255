"""Reconstruction quality metrics."""

from __future__ import annotations

import numpy as np
from skimage.metrics import structural_similarity

PSNR_CAP = 99.0
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty input")
    return a, b


def metric_psnr(a, reference) -> float:
    """10 log10(MAX^2 / MSE) with MAX the value range of ``reference``; capped at 99 dB."""
    a, ref = _pair(a, reference)
    mse = float(np.mean((a - ref) ** 2))
    peak = float(ref.max() - ref.min())
    if mse == 0.0:
        return PSNR_CAP
    if peak == 0.0:
        return -PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse)))


def _ssim_global(a, ref, L):
    c1, c2 = (SSIM_K1 * L) ** 2, (SSIM_K2 * L) ** 2
    ma, mb = a.mean(), ref.mean()
    va, vb = a.var(), ref.var()
    cov = ((a - ma) * (ref - mb)).mean()
    return float((2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))


def metric_ssim(a, reference) -> float:
    """SSIM of two 2D images: 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
    dynamic range taken from ``reference``.  Images smaller than the window use
    global statistics."""
    a, ref = _pair(a, reference)
    if a.ndim != 2:
        raise ValueError("SSIM expects 2D images")
    L = float(ref.max() - ref.min())
    if L == 0.0:
        L = 1.0
    if min(a.shape) < SSIM_WINDOW:
        return _ssim_global(a, ref, L)
    return float(structural_similarity(a, ref, data_range=L, gaussian_weights=True, sigma=SSIM_SIGMA,
                                       use_sample_covariance=False, K1=SSIM_K1, K2=SSIM_K2))


def relative_l1(u, reference) -> float:
    """sum |u - u_ref| / sum |u_ref| over vectors (last axis)."""
    u, ref = _pair(u, reference)
    num = np.linalg.norm(u - ref, axis=-1).sum()
    den = np.linalg.norm(ref, axis=-1).sum()
    return float(num / den) if den > 0 else float("inf") if num > 0 else 0.0


def magnitude_image(u):
    """Speed image of a gridded vector field (middle slice along the last axis for 3D)."""
    u = np.asarray(u, dtype=float)
    if u.ndim == 4:
        u = u[:, :, u.shape[2] // 2]
    return np.linalg.norm(u, axis=-1)


def metrics_report(u, reference, divergence=None) -> dict:
    """PSNR over all components, SSIM of the speed images and error norms."""
    u, ref = _pair(u, reference)
    err = np.linalg.norm(u - ref, axis=-1)
    out = {
        "psnr_db": metric_psnr(u, ref),
        "ssim": metric_ssim(magnitude_image(u), magnitude_image(ref)),
        "ssim_window": {"size": SSIM_WINDOW, "sigma": SSIM_SIGMA, "K1": SSIM_K1, "K2": SSIM_K2},
        "relative_l1": relative_l1(u, ref),
        "mean_error": float(err.mean()),
        "max_error": float(err.max()),
    }
    if divergence is not None:
        div = np.abs(np.asarray(divergence, dtype=float))
        out["divergence"] = {"mean_abs": float(div.mean()), "max_abs": float(div.max())}
    return out
