"""Image quality metrics: PSNR, single-scale SSIM and normalized MSE.

Complex inputs are reduced to magnitude images first; real inputs are used
as-is.  The data range defaults to the reference image's range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    nmse: float


def _as_real(img):
    img = np.asarray(img)
    if np.iscomplexobj(img):
        return np.abs(img)
    return img.astype(np.float64)


def psnr(reference, test, data_max=None):
    """10 log10(data_max^2 / MSE) in dB; +inf for identical inputs."""
    ref = _as_real(reference)
    tst = _as_real(test)
    if ref.shape != tst.shape:
        raise ValueError("psnr inputs must share a shape")
    if data_max is None:
        data_max = float(ref.max())
    if data_max <= 0:
        raise ValueError("data_max must be positive")
    mse = float(np.mean((ref - tst) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(data_max**2 / mse))


def _gaussian_window(size=11, sigma=1.5):
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _window_stack(img, size):
    """All valid size x size windows as a (ny, nx, size, size) view."""
    h, w = img.shape
    shape = (h - size + 1, w - size + 1, size, size)
    strides = img.strides + img.strides
    return np.lib.stride_tricks.as_strided(img, shape=shape, strides=strides)


def ssim(reference, test, k1=0.01, k2=0.03, window_size=11, sigma=1.5, data_range=None):
    """Mean single-scale SSIM over all valid Gaussian-weighted windows."""
    ref = np.ascontiguousarray(_as_real(reference))
    tst = np.ascontiguousarray(_as_real(test))
    if ref.shape != tst.shape:
        raise ValueError("ssim inputs must share a shape")
    if min(ref.shape) < window_size:
        raise ValueError(f"images must be at least {window_size} pixels per side")
    if data_range is None:
        data_range = float(ref.max() - ref.min())
    if data_range <= 0:
        raise ValueError("data_range must be positive")
    w = _gaussian_window(window_size, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    wr = _window_stack(ref, window_size)
    wt = _window_stack(tst, window_size)
    mu_r = np.einsum("ijkl,kl->ij", wr, w)
    mu_t = np.einsum("ijkl,kl->ij", wt, w)
    rr = np.einsum("ijkl,kl->ij", wr * wr, w)
    tt = np.einsum("ijkl,kl->ij", wt * wt, w)
    rt = np.einsum("ijkl,kl->ij", wr * wt, w)
    var_r = rr - mu_r**2
    var_t = tt - mu_t**2
    cov = rt - mu_r * mu_t
    num = (2 * mu_r * mu_t + c1) * (2 * cov + c2)
    den = (mu_r**2 + mu_t**2 + c1) * (var_r + var_t + c2)
    return float(np.mean(num / den))


def nmse(reference, test):
    """||test - reference||^2 / ||reference||^2 on the raw (complex) values."""
    ref = np.asarray(reference)
    tst = np.asarray(test)
    if ref.shape != tst.shape:
        raise ValueError("nmse inputs must share a shape")
    denom = float(np.vdot(ref, ref).real)
    if denom == 0.0:
        raise ValueError("nmse is undefined for a zero reference")
    return float(np.vdot(tst - ref, tst - ref).real) / denom


def report(reference, test, data_max=None):
    return MetricReport(
        psnr_db=psnr(reference, test, data_max=data_max),
        ssim=ssim(reference, test),
        nmse=nmse(reference, test),
    )
