"""Fusion quality metrics: PSNR, SSIM, ERGAS, SAM.

All metrics follow the normalized-intensity convention (reference peak
1.0).  PSNR is capped at 99 dB per band so identical inputs produce a
finite report.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .cube import as_cube

__all__ = ["MetricReport", "psnr", "ssim", "ergas", "sam", "evaluate"]

PSNR_CAP = 99.0

# pinned SSIM constants: 11-tap Gaussian window, sigma 1.5, K1/K2 defaults
_SSIM_WIN = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    ergas: float
    sam: float

    def as_dict(self) -> dict:
        return {"psnr": self.psnr, "ssim": self.ssim, "ergas": self.ergas, "sam": self.sam}


def _check_pair(x, ref):
    x = as_cube(x)
    ref = as_cube(ref)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {ref.shape}")
    return x, ref


def psnr(x, ref, peak: float = 1.0) -> float:
    """Mean over bands of 10 log10(peak^2 / MSE_band), capped at 99 dB."""
    x, ref = _check_pair(x, ref)
    mse = np.mean((x - ref) ** 2, axis=(0, 1))
    with np.errstate(divide="ignore"):
        vals = 10.0 * np.log10(peak**2 / mse)
    return float(np.mean(np.minimum(vals, PSNR_CAP)))


def _ssim_window() -> np.ndarray:
    r = np.arange(_SSIM_WIN) - _SSIM_WIN // 2
    g = np.exp(-0.5 * (r / _SSIM_SIGMA) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def ssim(x, ref, peak: float = 1.0) -> float:
    """Mean over bands of the standard single-scale SSIM (Gaussian window
    11, sigma 1.5, K1 = 0.01, K2 = 0.03, valid-region average)."""
    x, ref = _check_pair(x, ref)
    if min(x.shape[0], x.shape[1]) < _SSIM_WIN:
        raise ValueError(f"SSIM needs spatial dims of at least {_SSIM_WIN}")
    win = _ssim_window()
    c1 = (_SSIM_K1 * peak) ** 2
    c2 = (_SSIM_K2 * peak) ** 2

    def filt(img):
        return fftconvolve(img, win, mode="valid")

    scores = []
    for i in range(x.shape[2]):
        a = x[:, :, i]
        b = ref[:, :, i]
        mu_a = filt(a)
        mu_b = filt(b)
        var_a = filt(a * a) - mu_a**2
        var_b = filt(b * b) - mu_b**2
        cov = filt(a * b) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


def ergas(x, ref, d: int) -> float:
    """Band-relative RMSE aggregate: (100/d) sqrt(mean_b (RMSE_b / mean_b)^2).

    Uses the reference band means; raises on an (effectively) zero-mean
    reference band.
    """
    x, ref = _check_pair(x, ref)
    means = np.mean(ref, axis=(0, 1))
    if np.any(np.abs(means) < 1e-12):
        raise ValueError("reference band with zero mean; ERGAS undefined")
    rmse = np.sqrt(np.mean((x - ref) ** 2, axis=(0, 1)))
    return float(100.0 / d * np.sqrt(np.mean((rmse / means) ** 2)))


def sam(x, ref) -> float:
    """Mean spectral angle in degrees over pixels; zero fibers are skipped."""
    x, ref = _check_pair(x, ref)
    xm = x.reshape(-1, x.shape[2])
    rm = ref.reshape(-1, ref.shape[2])
    nx = np.linalg.norm(xm, axis=1)
    nr = np.linalg.norm(rm, axis=1)
    keep = (nx > 0) & (nr > 0)
    if not np.any(keep):
        return 0.0
    cosang = np.sum(xm[keep] * rm[keep], axis=1) / (nx[keep] * nr[keep])
    ang = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return float(np.mean(ang))


def evaluate(x, ref, d: int) -> MetricReport:
    """All four metrics against a reference cube at decimation ratio d."""
    return MetricReport(psnr=psnr(x, ref), ssim=ssim(x, ref), ergas=ergas(x, ref, d),
                        sam=sam(x, ref))
