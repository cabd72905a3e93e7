"""Image quality metrics: PSNR and SSIM (with analytic gradient).

SSIM uses an 11x11 Gaussian window (sigma 1.5) and the standard constants
for unit dynamic range; windows are zero-padded at the border, which keeps
the filtering operator self-adjoint so the gradient uses the same filter.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

PSNR_MAX = 100.0  # sentinel for (near-)identical images
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2

_offsets = np.arange(-5, 6, dtype=np.float64)
_KERNEL = np.exp(-(_offsets**2) / (2 * 1.5**2))
_KERNEL /= _KERNEL.sum()


def _check_pair(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) for [0,1] images; PSNR_MAX when MSE is ~0."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_MAX
    return min(10.0 * np.log10(1.0 / mse), PSNR_MAX)


def _filt(img: np.ndarray) -> np.ndarray:
    out = correlate1d(img, _KERNEL, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, _KERNEL, axis=1, mode="constant", cval=0.0)


def _ssim_channel(a: np.ndarray, b: np.ndarray, want_grad: bool):
    mu_a = _filt(a)
    mu_b = _filt(b)
    saa = _filt(a * a) - mu_a**2
    sbb = _filt(b * b) - mu_b**2
    sab = _filt(a * b) - mu_a * mu_b
    a1 = 2 * mu_a * mu_b + _SSIM_C1
    b1 = mu_a**2 + mu_b**2 + _SSIM_C1
    a2 = 2 * sab + _SSIM_C2
    b2 = saa + sbb + _SSIM_C2
    smap = (a1 * a2) / (b1 * b2)
    if not want_grad:
        return smap, None
    # partials of the SSIM map w.r.t. the filtered statistics of `a`
    ds_dmua = (a2 / b2) * (2 * mu_b * b1 - 2 * mu_a * a1) / b1**2
    ds_dsaa = -(a1 / b1) * a2 / b2**2
    ds_dsab = (a1 / b1) * 2.0 / b2
    grad = (_filt(ds_dmua)
            + 2.0 * a * _filt(ds_dsaa) - 2.0 * _filt(ds_dsaa * mu_a)
            + b * _filt(ds_dsab) - _filt(ds_dsab * mu_b))
    return smap, grad


def ssim(a: np.ndarray, b: np.ndarray, *, grad: bool = False):
    """Mean SSIM over pixels (and channels). With grad=True also returns
    d(mean SSIM)/d(a) with the same shape as `a`."""
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    total = 0.0
    grads = np.zeros_like(a) if grad else None
    for c in range(a.shape[2]):
        smap, gmap = _ssim_channel(a[..., c], b[..., c], grad)
        total += float(smap.mean())
        if grad:
            grads[..., c] = gmap / smap.size
    value = total / a.shape[2]
    if grad:
        return value, grads / a.shape[2]
    return value
