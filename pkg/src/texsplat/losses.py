"""Photometric loss (L1 + SSIM) with hand-derived image gradients, and PSNR.

SSIM uses the standard 11x11 Gaussian window (sigma 1.5) with
C1 = 0.01^2, C2 = 0.03^2 on unit dynamic range and reflect padding at the
borders.  The gradient of the mean SSIM map is derived analytically; the
filtering adjoint is the same Gaussian correlation composed with the
adjoint of the reflect padding (margins folded back into the interior).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate1d

from .validation import ShapeMismatch, check_same_shape

_WIN = 11
_PAD = _WIN // 2
_SIGMA = 1.5
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2


def _window() -> np.ndarray:
    x = np.arange(_WIN) - _PAD
    w = np.exp(-(x * x) / (2.0 * _SIGMA * _SIGMA))
    return w / w.sum()


_W1D = _window()


def _filt(x: np.ndarray) -> np.ndarray:
    """Gaussian-window filter over the last two axes with reflect padding."""
    pad = [(0, 0)] * (x.ndim - 2) + [(_PAD, _PAD), (_PAD, _PAD)]
    p = np.pad(x, pad, mode="reflect")
    t = correlate1d(p, _W1D, axis=-2, mode="constant")
    t = correlate1d(t, _W1D, axis=-1, mode="constant")
    return t[..., _PAD:-_PAD, _PAD:-_PAD]


def _fold_axis(g: np.ndarray, axis: int) -> np.ndarray:
    """Adjoint of np.pad(..., mode='reflect') along one axis."""
    g = np.moveaxis(g, axis, 0)
    core = g[_PAD:-_PAD].copy()
    left = g[:_PAD]
    right = g[-_PAD:]
    core[1:_PAD + 1] += left[::-1]
    core[-_PAD - 1:-1] += right[::-1]
    return np.moveaxis(core, 0, axis)


def _filt_adjoint(g: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`_filt` (symmetric window, zero-extended correlate)."""
    shape = g.shape[:-2] + (g.shape[-2] + 2 * _PAD, g.shape[-1] + 2 * _PAD)
    gp = np.zeros(shape)
    gp[..., _PAD:-_PAD, _PAD:-_PAD] = g
    t = correlate1d(gp, _W1D, axis=-1, mode="constant")
    t = correlate1d(t, _W1D, axis=-2, mode="constant")
    return _fold_axis(_fold_axis(t, -2), -1)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over pixels and channels of two (H, W, 3) images."""
    val, _ = _ssim_impl(np.asarray(a, np.float64), np.asarray(b, np.float64),
                        want_grad=False)
    return val


def ssim_and_gradient(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean SSIM and its gradient with respect to the first image."""
    return _ssim_impl(np.asarray(a, np.float64), np.asarray(b, np.float64),
                      want_grad=True)


def _ssim_impl(x: np.ndarray, y: np.ndarray, want_grad: bool):
    check_same_shape(x, y)
    n_all = x.size
    xc = np.moveaxis(x, -1, 0)  # (C, H, W): filter all channels in one pass
    yc = np.moveaxis(y, -1, 0)
    mu_x = _filt(xc)
    mu_y = _filt(yc)
    sxx = _filt(xc * xc) - mu_x * mu_x
    syy = _filt(yc * yc) - mu_y * mu_y
    sxy = _filt(xc * yc) - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + _C1
    a2 = 2.0 * sxy + _C2
    b1 = mu_x * mu_x + mu_y * mu_y + _C1
    b2 = sxx + syy + _C2
    b1b2 = b1 * b2
    s = (a1 * a2) / b1b2
    mean = float(s.sum()) / n_all
    if not want_grad:
        return mean, None
    # partials of the SSIM map at each window position
    d_mu_x = 2.0 * mu_y * a2 / b1b2 - 2.0 * mu_x * a1 * a2 / (b1 * b1b2)
    d_sxx = -a1 * a2 / (b1b2 * b2)
    d_sxy = 2.0 * a1 / b1b2
    g = (_filt_adjoint(d_mu_x)
         + 2.0 * xc * _filt_adjoint(d_sxx) - 2.0 * _filt_adjoint(d_sxx * mu_x)
         + yc * _filt_adjoint(d_sxy) - _filt_adjoint(d_sxy * mu_y))
    grad = np.moveaxis(g, 0, -1) / n_all
    return mean, grad


def photometric_loss(rendered: np.ndarray, target: np.ndarray,
                     lambda_ssim: float) -> tuple[float, np.ndarray]:
    """(1 - l) * L1 + l * (1 - SSIM), with its gradient w.r.t. rendered.

    lambda_ssim = 0 skips the SSIM computation entirely and reduces the
    loss exactly to the mean absolute error.
    """
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    check_same_shape(rendered, target)
    if not 0.0 <= lambda_ssim <= 1.0:
        raise ValueError("lambda_ssim must be in [0, 1]")
    diff = rendered - target
    n = diff.size
    l1 = float(np.abs(diff).sum()) / n
    grad = np.sign(diff) / n * (1.0 - lambda_ssim)
    loss = (1.0 - lambda_ssim) * l1
    if lambda_ssim > 0.0:
        s, ds = ssim_and_gradient(rendered, target)
        loss += lambda_ssim * (1.0 - s)
        grad -= lambda_ssim * ds
    return loss, grad


def psnr(rendered: np.ndarray, target: np.ndarray) -> float:
    """10 * log10(1 / MSE) on unit dynamic range; +inf for identical images."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    check_same_shape(rendered, target)
    mse = float(np.mean((rendered - target) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)
