"""Photometric and regularization losses, each returning ``(value, gradient)``.

Image losses take H x W x 3 arrays and reduce by the mean over pixels and
channels. SSIM uses an 11 x 11 Gaussian window (sigma 1.5) applied per
channel with zero padding, the convention of the reference 3DGS code.
"""

from __future__ import annotations

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.ndimage import correlate1d

from gspose.errors import DimensionMismatch, EmptyMask

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


class LossConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    beta: float = Field(0.2, ge=0, le=1)
    aniso_ratio_r: float = Field(10.0, ge=1)
    aniso_weight: float = Field(1.0, ge=0)
    opacity_l1_weight: float = Field(0.01, ge=0)
    mask_threshold: float = Field(0.99, gt=0, lt=1)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1D Gaussian taps; the 2D window is their outer product."""
    x = np.arange(size) - size // 2
    w = np.exp(-(x**2) / (2 * sigma**2))
    return w / w.sum()


def _blur(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    # zero-padded "same" filtering; with symmetric taps this operator is self-adjoint
    out = correlate1d(img, taps, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, taps, axis=1, mode="constant", cval=0.0)


def _check_pair(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def ssim_map(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-pixel, per-channel SSIM of two H x W x C images."""
    x, y = _check_pair(x, y)
    return _ssim_terms(x, y, gaussian_window())[0]


def _ssim_terms(x, y, taps):
    mx, my = _blur(x, taps), _blur(y, taps)
    sxx = _blur(x * x, taps) - mx * mx
    syy = _blur(y * y, taps) - my * my
    sxy = _blur(x * y, taps) - mx * my
    a1 = 2 * mx * my + SSIM_C1
    a2 = 2 * sxy + SSIM_C2
    b1 = mx * mx + my * my + SSIM_C1
    b2 = sxx + syy + SSIM_C2
    return a1 * a2 / (b1 * b2), (mx, my, a1, a2, b1, b2)


def _weighted_ssim(x, y, weights):
    """``sum(weights * ssim_map)`` and its gradient with respect to ``x``."""
    taps = gaussian_window()
    s, (mx, my, a1, a2, b1, b2) = _ssim_terms(x, y, taps)
    if np.array_equal(x, y):
        # global maximum: the exact gradient is zero, the formula below only
        # leaves rounding residue that adaptive optimizers would amplify
        return float(np.sum(weights * s)), np.zeros_like(x)
    ds_a1 = weights * a2 / (b1 * b2)
    ds_a2 = weights * a1 / (b1 * b2)
    ds_b1 = -weights * s / b1
    ds_b2 = -weights * s / b2
    # s depends on x through mx, E[x^2] and E[xy]
    d_mx = 2 * my * ds_a1 - 2 * my * ds_a2 + 2 * mx * ds_b1 - 2 * mx * ds_b2
    d_exx = ds_b2
    d_exy = 2 * ds_a2
    grad = _blur(d_mx, taps) + 2 * x * _blur(d_exx, taps) + y * _blur(d_exy, taps)
    return float(np.sum(weights * s)), grad


def ssim(x, y) -> float:
    return float(np.mean(ssim_map(x, y)))


def ssim_with_grad(x, y) -> tuple[float, np.ndarray]:
    x, y = _check_pair(x, y)
    return _weighted_ssim(x, y, np.full(x.shape, 1.0 / x.size))


def l1(rendered, target) -> tuple[float, np.ndarray]:
    r, t = _check_pair(rendered, target)
    diff = r - t
    return float(np.sum(np.abs(diff)) / diff.size), np.sign(diff) / diff.size


def rgb_loss(rendered, target, beta: float = 0.2) -> tuple[float, np.ndarray]:
    """(1 - beta) * L1 + beta * (1 - SSIM), with the gradient w.r.t. ``rendered``."""
    r, t = _check_pair(rendered, target)
    l1_val, l1_grad = l1(r, t)
    if beta == 0:
        return l1_val, (1 - beta) * l1_grad
    s, s_grad = ssim_with_grad(r, t)
    return (1 - beta) * l1_val + beta * (1 - s), (1 - beta) * l1_grad - beta * s_grad


def anisotropy_loss(log_scales, r: float = 10.0) -> tuple[float, np.ndarray]:
    """Mean hinge on the max/min axis ratio of the activated scales."""
    log_scales = np.asarray(log_scales, dtype=float)
    n = log_scales.shape[0]
    grad = np.zeros_like(log_scales)
    if n == 0:
        return 0.0, grad
    scales = np.exp(log_scales)
    hi = np.argmax(scales, axis=1)
    lo = np.argmin(scales, axis=1)
    rows = np.arange(n)
    ratio = scales[rows, hi] / scales[rows, lo]
    excess = ratio - r
    active = excess > 0
    # d ratio / d log s_max = ratio, d ratio / d log s_min = -ratio
    grad[rows[active], hi[active]] += ratio[active] / n
    grad[rows[active], lo[active]] -= ratio[active] / n
    return float(np.sum(excess[active]) / n), grad


def opacity_l1(opacities) -> tuple[float, np.ndarray]:
    """Mean opacity; chain through the sigmoid with ``o * (1 - o)`` for logits."""
    opacities = np.asarray(opacities, dtype=float)
    n = opacities.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(opacities)
    return float(np.sum(np.abs(opacities)) / n), np.sign(opacities) / n


def transmittance_mask(accum, threshold: float = 0.99) -> np.ndarray:
    return np.asarray(accum) > threshold


def masked_l1(rendered, target, mask) -> tuple[float, np.ndarray]:
    """L1 over masked pixels, normalized by the masked pixel count times channels.

    Raises EmptyMask when nothing passes.
    """
    r, t = _check_pair(rendered, target)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != r.shape[:2]:
        raise DimensionMismatch(f"mask shape {mask.shape} != image shape {r.shape[:2]}")
    count = int(np.count_nonzero(mask))
    if count == 0:
        raise EmptyMask("no pixel passes the transmittance mask")
    weight = mask[..., None].astype(float)
    diff = r - t
    denom = count * r.shape[2]
    return float(np.sum(np.abs(diff) * weight) / denom), np.sign(diff) * weight / denom


def masked_dssim(rendered, target, mask) -> tuple[float, np.ndarray]:
    """1 - mean SSIM over masked pixels (windows still read unmasked neighbours)."""
    r, t = _check_pair(rendered, target)
    mask = np.asarray(mask, dtype=bool)
    count = int(np.count_nonzero(mask))
    if count == 0:
        raise EmptyMask("no pixel passes the transmittance mask")
    weights = np.broadcast_to(mask[..., None], r.shape) / (count * r.shape[2])
    s, grad = _weighted_ssim(r, t, weights)
    return 1.0 - s, -grad


def masked_rgb_loss(rendered, target, mask, beta: float = 0.2) -> tuple[float, np.ndarray]:
    l1_val, l1_grad = masked_l1(rendered, target, mask)
    if beta == 0:
        return l1_val, l1_grad
    d_val, d_grad = masked_dssim(rendered, target, mask)
    return (1 - beta) * l1_val + beta * d_val, (1 - beta) * l1_grad + beta * d_grad
