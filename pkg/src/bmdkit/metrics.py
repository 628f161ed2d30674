"""Reconstruction and background-estimation quality metrics.

Images are gray-level matrices on the [0, 255] scale.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import binary_erosion, convolve1d

from .errors import DimensionError, ParameterError
from .tensor_core import as_tensor3, relative_error

__all__ = [
    "compression_ratio",
    "age",
    "peps",
    "pceps",
    "psnr",
    "ssim_components",
    "ms_ssim",
    "BackgroundReport",
    "evaluate_background",
    "modulus_foreground",
    "relative_error",
    "PSNR_CAP",
    "MS_SSIM_WEIGHTS",
]

PSNR_CAP = 99.0
MS_SSIM_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])
_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def compression_ratio(m: int, p: int, n: int, rank: int) -> float:
    """Stored factor entries over raw entries: ``rank (mn + mp + pn) / (mpn)``."""
    if min(m, p, n) < 1 or rank < 0:
        raise ParameterError("dimensions must be positive and rank nonnegative")
    return rank * (m * n + m * p + p * n) / (m * p * n)


def _pair(gt, est):
    gt = np.asarray(gt, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if gt.shape != est.shape:
        raise DimensionError(f"image shapes differ: {gt.shape} vs {est.shape}")
    if gt.ndim != 2:
        raise DimensionError(f"expected gray-level images, got shape {gt.shape}")
    return gt, est


def age(gt, est) -> float:
    """Average gray-level error, the mean absolute difference."""
    gt, est = _pair(gt, est)
    return float(np.mean(np.abs(gt - est)))


def _error_mask(gt, est, tau):
    return np.abs(gt - est) > tau


def peps(gt, est, tau: float = 20.0) -> float:
    """Fraction of pixels whose absolute error exceeds ``tau``."""
    gt, est = _pair(gt, est)
    return float(np.mean(_error_mask(gt, est, tau)))


def pceps(gt, est, tau: float = 20.0) -> float:
    """Fraction of error pixels whose four neighbours are all error pixels.

    Neighbours outside the image count as error pixels, so a uniformly wrong
    image scores 1.
    """
    gt, est = _pair(gt, est)
    mask = _error_mask(gt, est, tau)
    clustered = binary_erosion(mask, structure=_CROSS, border_value=1)
    return float(np.mean(clustered))


def psnr(gt, est, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; identical images give :data:`PSNR_CAP`."""
    gt, est = _pair(gt, est)
    mse = float(np.mean((gt - est) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak**2 / mse))


def _gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img, win):
    # separable filtering, keeping only positions where the window fits
    out = convolve1d(img, win, axis=0, mode="constant")
    out = convolve1d(out, win, axis=1, mode="constant")
    h = win.size // 2
    return out[h : img.shape[0] - h, h : img.shape[1] - h]


def ssim_components(x, y, peak: float = 255.0, k1: float = 0.01, k2: float = 0.03, win=None):
    """Mean luminance-contrast-structure SSIM and mean contrast-structure term."""
    win = _gaussian_window() if win is None else win
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    mu_x = _filter_valid(x, win)
    mu_y = _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mu_x**2
    syy = _filter_valid(y * y, win) - mu_y**2
    sxy = _filter_valid(x * y, win) - mu_x * mu_y
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1)
    return float(np.mean(lum * cs)), float(np.mean(cs))


def _downsample(img):
    # 2x2 averaging; odd sizes are padded by reflecting the last row/column
    pad = ((0, img.shape[0] % 2), (0, img.shape[1] % 2))
    img = np.pad(img, pad, mode="symmetric")
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def ms_ssim(gt, est, peak: float = 255.0, weights=None) -> float:
    """Multi-scale SSIM with an 11 x 11 Gaussian window (sigma 1.5).

    Images too small for five scales use as many scales as fit (each scale
    needs at least 11 pixels per side), with the weights renormalized to sum
    to one.  Negative contrast-structure terms are clipped to zero before
    exponentiation.
    """
    gt, est = _pair(gt, est)
    weights = MS_SSIM_WEIGHTS if weights is None else np.asarray(weights, dtype=np.float64)
    win = _gaussian_window()
    levels = 0
    size = min(gt.shape)
    while levels < weights.size and size >= win.size:
        levels += 1
        size = (size + 1) // 2
    if levels == 0:
        raise DimensionError(f"images of shape {gt.shape} are smaller than the {win.size}x{win.size} window")
    w = weights[:levels] / weights[:levels].sum()
    x, y = gt, est
    vals = []
    for lvl in range(levels):
        s, cs = ssim_components(x, y, peak, win=win)
        vals.append(max(s, 0.0) if lvl == levels - 1 else max(cs, 0.0))
        if lvl < levels - 1:
            x, y = _downsample(x), _downsample(y)
    return float(np.prod(np.power(vals, w)))


@dataclass
class BackgroundReport:
    AGE: float
    pEPs: float
    pCEPs: float
    PSNR: float
    MS_SSIM: float
    per_frame: dict = field(default_factory=dict)

    def scalars(self) -> dict:
        d = asdict(self)
        d.pop("per_frame")
        return d


def _image_metrics(gt, est, tau):
    return {
        "AGE": age(gt, est),
        "pEPs": peps(gt, est, tau),
        "pCEPs": pceps(gt, est, tau),
        "PSNR": psnr(gt, est),
        "MS_SSIM": ms_ssim(gt, est),
    }


def evaluate_background(gt_image, bg_sequence, mode: str = "per_frame_mean", tau: float = 20.0) -> BackgroundReport:
    """Score a background video against a ground-truth background image.

    ``first_frame`` scores frame 0 only; ``per_frame_mean`` scores every
    frame and averages, keeping the per-frame values in ``per_frame``.
    """
    gt = np.asarray(gt_image, dtype=np.float64)
    seq = as_tensor3(bg_sequence, "bg_sequence")
    if gt.shape != (seq.shape[0], seq.shape[2]):
        raise DimensionError(f"ground truth {gt.shape} does not match frames of {seq.shape}")
    if mode == "first_frame":
        vals = _image_metrics(gt, seq[:, 0, :], tau)
        return BackgroundReport(**vals, per_frame={k: [v] for k, v in vals.items()})
    if mode != "per_frame_mean":
        raise ParameterError(f"unknown evaluation mode {mode!r}")
    per = {k: [] for k in ("AGE", "pEPs", "pCEPs", "PSNR", "MS_SSIM")}
    for j in range(seq.shape[1]):
        for k, v in _image_metrics(gt, seq[:, j, :], tau).items():
            per[k].append(v)
    return BackgroundReport(**{k: float(np.mean(v)) for k, v in per.items()}, per_frame=per)


def modulus_foreground(X, background) -> np.ndarray:
    """Foreground as the video minus the magnitude of a (possibly complex) background."""
    X = np.asarray(X, dtype=np.float64)
    bg = np.asarray(background)
    if X.shape != bg.shape:
        raise DimensionError(f"shape mismatch: {X.shape} vs {bg.shape}")
    return X - np.abs(bg)
