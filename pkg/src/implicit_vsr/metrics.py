"""Image and video quality metrics: PSNR on luma, SSIM and flow-based tOF.

Images are channel-first: RGB inputs are (..., 3, H, W) with values in
[0, 1]. Computations run in float64 numpy.
"""

import numpy as np
import torch
from scipy.ndimage import correlate1d

from .errors import ValidationError

PSNR_CAP = 100.0
LUMA = np.array([0.299, 0.587, 0.114])


def _np(x):
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def rgb_to_luma(x):
    """Full-range BT.601 luma of a (..., 3, H, W) array."""
    x = _np(x)
    if x.ndim < 3 or x.shape[-3] != 3:
        raise ValidationError(f"expected (..., 3, H, W) RGB input, got shape {x.shape}")
    return np.tensordot(LUMA, np.moveaxis(x, -3, 0), axes=1)


def psnr_y(a, b):
    """PSNR in dB of the luma channels; identical inputs give ``PSNR_CAP``."""
    a, b = _np(a), _np(b)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((rgb_to_luma(a) - rgb_to_luma(b)) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def clip_psnr_y(a, b):
    """Mean per-frame luma PSNR of two (T, 3, H, W) clips."""
    return float(np.mean([psnr_y(x, y) for x, y in zip(a, b)]))


def _gaussian_1d(size=11, sigma=1.5):
    t = np.arange(size) - size // 2
    g = np.exp(-t ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def _window_mean(x, g):
    r = g.size // 2
    y = correlate1d(correlate1d(x, g, axis=-1, mode="reflect"), g, axis=-2, mode="reflect")
    return y[..., r:-r, r:-r]


def ssim(a, b, data_range=1.0, window=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean SSIM over all valid 11x11 Gaussian windows of two single-channel images.

    Leading axes are treated as a batch and averaged.
    """
    a, b = _np(a), _np(b)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim < 2 or min(a.shape[-2:]) < window:
        raise ValidationError(f"images of shape {a.shape} are smaller than the {window}x{window} window")
    g = _gaussian_1d(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a, mu_b = _window_mean(a, g), _window_mean(b, g)
    var_a = _window_mean(a * a, g) - mu_a ** 2
    var_b = _window_mean(b * b, g) - mu_b ** 2
    cov = _window_mean(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim_y(a, b):
    """SSIM on the luma of RGB inputs, averaged per frame for clips."""
    return ssim(rgb_to_luma(a), rgb_to_luma(b))


def tof(sr_clip, gt_clip, flow_estimator):
    """Temporal-consistency error: mean |flow(gt) - flow(sr)| over consecutive frame pairs.

    Lower is better; identical clips score 0.
    """
    sr = torch.as_tensor(sr_clip).double()
    gt = torch.as_tensor(gt_clip).double()
    if sr.shape != gt.shape:
        raise ValidationError(f"shape mismatch: {tuple(sr.shape)} vs {tuple(gt.shape)}")
    if sr.shape[0] < 2:
        raise ValidationError("tOF needs at least two frames")
    diffs = []
    for t in range(1, sr.shape[0]):
        f_gt = flow_estimator(gt[t - 1:t], gt[t:t + 1])
        f_sr = flow_estimator(sr[t - 1:t], sr[t:t + 1])
        diffs.append((f_gt - f_sr).abs().mean().item())
    return float(np.mean(diffs))
