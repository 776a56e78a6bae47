"""Backward warping and optical-flow estimators.

Flow fields are (B, 2, H, W) tensors holding (dx, dy) displacements in pixels.
``warp(src, flow)`` samples ``src`` at ``(i + dy, j + dx)``; an estimator
called as ``estimator(target, source)`` returns the flow for which
``warp(source, flow)`` approximates ``target``.
"""

import torch
import torch.nn.functional as F

from .errors import ValidationError

LUMA = (0.299, 0.587, 0.114)


def warp(x, flow):
    """Bilinear backward warp with border clamping; differentiable in both inputs."""
    if x.dim() != 4 or flow.dim() != 4 or flow.shape[1] != 2:
        raise ValidationError(f"expected (B, C, H, W) input and (B, 2, H, W) flow, "
                              f"got {tuple(x.shape)} and {tuple(flow.shape)}")
    b, c, h, w = x.shape
    if flow.shape[0] != b or flow.shape[-2:] != x.shape[-2:]:
        raise ValidationError(f"flow {tuple(flow.shape)} does not match input {tuple(x.shape)}")
    rows = torch.arange(h, dtype=flow.dtype, device=flow.device).view(1, h, 1)
    cols = torch.arange(w, dtype=flow.dtype, device=flow.device).view(1, 1, w)
    sx = (cols + flow[:, 0]).clamp(0, w - 1)
    sy = (rows + flow[:, 1]).clamp(0, h - 1)
    x0 = sx.detach().floor()
    y0 = sy.detach().floor()
    wx = (sx - x0).unsqueeze(1)
    wy = (sy - y0).unsqueeze(1)
    x0 = x0.long()
    y0 = y0.long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)
    flat = x.reshape(b, c, h * w)

    def gather(yy, xx):
        idx = (yy * w + xx).reshape(b, 1, h * w).expand(b, c, h * w)
        return flat.gather(2, idx).reshape(b, c, h, w)

    top = gather(y0, x0) * (1 - wx) + gather(y0, x1) * wx
    bottom = gather(y1, x0) * (1 - wx) + gather(y1, x1) * wx
    return top * (1 - wy) + bottom * wy


def to_luma(x):
    if x.shape[1] == 1:
        return x
    if x.shape[1] != 3:
        raise ValidationError(f"expected 1 or 3 channels, got {x.shape[1]}")
    r, g, b = LUMA
    return r * x[:, 0:1] + g * x[:, 1:2] + b * x[:, 2:3]


class ZeroFlow:
    """Estimator that always reports zero motion."""

    def __call__(self, target, source):
        b, _, h, w = target.shape
        return target.new_zeros(b, 2, h, w)


def _gaussian_window(sigma, dtype, device):
    radius = max(1, int(round(3 * sigma)))
    t = torch.arange(-radius, radius + 1, dtype=dtype, device=device)
    g = torch.exp(-t ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def _smooth(x, g):
    r = g.numel() // 2
    c = x.shape[1]
    x = F.pad(x, (r, r, 0, 0), mode="replicate")
    x = F.conv2d(x, g.view(1, 1, 1, -1).expand(c, 1, 1, -1), groups=c)
    x = F.pad(x, (0, 0, r, r), mode="replicate")
    return F.conv2d(x, g.view(1, 1, -1, 1).expand(c, 1, -1, 1), groups=c)


def _gradients(x):
    p = F.pad(x, (1, 1, 1, 1), mode="replicate")
    gx = (p[..., 1:-1, 2:] - p[..., 1:-1, :-2]) / 2
    gy = (p[..., 2:, 1:-1] - p[..., :-2, 1:-1]) / 2
    return gx, gy


class ClassicalFlow:
    """Coarse-to-fine dense Lucas-Kanade with iterative warping.

    No learned weights. Works on luma; the local least-squares system uses a
    Gaussian window and a small Tikhonov term so flat regions get zero update.
    """

    def __init__(self, levels=3, iterations=4, window_sigma=1.5, regularization=1e-4, min_size=8):
        self.levels = levels
        self.iterations = iterations
        self.window_sigma = window_sigma
        self.regularization = regularization
        self.min_size = min_size

    @torch.no_grad()
    def __call__(self, target, source):
        if target.shape != source.shape:
            raise ValidationError(f"frame shapes differ: {tuple(target.shape)} vs {tuple(source.shape)}")
        tgt = [to_luma(target)]
        src = [to_luma(source)]
        for _ in range(self.levels - 1):
            if min(tgt[-1].shape[-2:]) < 2 * self.min_size:
                break
            tgt.append(F.avg_pool2d(tgt[-1], 2, ceil_mode=True))
            src.append(F.avg_pool2d(src[-1], 2, ceil_mode=True))
        g = _gaussian_window(self.window_sigma, target.dtype, target.device)
        flow = None
        for t_img, s_img in zip(reversed(tgt), reversed(src)):
            b, _, h, w = t_img.shape
            if flow is None:
                flow = t_img.new_zeros(b, 2, h, w)
            else:
                scale = torch.tensor([w / flow.shape[-1], h / flow.shape[-2]],
                                     dtype=flow.dtype, device=flow.device).view(1, 2, 1, 1)
                flow = F.interpolate(flow, size=(h, w), mode="bilinear", align_corners=False) * scale
            for _ in range(self.iterations):
                warped = warp(s_img, flow)
                gx, gy = _gradients(warped)
                gt = warped - t_img
                sxx = _smooth(gx * gx, g) + self.regularization
                syy = _smooth(gy * gy, g) + self.regularization
                sxy = _smooth(gx * gy, g)
                sxt = _smooth(gx * gt, g)
                syt = _smooth(gy * gt, g)
                det = sxx * syy - sxy * sxy
                du = -(syy * sxt - sxy * syt) / det
                dv = -(sxx * syt - sxy * sxt) / det
                flow = flow + torch.cat([du, dv], dim=1).clamp(-2.0, 2.0)
        return flow


def make_flow_estimator(name):
    if name == "zero":
        return ZeroFlow()
    if name == "classical":
        return ClassicalFlow()
    raise ValidationError(f"unknown flow estimator {name!r} (expected 'zero' or 'classical')")
