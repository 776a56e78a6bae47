"""Charbonnier reconstruction and correction losses."""

from dataclasses import dataclass

import torch

from .errors import ValidationError


@dataclass
class LossConfig:
    lam: float = 0.2
    charbonnier_eps: float = 1e-3

    def __post_init__(self):
        if self.lam < 0:
            raise ValidationError(f"loss weight must be non-negative, got {self.lam}")
        if not self.charbonnier_eps > 0:
            raise ValidationError(f"Charbonnier eps must be positive, got {self.charbonnier_eps}")


def charbonnier(a, b, eps=1e-3):
    """Mean of ``sqrt((a - b)^2 + eps^2)`` over all elements."""
    a = torch.as_tensor(a)
    b = torch.as_tensor(b)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return torch.sqrt((a - b) ** 2 + eps ** 2).mean()


def total_loss(sr, gt, corrected, dn, cfg=None, no_lc=False):
    """Reconstruction loss on SR frames plus ``lam`` times the correction loss.

    The correction term compares the spatially corrected LR frames with the
    clean downsampled ground truth; ``no_lc`` drops it.
    """
    cfg = cfg or LossConfig()
    loss = charbonnier(sr, gt, cfg.charbonnier_eps)
    if not no_lc and cfg.lam > 0:
        loss = loss + cfg.lam * charbonnier(corrected, dn, cfg.charbonnier_eps)
    return loss
