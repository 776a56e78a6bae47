"""The full restoration network.

Pipeline per clip of 2M+1 low-resolution frames:

1. render the kernel dictionary once;
2. spatial correction: each frame is filtered with coefficients predicted by
   a spatial recurrent Transformer;
3. residual feature extraction on the corrected frames;
4. forward then backward propagation; at every step the previous aligned
   feature is flow-warped, refined by dictionary filtering with coefficients
   from a temporal recurrent Transformer and fused with the current feature;
5. the backward-aligned feature of every frame is upsampled x4 by pixel
   shuffle on top of a bicubic upsampling of the corrected frame.
"""

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .dictionary import KernelDictionary
from .errors import ValidationError
from .filtering import varying_filter
from .flow import ClassicalFlow, warp
from .transformer import RecurrentTransformer


@dataclass
class ModelConfig:
    channels: int = 64
    num_scales: int = 7
    num_atoms: int = 8
    radius: int = 2
    extract_blocks: int = 8
    up_blocks: int = 13
    scale: int = 4
    inr_hidden: int = 32
    freq_low: float = 2.0
    freq_high: float = 16.0
    delta_bias: float = 10.0
    # a saturated scale softmax would keep the alignment filter at the 1x1 scale
    ita_delta_bias: float = 2.0
    atom_seed: int = 0
    no_isc: bool = False
    no_ita: bool = False
    no_rec: bool = False
    no_bidir: bool = False

    def __post_init__(self):
        for name in ("channels", "num_scales", "num_atoms", "inr_hidden"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be at least 1, got {getattr(self, name)}")
        for name in ("radius", "extract_blocks", "up_blocks"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.scale != 4:
            raise ValidationError(f"only x4 upsampling is supported, got {self.scale}")
        if not 0 < self.freq_low <= self.freq_high:
            raise ValidationError(f"bad frequency range [{self.freq_low}, {self.freq_high}]")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def desk(cls, **overrides):
        base = dict(channels=16, num_scales=3, num_atoms=4, radius=1, extract_blocks=4, up_blocks=6)
        base.update(overrides)
        return cls(**base)


class ResidualBlock(nn.Module):
    """conv-ReLU-conv with identity skip and no normalization."""

    def __init__(self, dim, init_scale=0.1):
        super().__init__()
        self.conv1 = nn.Conv2d(dim, dim, 3, padding=1)
        self.conv2 = nn.Conv2d(dim, dim, 3, padding=1)
        with torch.no_grad():
            for conv in (self.conv1, self.conv2):
                nn.init.kaiming_normal_(conv.weight)
                conv.weight.mul_(init_scale)
                conv.bias.zero_()

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class SpatialCorrection(nn.Module):
    """Predicts coefficients from the frame itself and filters the frame with them."""

    def __init__(self, dim, num_atoms, num_scales, delta_bias=10.0):
        super().__init__()
        self.embed = nn.Conv2d(3, dim, 3, padding=1)
        self.srt = RecurrentTransformer(dim, num_atoms, num_scales, delta_bias=delta_bias)

    def forward(self, frame, dictionary, use_hidden=True):
        f = self.embed(frame)
        # the frame feeds both branches; without recurrence the hidden branch is empty
        coeff, _ = self.srt(f, f if use_hidden else torch.zeros_like(f))
        return varying_filter(frame, dictionary, coeff), coeff


class FeatureExtractor(nn.Sequential):
    def __init__(self, dim, num_blocks):
        super().__init__(nn.Conv2d(3, dim, 3, padding=1),
                         *[ResidualBlock(dim) for _ in range(num_blocks)])


class TemporalAlignment(nn.Module):
    """Aligns a propagated feature to the current frame.

    With ``filtered=False`` the dictionary filtering is skipped and the warped
    feature is fused directly (flow-only alignment).
    """

    def __init__(self, dim, num_atoms, num_scales, delta_bias=10.0):
        super().__init__()
        self.trt = RecurrentTransformer(dim, num_atoms, num_scales, delta_bias=delta_bias)
        self.fusion = nn.Conv2d(2 * dim, dim, 3, padding=1)

    def forward(self, prev_aligned, cur_feature, flow, dictionary, state=None,
                filtered=True, use_hidden=True):
        if prev_aligned.shape != cur_feature.shape:
            raise ValidationError(f"aligned {tuple(prev_aligned.shape)} and current "
                                  f"{tuple(cur_feature.shape)} feature shapes differ")
        warped = warp(prev_aligned, flow)
        if filtered:
            hidden = cur_feature if use_hidden else torch.zeros_like(cur_feature)
            coeff, state = self.trt(warped, hidden, state if use_hidden else None)
            if not use_hidden:
                state = None
            warped = varying_filter(warped, dictionary, coeff)
        return self.fusion(torch.cat([warped, cur_feature], dim=1)), state


class Upsampler(nn.Module):
    """Residual blocks and two x2 pixel-shuffle stages over a bicubic x4 base."""

    def __init__(self, dim, num_blocks, scale=4):
        super().__init__()
        if scale != 4:
            raise ValidationError(f"only x4 upsampling is supported, got {scale}")
        self.scale = scale
        self.body = nn.Sequential(*[ResidualBlock(dim) for _ in range(num_blocks)])
        self.up1 = nn.Conv2d(dim, dim * 4, 3, padding=1)
        self.up2 = nn.Conv2d(dim, dim * 4, 3, padding=1)
        self.shuffle = nn.PixelShuffle(2)
        self.hr_conv = nn.Conv2d(dim, dim, 3, padding=1)
        self.last = nn.Conv2d(dim, 3, 3, padding=1)

    def forward(self, aligned, corrected):
        x = self.body(aligned)
        x = F.leaky_relu(self.shuffle(self.up1(x)), 0.1)
        x = F.leaky_relu(self.shuffle(self.up2(x)), 0.1)
        x = self.last(F.leaky_relu(self.hr_conv(x), 0.1))
        base = F.interpolate(corrected, scale_factor=self.scale, mode="bicubic", align_corners=False)
        return (x + base).clamp(0.0, 1.0)


def propagate(features, flows, align, dictionary, use_hidden=True, filtered=True, reverse=False):
    """One propagation direction over a list of (B, C, H, W) features.

    ``flows[t]`` maps frame t to its predecessor in the propagation order
    (unused for the first visited frame, which aligns against itself with zero
    flow). The long-term state starts empty for every call.
    """
    order = range(len(features) - 1, -1, -1) if reverse else range(len(features))
    out = [None] * len(features)
    prev, state = None, None
    for t in order:
        cur = features[t]
        if prev is None:
            prev, flow = cur, cur.new_zeros(cur.shape[0], 2, *cur.shape[-2:])
        else:
            flow = flows[t]
        prev, state = align(prev, cur, flow, dictionary, state,
                            filtered=filtered, use_hidden=use_hidden)
        out[t] = prev
    return out


class ImplicitVSR(nn.Module):
    """Blind x4 video super-resolution with implicit kernel dictionaries.

    Ablation switches in the config: ``no_isc`` skips the spatial correction,
    ``no_ita`` replaces the temporal alignment by flow warping plus fusion,
    ``no_rec`` drops the hidden-state branch and long-term states of every
    recurrent Transformer, ``no_bidir`` removes the backward alignment.
    """

    def __init__(self, config=None, flow_estimator=None):
        super().__init__()
        self.config = config = config or ModelConfig()
        self.flow_estimator = flow_estimator or ClassicalFlow()
        c, n, r = config.channels, config.num_atoms, config.num_scales
        self.dictionary = KernelDictionary(n, r, (config.freq_low, config.freq_high),
                                           seed=config.atom_seed, hidden_features=config.inr_hidden)
        self.isc = SpatialCorrection(c, n, r, config.delta_bias)
        self.extractor = FeatureExtractor(c, config.extract_blocks)
        self.ita_forward = TemporalAlignment(c, n, r, config.ita_delta_bias)
        self.ita_backward = TemporalAlignment(c, n, r, config.ita_delta_bias)
        self.upsampler = Upsampler(c, config.up_blocks, config.scale)

    def check_input(self, lr):
        if lr.dim() != 5 or lr.shape[2] != 3:
            raise ValidationError(f"expected a (B, T, 3, H, W) clip, got {tuple(lr.shape)}")
        h, w = lr.shape[-2:]
        if h % 4 or w % 4:
            raise ValidationError(f"frame size {h}x{w} must be divisible by 4")

    def correct(self, lr, dictionary):
        """Spatial correction of every frame; returns (B, T, 3, H, W)."""
        if self.config.no_isc:
            return lr
        b, t = lr.shape[:2]
        out, _ = self.isc(lr.flatten(0, 1), dictionary, use_hidden=not self.config.no_rec)
        return out.unflatten(0, (b, t))

    def estimate_flows(self, corrected):
        """Forward flows f[t]: t -> t-1 and backward flows b[t]: t -> t+1."""
        frames = [corrected[:, t].detach() for t in range(corrected.shape[1])]
        fwd = [None] + [self.flow_estimator(frames[t], frames[t - 1]) for t in range(1, len(frames))]
        bwd = [self.flow_estimator(frames[t], frames[t + 1]) for t in range(len(frames) - 1)] + [None]
        return fwd, bwd

    def align(self, features, corrected, dictionary):
        """Returns (forward-aligned, backward-aligned) feature lists."""
        cfg = self.config
        fwd_flows, bwd_flows = self.estimate_flows(corrected)
        kwargs = dict(use_hidden=not cfg.no_rec, filtered=not cfg.no_ita)
        aligned_f = propagate(features, fwd_flows, self.ita_forward, dictionary, **kwargs)
        if cfg.no_bidir:
            return aligned_f, aligned_f
        aligned_b = propagate(aligned_f, bwd_flows, self.ita_backward, dictionary, reverse=True, **kwargs)
        return aligned_f, aligned_b

    def forward(self, lr, return_aligned=False):
        """Restore a (B, T, 3, H, W) clip; returns (sr, corrected) clips."""
        self.check_input(lr)
        dictionary = self.dictionary()
        corrected = self.correct(lr, dictionary)
        b, t_len = lr.shape[:2]
        features = self.extractor(corrected.flatten(0, 1)).unflatten(0, (b, t_len)).unbind(1)
        aligned_f, aligned_b = self.align(list(features), corrected, dictionary)
        sr = self.upsampler(torch.stack(aligned_b, dim=1).flatten(0, 1), corrected.flatten(0, 1))
        sr = sr.unflatten(0, (b, t_len))
        if return_aligned:
            return sr, corrected, (aligned_f, aligned_b)
        return sr, corrected

    def project_(self):
        """Re-apply parameter constraints after an optimizer step."""
        for m in (self.isc.srt, self.ita_forward.trt, self.ita_backward.trt):
            m.project_()

    def parameter_groups(self):
        """Named parameter groups used for checkpoints and gradient probes."""
        return {
            "dictionary": self.dictionary,
            "isc": self.isc,
            "extractor": self.extractor,
            "ita_forward": self.ita_forward,
            "ita_backward": self.ita_backward,
            "upsampler": self.upsampler,
        }


def count_parameters(module):
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


@torch.no_grad()
def restore_clip(model, lr_clip):
    """Restore an arbitrary-length (T, 3, H, W) clip with sliding windows of 2M+1.

    Each output frame is the centre of a window whose out-of-range indices are
    clamped to the clip ends. Returns (sr, corrected), both (T, 3, ., .).
    """
    radius = model.config.radius
    t_len = lr_clip.shape[0]
    sr, corrected = [], []
    for t in range(t_len):
        idx = [min(max(k, 0), t_len - 1) for k in range(t - radius, t + radius + 1)]
        out, corr = model(lr_clip[idx].unsqueeze(0))
        sr.append(out[0, radius])
        corrected.append(corr[0, radius])
    return torch.stack(sr), torch.stack(corrected)
