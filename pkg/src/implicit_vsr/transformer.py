"""Recurrent Transformer that predicts per-pixel filtering coefficients.

A three-scale encoder-decoder whose blocks consume two streams, a feature
branch and a hidden-state branch. Attention is computed across channels
(a C x C map), so its cost is linear in the number of pixels. Decoder blocks
additionally receive a long-term hidden state carried between time steps.
"""

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ContractViolation, ValidationError
from .filtering import CoefficientField

ALPHA_MIN = 1e-4


class LayerNorm2d(nn.Module):
    """Layer normalization over the channel axis of a (B, C, H, W) tensor."""

    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))
        self.eps = eps

    def forward(self, x):
        mu = x.mean(1, keepdim=True)
        var = x.var(1, keepdim=True, unbiased=False)
        x = (x - mu) / torch.sqrt(var + self.eps)
        return x * self.weight[:, None, None] + self.bias[:, None, None]


class GatedFeedForward(nn.Module):
    """Pointwise expansion, depth-wise 3x3 gate, pointwise projection."""

    def __init__(self, dim, expansion=2):
        super().__init__()
        hidden = dim * expansion
        self.project_in = nn.Conv2d(dim, hidden * 2, 1)
        self.dwconv = nn.Conv2d(hidden * 2, hidden * 2, 3, padding=1, groups=hidden * 2)
        self.project_out = nn.Conv2d(hidden, dim, 1)

    def forward(self, x):
        x1, x2 = self.dwconv(self.project_in(x)).chunk(2, dim=1)
        return self.project_out(F.gelu(x1) * x2)


class RecurrentOptimizationAttention(nn.Module):
    """Channel attention mixing a feature branch and a hidden-state branch.

    Each branch is projected by a 3x3 convolution to 3*C channels and split
    into query, key and value. The summed keys and queries (L2-normalized over
    pixels) form a C x C logit map divided by the learnable temperature
    ``alpha``; a softmax over the key axis weights the summed values, and a
    1x1 depth-wise convolution projects the result.
    """

    def __init__(self, dim):
        super().__init__()
        self.qkv_feature = nn.Conv2d(dim, dim * 3, 3, padding=1, bias=False)
        self.qkv_hidden = nn.Conv2d(dim, dim * 3, 3, padding=1, bias=False)
        self.project_out = nn.Conv2d(dim, dim, 1, groups=dim, bias=False)
        self.alpha = nn.Parameter(torch.ones(1))

    def forward(self, feature, hidden):
        if feature.shape != hidden.shape:
            raise ValidationError(
                f"feature {tuple(feature.shape)} and hidden {tuple(hidden.shape)} shapes differ")
        b, c, h, w = feature.shape
        q_o, k_o, v_o = self.qkv_feature(feature).chunk(3, dim=1)
        q_h, k_h, v_h = self.qkv_hidden(hidden).chunk(3, dim=1)
        q = F.normalize((q_o + q_h).reshape(b, c, h * w), dim=-1)
        k = F.normalize((k_o + k_h).reshape(b, c, h * w), dim=-1)
        v = (v_o + v_h).reshape(b, c, h * w)
        # logits[i, j] = <k_i, q_j>; column j holds the weights of output channel j
        attn = torch.softmax(k @ q.transpose(-1, -2) / self.alpha, dim=-2)
        out = attn.transpose(-1, -2) @ v
        return self.project_out(out.reshape(b, c, h, w))

    @torch.no_grad()
    def project_(self):
        self.alpha.clamp_(min=ALPHA_MIN)


class RTBlock(nn.Module):
    """Attention plus feed-forward block that also refreshes the short-term hidden state.

    Encoder blocks (``decoder=False``) reject a long-term hidden state.
    """

    def __init__(self, dim, decoder=False, ffn_expansion=2):
        super().__init__()
        self.decoder = decoder
        self.norm_feature = LayerNorm2d(dim)
        self.norm_hidden = LayerNorm2d(dim)
        self.roa = RecurrentOptimizationAttention(dim)
        self.norm_ffn = LayerNorm2d(dim)
        self.ffn = GatedFeedForward(dim, ffn_expansion)
        self.hidden_update = nn.Conv2d(dim, dim, 3, padding=1)

    def forward(self, feature, short_hidden, long_hidden=None):
        if long_hidden is not None:
            if not self.decoder:
                raise ContractViolation("encoder blocks take no long-term hidden state")
            hidden = short_hidden + long_hidden
        else:
            hidden = short_hidden
        if feature.shape != hidden.shape:
            raise ValidationError(
                f"feature {tuple(feature.shape)} and hidden {tuple(hidden.shape)} shapes differ")
        attended = self.roa(self.norm_feature(feature), self.norm_hidden(hidden))
        out = feature + self.ffn(self.norm_ffn(feature + attended))
        return out, self.hidden_update(attended)


@dataclass
class RTState:
    """Hidden states of one forward pass.

    ``long_hidden`` holds the decoder states at scales 2 and 1 and is what gets
    carried to the next time step; the other fields are kept for inspection.
    """

    long_hidden: list
    short_hidden: list = field(default_factory=list)
    scale_features: list = field(default_factory=list)


class RecurrentTransformer(nn.Module):
    """Three-scale encoder-decoder predicting ``omega`` (N channels) and ``mu`` (R channels).

    Args:
        dim (int): Channel width C_f of both branches.
        num_atoms (int): N, atoms per scale.
        num_scales (int): R, number of kernel scales.
        delta_bias (float): Initial logit of the 1x1 scale; with the small head
            initialization the untrained module predicts near-delta kernels.
        head_std (float): Std of the head convolution's initial weights.
    """

    def __init__(self, dim, num_atoms, num_scales, delta_bias=10.0, head_std=1e-5):
        super().__init__()
        self.num_atoms = num_atoms
        self.num_scales = num_scales

        def stage(stride):
            return nn.Conv2d(dim, dim, 3, stride=stride, padding=1)

        self.enc_feature = nn.ModuleList([stage(1), stage(2), stage(2)])
        self.enc_hidden = nn.ModuleList([stage(1), stage(2), stage(2)])
        self.enc_blocks = nn.ModuleList([RTBlock(dim) for _ in range(3)])
        # index 0 goes from scale 3 to scale 2, index 1 from scale 2 to scale 1
        self.up_feature = nn.ModuleList([nn.ConvTranspose2d(dim, dim, 4, 2, 1) for _ in range(2)])
        self.up_hidden = nn.ModuleList([nn.ConvTranspose2d(dim, dim, 4, 2, 1) for _ in range(2)])
        self.dec_blocks = nn.ModuleList([RTBlock(dim, decoder=True) for _ in range(2)])
        self.head = nn.Conv2d(dim, num_atoms + num_scales, 3, padding=1)
        with torch.no_grad():
            self.head.weight.normal_(0.0, head_std)
            self.head.bias.zero_()
            self.head.bias[0] = 1.0
            self.head.bias[num_atoms] = delta_bias

    def forward(self, feature, hidden, state=None):
        if feature.shape != hidden.shape:
            raise ValidationError(
                f"feature {tuple(feature.shape)} and hidden {tuple(hidden.shape)} shapes differ")
        h, w = feature.shape[-2:]
        if h % 4 or w % 4:
            raise ValidationError(f"spatial size {h}x{w} must be divisible by 4")
        long_in = state.long_hidden if state is not None else [None, None]

        enc_out, enc_hidden = [], []
        f, hd = feature, hidden
        for conv_f, conv_h, block in zip(self.enc_feature, self.enc_hidden, self.enc_blocks):
            f, hd = block(conv_f(f), conv_h(hd))
            enc_out.append(f)
            enc_hidden.append(hd)

        long_out = []
        f, hd = enc_out[2], enc_hidden[2]
        for k, skip in enumerate((1, 0)):
            f_up = self.up_feature[k](f)
            short = self.up_hidden[k](hd) + enc_hidden[skip]
            long = long_in[k]
            if long is None:
                long = torch.zeros_like(short)
            f, hd = self.dec_blocks[k](f_up, short, long)
            f = f + enc_out[skip]
            long_out.append(hd)

        logits = self.head(f)
        omega = logits[:, :self.num_atoms]
        mu = torch.softmax(logits[:, self.num_atoms:], dim=1)
        new_state = RTState(long_out, enc_hidden, enc_out)
        return CoefficientField(omega, mu), new_state

    def project_(self):
        for m in self.modules():
            if isinstance(m, RecurrentOptimizationAttention):
                m.project_()
