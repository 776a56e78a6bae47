"""Synthetic degradations: per-frame blur kernels, blur + bicubic downsampling.

Every frame of a clip gets its own kernel. Two scenarios are supported:
isotropic Gaussian blur with sigma drawn from [0.4, 2.0], and camera-shake
motion blur rasterized from a random trajectory. Kernels are 13x13 numpy
float64 arrays that sum to one.
"""

from dataclasses import dataclass, field
import hashlib

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ValidationError

KERNEL_SIZE = 13
SIGMA_RANGE = (0.4, 2.0)
SCENARIOS = ("gaussian", "motion")


def gaussian_kernel(sigma, size=KERNEL_SIZE):
    """Normalized isotropic Gaussian on a ``size`` x ``size`` grid centred at size // 2."""
    if not sigma > 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    c = size // 2
    t = np.arange(size, dtype=np.float64) - c
    g = np.exp(-(t[:, None] ** 2 + t[None, :] ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _trajectory(rng, n_samples, max_length):
    # Markov random walk on velocity: inertia, a pull back to the origin,
    # Gaussian jitter and rare large impulses (abrupt shakes).
    centripetal = 0.7 * rng.random()
    gaussian_term = 10.0 * rng.random()
    freq_big_shakes = 0.2 * rng.random()
    anxiety = 0.005 * rng.random()
    angle = 2 * np.pi * rng.random()
    step = max_length / (n_samples - 1)
    v = np.exp(1j * angle) * step
    x = np.zeros(n_samples, dtype=np.complex128)
    for t in range(n_samples - 1):
        if rng.random() < freq_big_shakes * anxiety:
            impulse = 2 * v * np.exp(1j * (np.pi + rng.random() - 0.5))
        else:
            impulse = 0
        noise = rng.normal() + 1j * rng.normal()
        v = v + impulse + anxiety * (gaussian_term * noise - centripetal * x[t]) * step
        v = v / abs(v) * step
        x[t + 1] = x[t] + v
    return x


def _splat(points, size):
    # bilinear splatting of trajectory samples onto the grid
    grid = np.zeros((size, size))
    rows, cols = points.imag, points.real
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    fr, fc = rows - r0, cols - c0
    for dr, wr in ((0, 1 - fr), (1, fr)):
        for dc, wc in ((0, 1 - fc), (1, fc)):
            rr, cc = r0 + dr, c0 + dc
            ok = (rr >= 0) & (rr < size) & (cc >= 0) & (cc < size)
            np.add.at(grid, (rr[ok], cc[ok]), (wr * wc)[ok])
    return grid


def motion_kernel(seed, size=KERNEL_SIZE, n_samples=256):
    """Random camera-shake kernel, deterministic per ``seed``.

    The trajectory length is jittered in [1, size - 3] pixels; the path is
    centred on the grid, splatted with sub-pixel weights and, for half of the
    seeds, smoothed by a small Gaussian before normalization.
    """
    rng = np.random.default_rng(seed)
    max_length = rng.uniform(1.0, size - 3.0)
    x = _trajectory(rng, n_samples, max_length)
    extent = max(np.ptp(x.real), np.ptp(x.imag))
    if extent > size - 3:
        x = x * ((size - 3) / extent)
    centre = (x.real.max() + x.real.min()) / 2 + 1j * (x.imag.max() + x.imag.min()) / 2
    x = x - centre + (size // 2) * (1 + 1j)
    k = _splat(x, size)
    if rng.random() < 0.5:
        k = _convolve_same(k, gaussian_kernel(0.5, 3))
    k = np.clip(k, 0, None)
    return k / k.sum()


def _convolve_same(a, k):
    out = np.zeros_like(a)
    r = k.shape[0] // 2
    padded = np.pad(a, r)
    for dy in range(k.shape[0]):
        for dx in range(k.shape[1]):
            out += k[dy, dx] * padded[dy:dy + a.shape[0], dx:dx + a.shape[1]]
    return out


def kernel_checksum(kernel):
    return hashlib.sha256(np.ascontiguousarray(kernel, dtype=np.float64).tobytes()).hexdigest()[:16]


def blur(frames, kernel):
    """True 2-D convolution of every channel with ``kernel`` (replicate padding).

    ``frames`` is (..., C, H, W); ``kernel`` an odd square array.
    """
    k = torch.as_tensor(np.asarray(kernel), dtype=frames.dtype, device=frames.device)
    size = k.shape[-1]
    if k.dim() != 2 or k.shape[0] != size or size % 2 == 0:
        raise ValidationError(f"kernel must be odd and square, got shape {tuple(k.shape)}")
    lead = frames.shape[:-2]
    h, w = frames.shape[-2:]
    x = frames.reshape(-1, 1, h, w)
    p = size // 2
    x = F.conv2d(F.pad(x, (p, p, p, p), mode="replicate"), k.flip(0, 1)[None, None])
    return x.reshape(*lead, h, w)


def bicubic_down(frames, s):
    """Antialiased bicubic downsampling by an integer factor; (..., C, H, W) input."""
    h, w = frames.shape[-2:]
    if h % s or w % s:
        raise ValidationError(f"frame size {h}x{w} is not divisible by {s}")
    lead = frames.shape[:-3]
    x = frames.reshape(-1, *frames.shape[-3:])
    x = F.interpolate(x, size=(h // s, w // s), mode="bicubic", align_corners=False, antialias=True)
    return x.reshape(*lead, *x.shape[-3:])


def bicubic_up(frames, s):
    lead = frames.shape[:-3]
    x = frames.reshape(-1, *frames.shape[-3:])
    x = F.interpolate(x, scale_factor=s, mode="bicubic", align_corners=False)
    return x.reshape(*lead, *x.shape[-3:])


def degrade_frame(gt_frame, kernel, s=4):
    """Blur a (C, sH, sW) frame with ``kernel`` then bicubic-downsample by ``s``."""
    h, w = gt_frame.shape[-2:]
    if h % s or w % s:
        raise ValidationError(f"frame size {h}x{w} is not divisible by {s}")
    return bicubic_down(blur(gt_frame, kernel), s)


@dataclass
class ClipTriplet:
    """Ground truth, blurred-downsampled and clean-downsampled versions of one clip."""

    gt: torch.Tensor
    lr: torch.Tensor
    dn: torch.Tensor
    kernels: list
    scenario: str
    seed: int
    noise_sigma: float = 0.0
    sigmas: list = field(default_factory=list)
    kernel_seeds: list = field(default_factory=list)

    def manifest(self):
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "noise_sigma": self.noise_sigma,
            "frames": len(self.kernels),
            "sigmas": self.sigmas,
            "kernel_seeds": self.kernel_seeds,
            "kernel_checksums": [kernel_checksum(k) for k in self.kernels],
        }


def make_triplet(gt_clip, scenario, seed, noise_sigma=0.0, s=4):
    """Degrade a (T, 3, sH, sW) clip in [0, 1] with one random kernel per frame.

    ``noise_sigma`` is on the 8-bit scale: Gaussian noise of std
    ``noise_sigma / 255`` is added to the blurred LR frames only, which are
    then clipped to [0, 1]. The clean downsample ``dn`` never has noise.
    """
    if scenario not in SCENARIOS:
        raise ValidationError(f"unknown scenario {scenario!r}, expected one of {SCENARIOS}")
    if noise_sigma < 0:
        raise ValidationError(f"noise level must be non-negative, got {noise_sigma}")
    rng = np.random.default_rng(seed)
    kernels, sigmas, kernel_seeds = [], [], []
    for _ in range(gt_clip.shape[0]):
        if scenario == "gaussian":
            sigma = float(rng.uniform(*SIGMA_RANGE))
            sigmas.append(sigma)
            kernels.append(gaussian_kernel(sigma))
        else:
            kseed = int(rng.integers(0, 2 ** 31 - 1))
            kernel_seeds.append(kseed)
            kernels.append(motion_kernel(kseed))
    lr = torch.stack([degrade_frame(f, k, s) for f, k in zip(gt_clip, kernels)])
    if noise_sigma > 0:
        noise = rng.normal(0.0, noise_sigma / 255.0, size=tuple(lr.shape))
        lr = (lr + torch.as_tensor(noise, dtype=lr.dtype)).clamp(0.0, 1.0)
    dn = bicubic_down(gt_clip, s)
    return ClipTriplet(gt_clip, lr, dn, kernels, scenario, seed, float(noise_sigma), sigmas, kernel_seeds)


def synthetic_clip(num_frames=10, height=64, width=64, seed=0, max_step=2):
    """Procedural test clip: a textured canvas panned by a random integer walk.

    The canvas mixes colored rectangles, disks, oriented gratings and smooth
    noise so that both edges and fine texture are present. Values are
    quantized to 8-bit levels and returned as a (T, 3, H, W) float32 tensor.
    """
    rng = np.random.default_rng(seed)
    margin = max_step * num_frames + 2
    ch, cw = height + 2 * margin, width + 2 * margin
    yy, xx = np.mgrid[0:ch, 0:cw].astype(np.float64)
    canvas = np.empty((3, ch, cw))
    canvas[:] = rng.uniform(0.2, 0.8, size=(3, 1, 1))
    coarse = rng.uniform(-0.15, 0.15, size=(3, ch // 8 + 2, cw // 8 + 2))
    smooth = F.interpolate(torch.from_numpy(coarse)[None], size=(ch, cw), mode="bicubic",
                           align_corners=False)[0].numpy()
    canvas += smooth
    for _ in range(3):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(0.25, 0.9)
        amp = rng.uniform(0.05, 0.15)
        y0, x0 = rng.uniform(0, ch), rng.uniform(0, cw)
        mask = ((yy - y0) ** 2 + (xx - x0) ** 2) < rng.uniform(8, 20) ** 2
        wave = np.sin(freq * (np.cos(theta) * xx + np.sin(theta) * yy))
        canvas += amp * wave * mask * rng.choice([-1.0, 1.0], size=(3, 1, 1))
    for _ in range(8):
        color = rng.uniform(0, 1, size=(3, 1, 1))
        y0, x0 = rng.uniform(0, ch), rng.uniform(0, cw)
        if rng.random() < 0.5:
            hh, ww = rng.uniform(4, 16, size=2)
            mask = (np.abs(yy - y0) < hh) & (np.abs(xx - x0) < ww)
        else:
            mask = ((yy - y0) ** 2 + (xx - x0) ** 2) < rng.uniform(3, 12) ** 2
        canvas = np.where(mask, color, canvas)
    canvas = np.clip(canvas, 0, 1)
    canvas = np.round(canvas * 255) / 255
    pos = np.array([margin, margin])
    frames = []
    for _ in range(num_frames):
        y, x = pos
        frames.append(canvas[:, y:y + height, x:x + width])
        pos = np.clip(pos + rng.integers(-max_step, max_step + 1, size=2), 0, 2 * margin)
    return torch.from_numpy(np.stack(frames)).float()
