"""Spatially-varying filtering with per-pixel kernels built from a dictionary.

Every pixel (i, j) owns the kernel

    k_ij = sum_r mu[r, i, j] * sum_n omega[n, i, j] * d_n^r

(atoms zero-padded and centred to the largest size) and the output is the
true convolution ``out[i, j] = sum_{x, y} k_ij[x, y] * in[i - x, j - y]`` with
kernel offsets measured from the centre and replicate padding at the borders.
The same spatial kernel is applied to every channel.

Tensors follow the torch layout: images and features are (B, C, H, W),
``omega`` is (B, N, H, W) and ``mu`` is (B, R, H, W).
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ContractViolation, ValidationError

MU_TOLERANCE = 1e-5


@dataclass
class CoefficientField:
    """Per-pixel atom weights ``omega`` (B, N, H, W) and scale weights ``mu`` (B, R, H, W)."""

    omega: torch.Tensor
    mu: torch.Tensor

    @property
    def spatial_shape(self):
        return tuple(self.omega.shape[-2:])

    def detach(self):
        return CoefficientField(self.omega.detach(), self.mu.detach())


def delta_coefficients(batch, num_atoms, num_scales, height, width, dtype=torch.float32, device=None):
    """Coefficients selecting the delta atom at the 1x1 scale everywhere."""
    omega = torch.zeros(batch, num_atoms, height, width, dtype=dtype, device=device)
    mu = torch.zeros(batch, num_scales, height, width, dtype=dtype, device=device)
    omega[:, 0] = 1.0
    mu[:, 0] = 1.0
    return CoefficientField(omega, mu)


def _check(x, dictionary, coeff):
    if x.dim() != 4:
        raise ValidationError(f"expected a (B, C, H, W) input, got shape {tuple(x.shape)}")
    b, c, h, w = x.shape
    if c < 1:
        raise ValidationError("input needs at least one channel")
    n, r = dictionary.num_atoms, dictionary.num_scales
    if tuple(coeff.omega.shape) != (b, n, h, w):
        raise ValidationError(f"omega shape {tuple(coeff.omega.shape)} does not match {(b, n, h, w)}")
    if tuple(coeff.mu.shape) != (b, r, h, w):
        raise ValidationError(f"mu shape {tuple(coeff.mu.shape)} does not match {(b, r, h, w)}")
    err = (coeff.mu.detach().sum(dim=1) - 1).abs().max().item() if coeff.mu.numel() else 0.0
    if err > MU_TOLERANCE:
        raise ContractViolation(f"scale weights are not normalized (max |sum - 1| = {err:.3g})")


def per_pixel_kernel(dictionary, coeff, i, j, batch=0):
    """Materialize the (M_R, M_R) kernel of pixel (i, j)."""
    h, w = coeff.spatial_shape
    if not (0 <= i < h and 0 <= j < w):
        raise ValidationError(f"pixel ({i}, {j}) outside a {h}x{w} field")
    return _mix(dictionary.padded(), coeff, i, j, batch)


def _mix(atoms, coeff, i, j, batch):
    # atoms: (R, N, K, K) padded stack
    weights = coeff.mu[batch, :, i, j][:, None] * coeff.omega[batch, :, i, j][None, :]
    return torch.einsum("rn,rnxy->xy", weights, atoms)


def varying_filter(x, dictionary, coeff):
    """Fast path: N*R whole-image convolutions, then a per-pixel weighted sum."""
    _check(x, dictionary, coeff)
    b, c, h, w = x.shape
    flat = x.reshape(b * c, 1, h, w)
    out = x.new_zeros(b, c, h, w)
    for r, atoms in enumerate(dictionary.scales):
        size = atoms.shape[-1]
        pad = size // 2
        src = F.pad(flat, (pad,) * 4, mode="replicate") if pad else flat
        # conv2d correlates; flipping the atoms turns it into a true convolution
        resp = F.conv2d(src, atoms.flip(-1, -2).unsqueeze(1)).reshape(b, c, -1, h, w)
        weight = coeff.omega * coeff.mu[:, r:r + 1]
        out = out + (resp * weight.unsqueeze(1)).sum(dim=2)
    return out


def brute_force_filter(x, dictionary, coeff):
    """Slow reference: builds every per-pixel kernel and evaluates the explicit sum."""
    _check(x, dictionary, coeff)
    b, c, h, w = x.shape
    size = dictionary.max_size
    half = size // 2
    offsets = torch.arange(size) - half
    atoms = dictionary.padded()
    out = []
    for bi in range(b):
        plane = []
        for i in range(h):
            line = []
            src_rows = (i - offsets).clamp(0, h - 1)
            for j in range(w):
                k = _mix(atoms, coeff, i, j, bi)
                src_cols = (j - offsets).clamp(0, w - 1)
                patch = x[bi][:, src_rows][:, :, src_cols]  # patch[c, a, b] = x[c, i - (a - half), j - (b - half)]
                line.append((patch * k).sum(dim=(-1, -2)))
            plane.append(torch.stack(line, dim=-1))
        out.append(torch.stack(plane, dim=-2))
    return torch.stack(out)
