import math

import numpy as np
import pytest
import torch

from helpers import central_difference_check
from implicit_vsr.errors import ValidationError
from implicit_vsr.flow import ClassicalFlow, ZeroFlow
from implicit_vsr.losses import LossConfig, charbonnier, total_loss
from implicit_vsr.metrics import PSNR_CAP, clip_psnr_y, psnr_y, ssim, ssim_y, tof


def test_charbonnier_zero_difference_is_eps():
    a = torch.rand(4, 5)
    assert charbonnier(a, a, eps=1e-3).item() == pytest.approx(1e-3, rel=1e-6)


def test_charbonnier_three_four_five():
    assert charbonnier(torch.tensor(3.0), torch.tensor(0.0), eps=4.0).item() == 5.0


def test_charbonnier_matches_elementwise_evaluation():
    a = torch.tensor([[0.1, 0.7], [0.4, 0.9]], dtype=torch.float64)
    b = torch.tensor([[0.3, 0.2], [0.4, 0.0]], dtype=torch.float64)
    expected = np.mean([math.sqrt(d * d + 1e-6) for d in (-0.2, 0.5, 0.0, 0.9)])
    assert abs(charbonnier(a, b).item() - expected) < 1e-7


def test_charbonnier_gradient():
    gen = torch.Generator().manual_seed(0)
    a = torch.rand(3, 3, generator=gen, dtype=torch.float64, requires_grad=True)
    b = torch.rand(3, 3, generator=gen, dtype=torch.float64)
    assert central_difference_check(lambda: charbonnier(a, b), a, range(9)) < 1e-4


def test_charbonnier_shape_mismatch():
    with pytest.raises(ValidationError):
        charbonnier(torch.zeros(2, 2), torch.zeros(2, 3))


def _pairs():
    gen = torch.Generator().manual_seed(1)
    return [torch.rand(1, 2, 3, 2, 2, generator=gen, dtype=torch.float64) for _ in range(4)]


def test_total_loss_lambda_zero_is_reconstruction_only():
    sr, gt, corr, dn = _pairs()
    assert total_loss(sr, gt, corr, dn, LossConfig(lam=0.0)).item() == charbonnier(sr, gt).item()


def test_total_loss_hand_composed():
    sr, gt, corr, dn = _pairs()
    rec = np.mean(np.sqrt((sr - gt).numpy() ** 2 + 1e-6))
    cor = np.mean(np.sqrt((corr - dn).numpy() ** 2 + 1e-6))
    assert total_loss(sr, gt, corr, dn).item() == pytest.approx(rec + 0.2 * cor, abs=1e-12)


def test_total_loss_no_lc_drops_correction_term():
    sr, gt, corr, dn = _pairs()
    assert total_loss(sr, gt, corr, dn, no_lc=True).item() == charbonnier(sr, gt).item()


def test_default_weight_is_point_two():
    assert LossConfig().lam == 0.2
    assert LossConfig().charbonnier_eps == 1e-3


def test_loss_floor():
    x = torch.rand(1, 1, 3, 4, 4)
    y = torch.rand(1, 1, 3, 1, 1).expand(1, 1, 3, 4, 4)
    cfg = LossConfig()
    assert total_loss(x, x, y, y, cfg).item() >= cfg.charbonnier_eps * (1 + cfg.lam) - 1e-9
    assert torch.isfinite(total_loss(x, 1 - x, y, 1 - y, cfg))


@pytest.mark.parametrize("kwargs", [{"lam": -0.1}, {"charbonnier_eps": 0.0}])
def test_loss_config_validation(kwargs):
    with pytest.raises(ValidationError):
        LossConfig(**kwargs)


def test_psnr_identical_is_capped():
    a = np.random.default_rng(0).random((3, 8, 8))
    assert psnr_y(a, a) == PSNR_CAP


def test_psnr_uniform_offset_is_twenty_db():
    gray = np.full((3, 16, 16), 0.5)
    assert abs(psnr_y(gray, gray + 0.1) - 20.0) < 1e-6


def test_psnr_matches_direct_mse():
    rng = np.random.default_rng(2)
    a, b = rng.random((3, 9, 7)), rng.random((3, 9, 7))
    ya = 0.299 * a[0] + 0.587 * a[1] + 0.114 * a[2]
    yb = 0.299 * b[0] + 0.587 * b[1] + 0.114 * b[2]
    assert abs(psnr_y(a, b) - 10 * np.log10(1 / np.mean((ya - yb) ** 2))) < 1e-6


def test_psnr_accepts_tensors_and_clips():
    a = torch.rand(2, 3, 8, 8)
    assert clip_psnr_y(a, a) == PSNR_CAP
    with pytest.raises(ValidationError):
        psnr_y(a, a[..., :4])


def ssim_oracle(a, b, c1=1e-4, c2=9e-4):
    """Explicit loop over every valid 11x11 window with a 2-D Gaussian weight."""
    t = np.arange(11) - 5
    g = np.exp(-t ** 2 / 4.5)
    w = np.outer(g, g) / np.outer(g, g).sum()
    vals = []
    for i in range(a.shape[0] - 10):
        for j in range(a.shape[1] - 10):
            pa, pb = a[i:i + 11, j:j + 11], b[i:i + 11, j:j + 11]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va, vb = (w * (pa - ma) ** 2).sum(), (w * (pb - mb) ** 2).sum()
            cov = (w * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return np.mean(vals)


def test_ssim_identity():
    a = np.random.default_rng(3).random((16, 16))
    assert ssim(a, a) == 1.0


def test_ssim_constant_offset_closed_form():
    a, b = np.full((16, 16), 0.2), np.full((16, 16), 0.7)
    c1 = 1e-4
    expected = (2 * 0.2 * 0.7 + c1) / (0.2 ** 2 + 0.7 ** 2 + c1)
    assert ssim(a, b) == pytest.approx(expected, abs=1e-9)


def test_ssim_matches_window_loop_oracle():
    rng = np.random.default_rng(4)
    a = rng.random((15, 14))
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-10)


def test_ssim_symmetric_and_bounded():
    rng = np.random.default_rng(5)
    a, b = rng.random((20, 20)), rng.random((20, 20))
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-9
    assert -1 <= ssim(a, b) <= 1


def test_metrics_invariant_to_shared_flip():
    rng = np.random.default_rng(6)
    a = rng.random((3, 16, 16))
    b = np.clip(a + 0.05 * rng.standard_normal(a.shape), 0, 1)
    for axes in ((-1,), (-2,), (-2, -1)):
        fa, fb = np.flip(a, axes), np.flip(b, axes)
        assert abs(psnr_y(fa, fb) - psnr_y(a, b)) < 1e-9
        assert abs(ssim_y(fa, fb) - ssim_y(a, b)) < 1e-9


def test_ssim_rejects_small_images():
    with pytest.raises(ValidationError):
        ssim(np.zeros((10, 16)), np.zeros((10, 16)))


def test_tof_identical_clips_is_zero():
    clip = torch.rand(3, 3, 16, 16)
    assert tof(clip, clip, ClassicalFlow()) == 0.0


def _textured(h, w, seed):
    gen = torch.Generator().manual_seed(seed)
    coarse = torch.rand(1, 3, h // 4, w // 4, generator=gen, dtype=torch.float64)
    return torch.nn.functional.interpolate(coarse, size=(h, w), mode="bicubic", align_corners=False)[0]


def test_tof_detects_shifted_frame():
    frame = _textured(32, 32, 7)
    gt = frame.expand(3, 3, 32, 32).clone()
    sr = gt.clone()
    sr[1] = torch.roll(frame, shifts=2, dims=-1)
    assert tof(sr, gt, ClassicalFlow()) > 0


def test_tof_matches_formula_oracle():
    gen = torch.Generator().manual_seed(8)
    gt = torch.rand(4, 3, 16, 16, generator=gen, dtype=torch.float64)
    sr = torch.rand(4, 3, 16, 16, generator=gen, dtype=torch.float64)
    est = ClassicalFlow()
    expected = np.mean([
        (est(gt[t - 1:t], gt[t:t + 1]) - est(sr[t - 1:t], sr[t:t + 1])).abs().mean().item()
        for t in range(1, 4)
    ])
    assert abs(tof(sr, gt, est) - expected) < 1e-6


def test_tof_needs_two_frames():
    with pytest.raises(ValidationError):
        tof(torch.zeros(1, 3, 8, 8), torch.zeros(1, 3, 8, 8), ZeroFlow())
