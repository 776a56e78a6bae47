"""Fast numerical self-checks run by ``implicit-vsr selftest``."""

import numpy as np
import torch

from .dictionary import KernelDictionary, MultiScaleDictionary, atoms_to_png_grid, render_atom
from .filtering import CoefficientField, brute_force_filter, delta_coefficients, varying_filter
from .losses import charbonnier
from .metrics import PSNR_CAP, psnr_y, ssim, tof
from .transformer import RecurrentOptimizationAttention


def random_instance(gen, h, w, c, n, r, dtype=torch.float64):
    """Random dictionary, normalized coefficients and input for filter checks."""
    scales = [torch.randn(n, 2 * k + 1, 2 * k + 1, generator=gen, dtype=dtype) for k in range(r)]
    omega = torch.randn(1, n, h, w, generator=gen, dtype=dtype)
    mu = torch.softmax(torch.randn(1, r, h, w, generator=gen, dtype=dtype), dim=1)
    x = torch.rand(1, c, h, w, generator=gen, dtype=dtype)
    return x, MultiScaleDictionary(scales), CoefficientField(omega, mu)


def oracle_error(x, d, coeff):
    fast = varying_filter(x, d, coeff)
    slow = brute_force_filter(x, d, coeff)
    return ((fast - slow).abs().max() / (slow.abs().max() + 1e-8)).item()


def fd_relative_error(fn, param, index, step=1e-4):
    """Relative error between the autograd and central-difference derivative of ``fn()``."""
    param.grad = None
    fn().backward()
    analytic = param.grad.reshape(-1)[index].item()
    flat = param.data.view(-1)
    orig = flat[index].item()
    with torch.no_grad():
        flat[index] = orig + step
        up = fn().item()
        flat[index] = orig - step
        down = fn().item()
        flat[index] = orig
    numeric = (up - down) / (2 * step)
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def check_oracle(instances=10, seed=0):
    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    for _ in range(instances):
        h, w = (int(v) for v in torch.randint(1, 17, (2,), generator=gen))
        c, n, r = (int(torch.randint(1, hi + 1, (1,), generator=gen)) for hi in (4, 4, 3))
        worst = max(worst, oracle_error(*random_instance(gen, h, w, c, n, r)))
    return worst < 1e-5, f"max relative error {worst:.2e}"


def check_delta(seed=0):
    gen = torch.Generator().manual_seed(seed)
    x, d, _ = random_instance(gen, 12, 10, 3, 3, 3, dtype=torch.float32)
    d.scales[0] = torch.zeros_like(d.scales[0])
    d.scales[0][0] = 1.0
    out = varying_filter(x, d, delta_coefficients(1, 3, 3, 12, 10))
    err = (out - x).abs().max().item()
    return err <= 1e-7, f"max deviation {err:.2e}"


def check_gradients(seed=0):
    torch.manual_seed(seed)
    errors = {}
    atoms = KernelDictionary(2, 3, seed=seed).double()
    atom = atoms.atoms[0]
    errors["atom"] = fd_relative_error(lambda: render_atom(atom, 5).pow(2).sum(), atom.hidden[0].weight, 1)
    gen = torch.Generator().manual_seed(seed)
    x, d, coeff = random_instance(gen, 6, 5, 2, 3, 2)
    x.requires_grad_(True)
    coeff.omega.requires_grad_(True)
    errors["filter_omega"] = fd_relative_error(lambda: varying_filter(x, d, coeff).sum(), coeff.omega, 7)
    errors["filter_input"] = fd_relative_error(lambda: varying_filter(x, d, coeff).sum(), x, 11)
    roa = RecurrentOptimizationAttention(4).double()
    f = torch.randn(1, 4, 4, 4, dtype=torch.float64, generator=gen)
    hdn = torch.randn(1, 4, 4, 4, dtype=torch.float64, generator=gen)
    errors["roa"] = fd_relative_error(lambda: roa(f, hdn).pow(2).sum(), roa.qkv_feature.weight, 5)
    a = torch.randn(3, 3, dtype=torch.float64, generator=gen, requires_grad=True)
    b = torch.randn(3, 3, dtype=torch.float64, generator=gen)
    errors["charbonnier"] = fd_relative_error(lambda: charbonnier(a, b), a, 4)
    worst = max(errors.values())
    return worst < 1e-4, ", ".join(f"{k} {v:.1e}" for k, v in errors.items())


def check_metrics(seed=0):
    rng = np.random.default_rng(seed)
    a = rng.random((3, 16, 16))
    gray = np.full((3, 16, 16), 0.5)
    results = [
        psnr_y(a, a) == PSNR_CAP,
        abs(psnr_y(gray, gray + 0.1) - 20.0) < 1e-6,
        ssim(a[0], a[0]) == 1.0,
    ]
    clip = torch.from_numpy(rng.random((3, 3, 16, 16)))
    from .flow import ClassicalFlow
    results.append(tof(clip, clip, ClassicalFlow()) == 0.0)
    return all(results), f"{sum(results)}/{len(results)} metric identities hold"


SUITES = {
    "oracle-equivalence": check_oracle,
    "delta-identity": check_delta,
    "gradients": check_gradients,
    "metrics": check_metrics,
}


def run_selftest(out_dir=None, echo=print):
    ok = True
    for name, suite in SUITES.items():
        passed, detail = suite()
        ok &= passed
        echo(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    if out_dir is not None:
        from pathlib import Path

        Path(out_dir).mkdir(parents=True, exist_ok=True)
        with torch.no_grad():
            dictionary = KernelDictionary(8, 7)()
        path = atoms_to_png_grid(dictionary, Path(out_dir) / "atoms.png")
        echo(f"wrote {path}")
    return ok
