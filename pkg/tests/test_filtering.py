import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from helpers import central_difference_check
from implicit_vsr.dictionary import MultiScaleDictionary, build_dictionary, init_atoms
from implicit_vsr.errors import ContractViolation, ValidationError
from implicit_vsr.filtering import (
    CoefficientField,
    brute_force_filter,
    delta_coefficients,
    per_pixel_kernel,
    varying_filter,
)

F64 = torch.float64


def random_case(seed, h, w, c, n, r):
    gen = torch.Generator().manual_seed(seed)
    scales = [torch.randn(n, 2 * k + 1, 2 * k + 1, generator=gen, dtype=F64) for k in range(r)]
    omega = torch.randn(1, n, h, w, generator=gen, dtype=F64)
    mu = torch.softmax(torch.randn(1, r, h, w, generator=gen, dtype=F64), dim=1)
    x = torch.rand(1, c, h, w, generator=gen, dtype=F64)
    return x, MultiScaleDictionary(scales), CoefficientField(omega, mu)


def loop_kernel(scales, omega, mu, i, j):
    """Per-pixel kernel by explicit loops over scales, atoms and cells (numpy)."""
    size = max(s.shape[-1] for s in scales)
    k = np.zeros((size, size))
    for r, atoms in enumerate(scales):
        m = atoms.shape[-1]
        off = (size - m) // 2
        for n in range(atoms.shape[0]):
            for a in range(m):
                for b in range(m):
                    k[off + a, off + b] += mu[r, i, j] * omega[n, i, j] * atoms[n, a, b]
    return k


def loop_filter(x, scales, omega, mu):
    """Explicit sum out[i, j] = sum_{dx, dy} k_ij[dx, dy] * x[i - dx, j - dy] with clamped indices."""
    c, h, w = x.shape
    out = np.zeros_like(x)
    for i in range(h):
        for j in range(w):
            k = loop_kernel(scales, omega, mu, i, j)
            half = k.shape[0] // 2
            for a in range(k.shape[0]):
                for b in range(k.shape[1]):
                    si = min(max(i - (a - half), 0), h - 1)
                    sj = min(max(j - (b - half), 0), w - 1)
                    out[:, i, j] += k[a, b] * x[:, si, sj]
    return out


def test_per_pixel_kernel_identity():
    d = build_dictionary(init_atoms(3), 3)
    coeff = delta_coefficients(1, 3, 3, 4, 4)
    k = per_pixel_kernel(d, coeff, 2, 1).detach()
    expected = torch.zeros(5, 5)
    expected[2, 2] = 1
    assert torch.equal(k, expected)


def test_per_pixel_kernel_linear_mix():
    # one atom of ones at each scale, equal scale weights
    d = MultiScaleDictionary([torch.ones(1, 1, 1), torch.ones(1, 3, 3)])
    coeff = CoefficientField(torch.ones(1, 1, 1, 1), torch.full((1, 2, 1, 1), 0.5))
    k = per_pixel_kernel(d, coeff, 0, 0)
    expected = torch.full((3, 3), 0.5)
    expected[1, 1] = 1.0
    assert torch.allclose(k, expected, atol=1e-7)


def test_per_pixel_kernel_matches_loop_oracle():
    _, d, coeff = random_case(3, 4, 4, 1, 2, 2)
    scales = [s.numpy() for s in d.scales]
    for i in range(4):
        for j in range(4):
            k = per_pixel_kernel(d, coeff, i, j).numpy()
            ref = loop_kernel(scales, coeff.omega[0].numpy(), coeff.mu[0].numpy(), i, j)
            np.testing.assert_allclose(k, ref, atol=1e-12)


def test_per_pixel_kernel_out_of_range():
    d = build_dictionary(init_atoms(2), 2)
    with pytest.raises(ValidationError):
        per_pixel_kernel(d, delta_coefficients(1, 2, 2, 3, 3), 3, 0)


def test_filter_delta_identity():
    gen = torch.Generator().manual_seed(0)
    x = torch.rand(2, 3, 9, 7, generator=gen)
    d = build_dictionary(init_atoms(4), 4)
    out = varying_filter(x, d, delta_coefficients(2, 4, 4, 9, 7))
    assert (out - x).abs().max().item() <= 1e-7


def test_filter_constant_image_scales_by_kernel_sum():
    x = torch.full((1, 2, 6, 6), 0.3, dtype=F64)
    d = MultiScaleDictionary([torch.ones(1, 1, 1, dtype=F64), torch.ones(1, 3, 3, dtype=F64)])
    coeff = CoefficientField(torch.ones(1, 1, 6, 6, dtype=F64), torch.full((1, 2, 6, 6), 0.5, dtype=F64))
    out = varying_filter(x, d, coeff)
    # kernel sum = 0.5 * 1 + 0.5 * 9 = 5
    assert torch.allclose(out, torch.full_like(x, 1.5), atol=1e-12)


def test_filter_matches_loop_oracle():
    x, d, coeff = random_case(1, 5, 6, 2, 2, 3)
    ref = loop_filter(x[0].numpy(), [s.numpy() for s in d.scales], coeff.omega[0].numpy(), coeff.mu[0].numpy())
    np.testing.assert_allclose(varying_filter(x, d, coeff)[0].numpy(), ref, atol=1e-10)
    np.testing.assert_allclose(brute_force_filter(x, d, coeff)[0].numpy(), ref, atol=1e-10)


def test_filter_oracle_equivalence_16x16():
    x, d, coeff = random_case(2, 16, 16, 3, 2, 3)
    fast = varying_filter(x, d, coeff)
    slow = brute_force_filter(x, d, coeff)
    assert ((fast - slow).abs().max() / slow.abs().max()).item() < 1e-5


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), h=st.integers(1, 9), w=st.integers(1, 9),
       c=st.integers(1, 4), n=st.integers(1, 4), r=st.integers(1, 3))
def test_filter_oracle_equivalence_property(seed, h, w, c, n, r):
    x, d, coeff = random_case(seed, h, w, c, n, r)
    fast = varying_filter(x, d, coeff)
    slow = brute_force_filter(x, d, coeff)
    assert ((fast - slow).abs().max() / (slow.abs().max() + 1e-12)).item() < 1e-5


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_filter_linear_in_input(seed, a, b):
    x, d, coeff = random_case(seed, 6, 5, 2, 2, 2)
    y = torch.rand(x.shape, generator=torch.Generator().manual_seed(seed + 1), dtype=F64)
    lhs = varying_filter(a * x + b * y, d, coeff)
    rhs = a * varying_filter(x, d, coeff) + b * varying_filter(y, d, coeff)
    assert torch.allclose(lhs, rhs, atol=1e-10)


def test_filter_zero_omega_gives_zero():
    x, d, coeff = random_case(4, 5, 5, 3, 3, 3)
    zero = CoefficientField(torch.zeros_like(coeff.omega), coeff.mu)
    assert torch.equal(varying_filter(x, d, zero), torch.zeros_like(x))


def test_filter_single_pixel_image():
    # replicate padding means the lone pixel is scaled by its kernel sum
    x, d, coeff = random_case(5, 1, 1, 2, 3, 3)
    k = per_pixel_kernel(d, coeff, 0, 0)
    out = varying_filter(x, d, coeff)
    assert torch.allclose(out, x * k.sum(), atol=1e-12)
    assert torch.allclose(brute_force_filter(x, d, coeff), out, atol=1e-12)


def test_filter_is_true_convolution():
    # an off-centre single tap at offset (+1, 0) shifts content down by one row
    atom = torch.zeros(1, 3, 3, dtype=F64)
    atom[0, 2, 1] = 1.0
    d = MultiScaleDictionary([torch.zeros(1, 1, 1, dtype=F64), atom])
    x = torch.arange(16, dtype=F64).reshape(1, 1, 4, 4)
    mu = torch.zeros(1, 2, 4, 4, dtype=F64)
    mu[:, 1] = 1
    out = varying_filter(x, d, CoefficientField(torch.ones(1, 1, 4, 4, dtype=F64), mu))
    expected = torch.cat([x[..., :1, :], x[..., :-1, :]], dim=-2)
    assert torch.equal(out, expected)


@pytest.mark.parametrize("target", ["omega", "mu_logits", "input", "atoms"])
def test_filter_gradients_match_finite_differences(target):
    x, d, coeff = random_case(6, 5, 6, 2, 3, 2)
    logits = torch.log(coeff.mu).clone().requires_grad_(True)
    omega = coeff.omega.clone().requires_grad_(True)
    x = x.clone().requires_grad_(True)
    atoms = [s.clone().requires_grad_(True) for s in d.scales]
    weights = torch.rand(x.shape, generator=torch.Generator().manual_seed(9), dtype=F64)

    def loss():
        field = CoefficientField(omega, torch.softmax(logits, dim=1))
        return (varying_filter(x, MultiScaleDictionary(atoms), field) * weights).sum()

    param = {"omega": omega, "mu_logits": logits, "input": x, "atoms": atoms[1]}[target]
    assert central_difference_check(loss, param, range(0, param.numel(), 7)) < 1e-4


def test_brute_force_gradients_agree_with_fast_path():
    x, d, coeff = random_case(7, 4, 4, 2, 2, 2)
    omega = coeff.omega.clone().requires_grad_(True)
    grads = []
    for fn in (varying_filter, brute_force_filter):
        omega.grad = None
        fn(x, d, CoefficientField(omega, coeff.mu)).pow(2).sum().backward()
        grads.append(omega.grad.clone())
    assert torch.allclose(*grads, atol=1e-10)


def test_rejects_unnormalized_mu():
    x, d, coeff = random_case(8, 4, 4, 1, 2, 2)
    bad = CoefficientField(coeff.omega, coeff.mu * 1.01)
    with pytest.raises(ContractViolation):
        varying_filter(x, d, bad)
    with pytest.raises(ContractViolation):
        brute_force_filter(x, d, bad)


@pytest.mark.parametrize("case", ["omega_size", "mu_scales", "atoms", "rank"])
def test_rejects_shape_mismatch(case):
    x, d, coeff = random_case(9, 4, 4, 1, 2, 2)
    if case == "omega_size":
        coeff = CoefficientField(coeff.omega[..., :3], coeff.mu)
    elif case == "mu_scales":
        coeff = CoefficientField(coeff.omega, torch.full((1, 3, 4, 4), 1 / 3, dtype=F64))
    elif case == "atoms":
        coeff = CoefficientField(coeff.omega[:, :1], coeff.mu)
    else:
        x = x[0]
    with pytest.raises(ValidationError):
        varying_filter(x, d, coeff)
