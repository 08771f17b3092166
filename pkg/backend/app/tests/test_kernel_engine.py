import numpy as np
import pytest
import torch
import torch.nn.functional as F

from app.core.exceptions import ShapeMismatchError
from app.services import kernel_service
from app.services.kernel_service import KernelBasis


def random_basis(generator, batch, J, K, d, dtype=torch.float64, use_b=True):
    a = torch.randn(batch, J, 3, K, K, generator=generator, dtype=dtype)
    b = torch.randn(batch, J, 3, K, K, generator=generator, dtype=dtype)
    return KernelBasis(a=a, b=b, d=d, use_b=use_b)


def delta_basis(J, K, d, dtype=torch.float64):
    """Basis whose first A kernel is a centered delta and everything else is zero"""
    a = torch.zeros(1, J, 3, K, K, dtype=dtype)
    a[0, 0, :, K // 2, K // 2] = 1.0
    return KernelBasis(a=a, b=torch.zeros_like(a), d=d)


def one_hot_coeffs(J, height, width, dtype=torch.float64):
    coeffs = torch.zeros(1, J, height, width, dtype=dtype)
    coeffs[:, 0] = 1.0
    return coeffs


def bilinear_reference(b, d):
    """Align-corners bilinear upsampling of K x K kernels through torch's own resampler"""
    K = b.shape[-1]
    E = (K - 1) * d + 1
    flat = b.reshape(-1, 1, K, K)
    out = F.interpolate(flat, size=(E, E), mode="bilinear", align_corners=True)
    return out.reshape(*b.shape[:-2], E, E)


def test_footprint():
    basis = KernelBasis(a=torch.zeros(1, 2, 3, 15, 15), b=torch.zeros(1, 2, 3, 15, 15), d=4)
    assert basis.footprint == 57
    assert kernel_service.effective_kernel(basis, 0).shape == (1, 3, 57, 57)


def test_upsample_kernel_examples():
    b = torch.zeros(3, 3, dtype=torch.float64)
    b[1, 1] = 1.0
    up = kernel_service.upsample_kernel(b, 2)
    assert up.shape == (5, 5)
    assert up[2, 2] == 1.0
    assert up[2, 1] == pytest.approx(0.5)
    assert up[1, 1] == pytest.approx(0.25)
    assert up[0, 0] == 0.0
    assert torch.equal(kernel_service.upsample_kernel(b, 1), b)


def test_upsample_kernel_matches_bilinear_resampling():
    generator = torch.Generator().manual_seed(0)
    for K, d in [(3, 2), (5, 4), (7, 3)]:
        b = torch.randn(2, 3, K, K, generator=generator, dtype=torch.float64)
        up = kernel_service.upsample_kernel(b, d)
        torch.testing.assert_close(up, bilinear_reference(b, d), atol=1e-12, rtol=0)
        # Original taps are kept at stride d
        assert torch.equal(up[..., ::d, ::d], b)


def test_upsample_kernel_rejects_even_size():
    with pytest.raises(ShapeMismatchError):
        kernel_service.upsample_kernel(torch.zeros(4, 4), 2)


def test_effective_kernel_without_b():
    generator = torch.Generator().manual_seed(1)
    basis = random_basis(generator, 1, 2, 3, 2, use_b=False)
    kernel = kernel_service.effective_kernel(basis, 1)
    assert kernel.shape == (1, 3, 5, 5)
    torch.testing.assert_close(kernel[..., 1:4, 1:4], basis.a[:, 1])
    assert torch.all(kernel[..., 0, :] == 0) and torch.all(kernel[..., :, 0] == 0)


def test_impulse_response_support():
    """Test that the response to an impulse is exactly the footprint-sized kernel"""
    K, d = 5, 3
    E = (K - 1) * d + 1
    generator = torch.Generator().manual_seed(2)
    basis = random_basis(generator, 1, 1, K, d)
    size = 41
    x = torch.zeros(1, 3, size, size, dtype=torch.float64)
    x[..., size // 2, size // 2] = 1.0
    coeffs = torch.ones(1, 1, size, size, dtype=torch.float64)
    response = kernel_service.filter_fast(x, basis, coeffs)
    kernel = kernel_service.effective_kernel(basis, 0)[0]
    radius = E // 2
    window = response[0, :, size // 2 - radius: size // 2 + radius + 1, size // 2 - radius: size // 2 + radius + 1]
    # Correlation with an impulse yields the kernel flipped about its center
    torch.testing.assert_close(window, kernel.flip(-1, -2), atol=1e-12, rtol=0)
    outside = response.clone()
    outside[..., size // 2 - radius: size // 2 + radius + 1, size // 2 - radius: size // 2 + radius + 1] = 0
    assert torch.all(outside == 0)


def test_delta_basis_is_identity():
    x = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    basis = delta_basis(3, 5, 2)
    coeffs = one_hot_coeffs(3, 16, 16)
    torch.testing.assert_close(kernel_service.filter_direct(x, basis, coeffs), x)
    torch.testing.assert_close(kernel_service.filter_fast(x, basis, coeffs), x)


def test_zero_coefficients_give_zero_output():
    generator = torch.Generator().manual_seed(3)
    basis = random_basis(generator, 1, 4, 5, 2)
    x = torch.rand(1, 3, 16, 16, dtype=torch.float64)
    coeffs = torch.zeros(1, 4, 16, 16, dtype=torch.float64)
    assert torch.all(kernel_service.filter_fast(x, basis, coeffs) == 0)


def test_filter_is_linear_in_coefficients():
    generator = torch.Generator().manual_seed(4)
    basis = random_basis(generator, 1, 4, 3, 2)
    x = torch.rand(1, 3, 16, 16, dtype=torch.float64, generator=generator)
    c1 = torch.randn(1, 4, 16, 16, dtype=torch.float64, generator=generator)
    c2 = torch.randn(1, 4, 16, 16, dtype=torch.float64, generator=generator)
    combined = kernel_service.filter_fast(x, basis, 2.0 * c1 - 0.5 * c2)
    separate = 2.0 * kernel_service.filter_fast(x, basis, c1) - 0.5 * kernel_service.filter_fast(x, basis, c2)
    torch.testing.assert_close(combined, separate)


def relative_error(a, b):
    return float((a - b).abs().max() / b.abs().max().clamp(min=1e-30))


@pytest.mark.parametrize("dtype, tolerance", [(torch.float64, 1e-10), (torch.float32, 1e-4)])
def test_filter_fast_matches_direct(dtype, tolerance):
    """Test the two-scale fast path against direct convolution on random instances"""
    generator = torch.Generator().manual_seed(5)
    configurations = [(J, K, d) for J in (1, 4, 8) for K in (3, 5) for d in (1, 2, 4)]
    for instance in range(50):
        J, K, d = configurations[instance % len(configurations)]
        basis = random_basis(generator, 1, J, K, d, dtype=dtype)
        x = torch.rand(1, 3, 64, 64, generator=generator, dtype=dtype)
        coeffs = torch.randn(1, J, 64, 64, generator=generator, dtype=dtype)
        fast = kernel_service.filter_fast(x, basis, coeffs)
        direct = kernel_service.filter_direct(x, basis, coeffs)
        assert relative_error(fast, direct) <= tolerance, (J, K, d)


def test_filter_fast_matches_direct_batched_without_b():
    generator = torch.Generator().manual_seed(6)
    basis = random_basis(generator, 2, 3, 5, 2, use_b=False)
    x = torch.rand(2, 3, 32, 32, generator=generator, dtype=torch.float64)
    coeffs = torch.randn(2, 3, 32, 32, generator=generator, dtype=torch.float64)
    torch.testing.assert_close(
        kernel_service.filter_fast(x, basis, coeffs), kernel_service.filter_direct(x, basis, coeffs)
    )


def test_filter_direct_matches_per_pixel_kernels():
    """Test direct filtering against an explicit per-pixel sum with kernel_at_pixel"""
    generator = torch.Generator().manual_seed(7)
    basis = random_basis(generator, 1, 2, 3, 2)
    x = torch.rand(1, 3, 12, 12, generator=generator, dtype=torch.float64)
    coeffs = torch.randn(1, 2, 12, 12, generator=generator, dtype=torch.float64)
    out = kernel_service.filter_direct(x, basis, coeffs)
    padded = F.pad(x, (2, 2, 2, 2))
    for row, col in [(0, 0), (5, 7), (11, 3)]:
        kernel = kernel_service.kernel_at_pixel(basis, coeffs, row, col)
        expected = (padded[0, :, row: row + 5, col: col + 5] * kernel).sum(dim=(-1, -2))
        torch.testing.assert_close(out[0, :, row, col], expected)


def test_filter_fast_gradcheck():
    generator = torch.Generator().manual_seed(8)
    a = torch.randn(1, 2, 3, 3, 3, generator=generator, dtype=torch.float64, requires_grad=True)
    b = torch.randn(1, 2, 3, 3, 3, generator=generator, dtype=torch.float64, requires_grad=True)
    x = torch.rand(1, 3, 8, 8, generator=generator, dtype=torch.float64, requires_grad=True)
    coeffs = torch.randn(1, 2, 8, 8, generator=generator, dtype=torch.float64, requires_grad=True)

    def run(x, a, b, coeffs):
        return kernel_service.filter_fast(x, KernelBasis(a=a, b=b, d=2), coeffs)

    assert torch.autograd.gradcheck(run, (x, a, b, coeffs))


def test_shape_errors():
    basis = delta_basis(2, 3, 2)
    x = torch.rand(1, 3, 8, 8, dtype=torch.float64)
    with pytest.raises(ShapeMismatchError):
        kernel_service.filter_direct(x, basis, torch.zeros(1, 3, 8, 8, dtype=torch.float64))
    with pytest.raises(ShapeMismatchError):
        kernel_service.filter_fast(x, basis, torch.zeros(1, 2, 8, 9, dtype=torch.float64))
    with pytest.raises(ShapeMismatchError):
        KernelBasis(a=torch.zeros(1, 2, 3, 4, 4), b=torch.zeros(1, 2, 3, 4, 4), d=2)
    with pytest.raises(ValueError):
        KernelBasis(a=torch.zeros(1, 2, 3, 3, 3), b=torch.zeros(1, 2, 3, 3, 3), d=0)


def test_apply_scale_map():
    f = torch.rand(1, 3, 8, 8)
    ones = torch.ones_like(f)
    assert torch.equal(kernel_service.apply_scale_map(f, ones), f)
    assert torch.all(kernel_service.apply_scale_map(f, torch.zeros_like(f)) == 0)
    with pytest.raises(ShapeMismatchError):
        kernel_service.apply_scale_map(f, torch.ones(1, 3, 8, 7))


def test_unbatched_basis_is_promoted():
    basis = KernelBasis(a=torch.zeros(2, 3, 5, 5), b=torch.zeros(2, 3, 5, 5), d=2)
    assert basis.a.shape == (1, 2, 3, 5, 5)
    assert basis.J == 2 and basis.K == 5


def test_filter_image_on_arrays(rng):
    """Test the H x W x 3 wrapper against the batched tensor path"""
    a = rng.standard_normal((2, 3, 3, 3))
    b = rng.standard_normal((2, 3, 3, 3))
    x = rng.random((16, 16, 3))
    coeffs = rng.standard_normal((16, 16, 2))
    scale = rng.random((16, 16, 3))
    out = kernel_service.filter_image(x, a, b, coeffs, d=2, scale_map=scale)
    basis = KernelBasis(a=torch.from_numpy(a), b=torch.from_numpy(b), d=2)
    expected = kernel_service.filter_direct(
        torch.from_numpy(x.transpose(2, 0, 1)).unsqueeze(0),
        basis,
        torch.from_numpy(coeffs.transpose(2, 0, 1)).unsqueeze(0),
    )[0].numpy().transpose(1, 2, 0) * scale
    assert out.shape == (16, 16, 3)
    np.testing.assert_allclose(out, expected, atol=1e-10)
    with pytest.raises(ShapeMismatchError):
        kernel_service.filter_image(x[..., :2], a, b, coeffs, d=2)
