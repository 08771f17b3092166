import json

import numpy as np
import pytest
import torch

from app.core.exceptions import DegenerateHomographyError, ShapeMismatchError
from app.schemas.imaging import Gamma, Homography, RenderParams
from app.schemas.simulation import NoiseParams, SimulationConfig
from app.services import imaging_service
from app.services.simulation_service import build_homography, sample_homography


def smooth_image(height=64, width=64):
    """Band-limited test image"""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return np.stack([
        0.5 + 0.3 * np.sin(xs / 9.0) * np.cos(ys / 11.0),
        0.4 + 0.2 * np.cos(xs / 13.0 + ys / 17.0),
        0.3 + 0.1 * np.sin((xs + ys) / 10.0),
    ], axis=-1)


def reference_srgb(v):
    """Independent implementation of the sRGB transfer function"""
    v = np.asarray(v, dtype=np.float64)
    out = np.empty_like(v)
    low = v <= 0.0031308
    out[low] = 12.92 * v[low]
    out[~low] = 1.055 * v[~low] ** (1.0 / 2.4) - 0.055
    return out


def test_homography_identity_provenance():
    """Test that zero rotation, unit scale and zero translation give the identity matrix"""
    h = build_homography(64, 64, [0.0, 0.0, 0.0], 1.0, [0.0, 0.0])
    assert h.is_identity
    assert np.array_equal(h.array, np.eye(3))


def test_homography_is_normalized():
    h = Homography(matrix=[[2.0, 0.0, 2.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]])
    assert h.matrix[2][2] == 1.0
    assert h.matrix[0][2] == 1.0


def test_warp_identity_is_bit_exact(rng):
    img = rng.random((16, 24, 3))
    out = imaging_service.warp_image(img, Homography.identity())
    assert np.array_equal(out, img)
    assert out is not img


def test_warp_preserves_constants(rng):
    img = np.full((32, 32, 3), 0.37)
    h = sample_homography(rng, 32, 32, SimulationConfig(crop_size=32), range_scale=3.0)
    out = imaging_service.warp_image(img, h)
    np.testing.assert_allclose(out, img, atol=1e-12)


def test_warp_integer_translation():
    """Test that translating by one pixel shifts the ramp by one column"""
    ramp = np.tile(np.arange(8, dtype=np.float64)[None, :, None], (8, 1, 3))
    out = imaging_service.warp_image(ramp, Homography.translation(1.0, 0.0))
    assert np.array_equal(out[:, 1:], ramp[:, :-1])
    # Edge replication on the uncovered column
    assert np.array_equal(out[:, 0], ramp[:, 0])


def test_warp_composition():
    """Test that warping by h then g matches warping by g∘h on smooth images"""
    img = smooth_image()
    h = build_homography(64, 64, [0.2, -0.1, 0.3], 1.01, [1.5, -0.5])
    g = build_homography(64, 64, [-0.1, 0.2, -0.2], 0.99, [-0.7, 1.2])
    twice = imaging_service.warp_image(imaging_service.warp_image(img, h), g)
    once = imaging_service.warp_image(img, imaging_service.compose_homographies(g, h))
    interior = (slice(8, -8), slice(8, -8))
    assert np.max(np.abs(twice[interior] - once[interior])) <= 0.01


def test_warp_degenerate_homography(rng):
    singular = Homography(matrix=[[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(DegenerateHomographyError, match="degenerate homography"):
        imaging_service.warp_image(rng.random((8, 8, 3)), singular)
    with pytest.raises(DegenerateHomographyError):
        imaging_service.invert_homography(singular)


def test_invert_homography_round_trip():
    h = build_homography(64, 64, [0.3, 0.1, -0.2], 1.02, [2.0, 1.0])
    product = imaging_service.compose_homographies(h, imaging_service.invert_homography(h))
    np.testing.assert_allclose(product.array, np.eye(3), atol=1e-12)


def test_mean_displacement():
    assert imaging_service.mean_displacement(Homography.identity(), 32, 32) == 0.0
    for size in [(8, 8), (31, 17), (440, 440)]:
        assert imaging_service.mean_displacement(Homography.translation(2.0, 0.0), *size) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        imaging_service.mean_displacement(Homography.identity(), 0, 4)


def test_mean_displacement_of_sampled_homographies(rng):
    """Test that default camera shake stays within 20 px mean displacement"""
    config = SimulationConfig()
    for _ in range(50):
        h = sample_homography(rng, 440, 440, config)
        assert 0.0 <= imaging_service.mean_displacement(h, 440, 440) <= 20.0


def test_render_srgb_examples():
    rp = RenderParams()
    assert np.array_equal(imaging_service.render_srgb(np.zeros((4, 4, 3)), rp), np.zeros((4, 4, 3)))
    np.testing.assert_allclose(imaging_service.render_srgb(np.ones((2, 2, 3)), rp), 1.0, atol=1e-12)
    np.testing.assert_allclose(imaging_service.render_srgb(np.full((2, 2, 3), 0.5), rp), 0.7354, atol=1e-4)


def test_render_linear_identity_is_clip(rng):
    img = rng.uniform(-0.5, 1.5, size=(8, 8, 3))
    rp = RenderParams(gamma=Gamma.LINEAR)
    assert np.array_equal(imaging_service.render_srgb(img, rp), np.clip(img, 0.0, 1.0))


def test_render_matches_transfer_function(rng):
    """Test the rendered values against the standard curve at 1000 points"""
    values = rng.random((10, 100, 3))
    values[0, :10] = np.linspace(0.0, 0.004, 10)[:, None]
    out = imaging_service.render_srgb(values, RenderParams())
    np.testing.assert_allclose(out, reference_srgb(values), atol=1e-6)


def test_render_monotone_in_gain(rng):
    img = rng.random((8, 8, 3)) * 0.2
    previous = None
    for gain in [0.5, 1.0, 2.0, 4.0, 8.0]:
        out = imaging_service.render_srgb(img, RenderParams(gain=gain))
        if previous is not None:
            assert np.all(out >= previous)
        previous = out


def test_render_srgb_torch_matches_numpy(rng):
    img = rng.random((16, 16, 3)) * 0.1
    matrix = [[1.6, -0.4, -0.2], [-0.3, 1.5, -0.2], [0.0, -0.5, 1.5]]
    rp = RenderParams(gain=7.5, color_matrix=matrix)
    expected = imaging_service.render_srgb(img, rp)
    x = torch.from_numpy(img.transpose(2, 0, 1)[None].copy())
    out = imaging_service.render_srgb_torch(x, torch.tensor([7.5]), torch.tensor([matrix], dtype=torch.float64))
    np.testing.assert_allclose(out[0].numpy().transpose(1, 2, 0), expected, atol=1e-6)


def test_render_srgb_torch_gradient_is_finite():
    x = torch.zeros(1, 3, 4, 4, dtype=torch.float64, requires_grad=True)
    out = imaging_service.render_srgb_torch(x, torch.ones(1), torch.eye(3)[None])
    out.sum().backward()
    assert torch.all(torch.isfinite(x.grad))


def test_psnr(rng):
    a = rng.random((16, 16, 3)) * 0.8
    assert imaging_service.psnr(a, a) == float("inf")
    assert imaging_service.psnr(a, a + 0.1) == pytest.approx(20.0)
    b = rng.random((16, 16, 3))
    mse = np.mean((a - b) ** 2)
    assert imaging_service.psnr(a, b) == pytest.approx(10 * np.log10(1.0 / mse))
    assert imaging_service.psnr(a, b) == imaging_service.psnr(b, a)


def test_psnr_decreases_with_noise(rng):
    img = smooth_image(32, 32)
    means = []
    for sigma in [0.01, 0.05, 0.1]:
        values = [
            imaging_service.psnr(img, img + sigma * np.random.default_rng(seed).standard_normal(img.shape))
            for seed in range(10)
        ]
        means.append(np.mean(values))
    assert means[0] > means[1] > means[2]


def test_ssim(rng):
    a = smooth_image(32, 32)
    assert imaging_service.ssim(a, a) == pytest.approx(1.0, abs=1e-9)
    assert imaging_service.ssim(np.zeros((32, 32, 3)), np.ones((32, 32, 3))) < 0.01
    noisy = a + 1e-4 * rng.standard_normal(a.shape)
    assert imaging_service.ssim(a, noisy) > 0.99
    b = rng.random(a.shape)
    assert imaging_service.ssim(a, b) == pytest.approx(imaging_service.ssim(b, a), abs=1e-9)


def test_ssim_rejects_small_images():
    with pytest.raises(ShapeMismatchError):
        imaging_service.ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


def test_metrics_reject_mismatched_shapes():
    with pytest.raises(ShapeMismatchError):
        imaging_service.psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


def test_image_roundtrip(tmp_path, rng):
    """Test 16-bit PNG save/load and the JSON sidecar"""
    zeros = np.zeros((8, 8, 3))
    path = imaging_service.save_image(tmp_path / "zeros.png", zeros)
    loaded, _ = imaging_service.load_image(path)
    assert np.array_equal(loaded, zeros)

    ones = np.ones((8, 8, 3))
    loaded, _ = imaging_service.load_image(imaging_service.save_image(tmp_path / "ones.png", ones))
    assert np.array_equal(loaded, ones)

    img = rng.random((8, 8, 3))
    rp = RenderParams(gain=12.5)
    noise = NoiseParams(sigma_r=0.003, sigma_s=0.0002)
    h = Homography.translation(1.5, -0.5)
    path = imaging_service.save_image(tmp_path / "random.png", img, render=rp, noise=noise, homography=h)
    loaded, sidecar = imaging_service.load_image(path)
    assert np.max(np.abs(loaded - img)) <= 1.0 / 65535
    assert sidecar.gain == 12.5
    assert sidecar.sigma_r == 0.003
    assert np.allclose(sidecar.homography_matrix.array, h.array)

    meta = json.loads((tmp_path / "random.json").read_text())
    assert set(meta) == {"gain", "color_matrix", "gamma", "sigma_r", "sigma_s", "homography"}
    assert len(meta["color_matrix"]) == 9


def test_load_image_without_sidecar(tmp_path, rng, caplog):
    path = imaging_service.save_image(tmp_path / "plain.png", rng.random((4, 4, 3)), bit_depth=8)
    path.with_suffix(".json").unlink()
    with caplog.at_level("WARNING"):
        img, sidecar = imaging_service.load_image(path)
    assert img.shape == (4, 4, 3)
    assert sidecar.gain == 1.0
    assert "No sidecar" in caplog.text
    record = caplog.records[-1]
    assert record.msg == f"No sidecar found for {path}, using default render parameters"
    assert not record.args


def test_load_missing_image(tmp_path):
    with pytest.raises(FileNotFoundError):
        imaging_service.load_image(tmp_path / "missing.png")


def test_save_triptych(tmp_path, rng):
    panels = [rng.random((8, 8, 3)), rng.random((8, 8, 3)), rng.random((6, 8, 3))]
    path = imaging_service.save_triptych(tmp_path / "t.png", panels, gap=2)
    img, _ = imaging_service.load_image(path)
    assert img.shape == (8, 3 * 8 + 2 * 2, 3)
