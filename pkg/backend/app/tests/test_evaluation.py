import csv
import json
import math

import numpy as np
import pytest

from app.schemas.evaluation import SweepRow
from app.schemas.simulation import Reference
from app.services import evaluation_service
from app.services.evaluation_service import EvalMethod
from app.services.imaging_service import mean_displacement


def test_oracle_and_noisy_input(tiny_protocol):
    rows = evaluation_service.eval_sweep(
        [evaluation_service.oracle_method(), evaluation_service.noisy_input_method()], tiny_protocol
    )
    assert len(rows) == 4
    by_key = {(row.method, row.dim_factor): row for row in rows}
    for dim_factor in tiny_protocol.dim_factors:
        oracle = by_key[("oracle", dim_factor)]
        noisy = by_key[("noisy_input", dim_factor)]
        assert math.isinf(oracle.psnr) and oracle.psnr > 0
        assert oracle.ssim == pytest.approx(1.0)
        assert np.isfinite(noisy.psnr)
        assert noisy.ssim < 1.0
    # Darker captures are noisier after rendering
    assert by_key[("noisy_input", 50.0)].psnr < by_key[("noisy_input", 12.5)].psnr


def test_eval_samples_are_shared_across_settings(tiny_protocol):
    """Test that every dim factor and warp scale uses the same scene"""
    bright = evaluation_service.eval_sample(tiny_protocol, 0, 12.5)
    dark = evaluation_service.eval_sample(tiny_protocol, 0, 50.0)
    np.testing.assert_allclose(bright.y * 12.5, dark.y * 50.0)
    again = evaluation_service.eval_sample(tiny_protocol, 0, 12.5)
    assert np.array_equal(bright.x_nf, again.x_nf)
    other = evaluation_service.eval_sample(tiny_protocol, 1, 12.5)
    assert not np.array_equal(bright.y, other.y)


def test_zero_displacement_gives_identity(tiny_protocol):
    assert evaluation_service.calibrate_displacement_scale(0.0, tiny_protocol) == 0.0
    sample = evaluation_service.eval_sample(tiny_protocol, 0, 50.0, range_scale=0.0)
    assert sample.homography.is_identity
    assert evaluation_service.average_displacement(tiny_protocol, 0.0) == 0.0


def test_homography_draws_scale_linearly(tiny_protocol):
    one = evaluation_service.eval_homography(tiny_protocol, 0, 1.0)
    two = evaluation_service.eval_homography(tiny_protocol, 0, 2.0)
    assert one != two
    assert mean_displacement(two, 64, 64) > mean_displacement(one, 64, 64)


@pytest.mark.parametrize("target", [2.0, 5.0, 10.0])
def test_calibration_reaches_target(tiny_protocol, target):
    scale = evaluation_service.calibrate_displacement_scale(target, tiny_protocol)
    achieved = evaluation_service.average_displacement(tiny_protocol, scale)
    assert abs(achieved - target) <= 0.1 * target


def test_calibration_rejects_negative_target(tiny_protocol):
    with pytest.raises(ValueError):
        evaluation_service.calibrate_displacement_scale(-1.0, tiny_protocol)


def test_eval_misalignment(tiny_protocol):
    points = evaluation_service.eval_misalignment([evaluation_service.noisy_input_method()], tiny_protocol)
    assert [point.target_displacement for point in points] == [0.0, 2.0]
    assert points[0].achieved_displacement == 0.0
    assert abs(points[1].achieved_displacement - 2.0) <= 0.2
    assert all(np.isfinite(point.psnr) for point in points)


def test_eval_noise_levels(tiny_protocol):
    rows = evaluation_service.eval_noise_levels([evaluation_service.noisy_input_method()], tiny_protocol)
    assert len(rows) == 1
    assert (rows[0].log_sigma_r, rows[0].log_sigma_s) == (-2.8, -4.0)
    assert rows[0].dim_factor == tiny_protocol.noise_level_dim_factor


def test_identical_models_give_identical_rows(tiny_model, tiny_protocol):
    protocol = tiny_protocol.model_copy(update={"dim_factors": [50.0], "n_images": 1})
    methods = [evaluation_service.model_method("a", tiny_model), evaluation_service.model_method("b", tiny_model)]
    rows, markdown = evaluation_service.compare_methods(methods, protocol)
    assert (rows[0].psnr, rows[0].ssim) == (rows[1].psnr, rows[1].ssim)
    # Ties are bold for both methods
    assert markdown.count("**") == 8


def test_parallel_evaluation_matches_serial(tiny_protocol, monkeypatch):
    methods = [evaluation_service.noisy_input_method()]
    serial = evaluation_service.eval_sweep(methods, tiny_protocol)
    monkeypatch.setattr(evaluation_service.settings, "NUM_WORKERS", 2)
    parallel = evaluation_service.eval_sweep(methods, tiny_protocol)
    assert serial == parallel


def test_format_table_marks_best():
    rows = [
        SweepRow(method="ours", dim_factor=50.0, psnr=30.0, ssim=0.9),
        SweepRow(method="kpn", dim_factor=50.0, psnr=28.0, ssim=0.95),
    ]
    markdown = evaluation_service.format_table_markdown(rows)
    lines = markdown.strip().splitlines()
    assert lines[0] == "| Method | PSNR 50x | SSIM 50x |"
    assert lines[2] == "| ours | **30.00** | 0.9000 |"
    assert lines[3] == "| kpn | 28.00 | **0.9500** |"


def test_write_sweep(tmp_path):
    rows = [
        SweepRow(method="ours", dim_factor=25.0, psnr=31.5, ssim=0.91),
        SweepRow(method="oracle", dim_factor=25.0, psnr=float("inf"), ssim=1.0),
    ]
    paths = evaluation_service.write_sweep(tmp_path, rows)
    assert [path.name for path in paths] == ["table.csv", "table.md", "table.json"]
    with open(tmp_path / "table.csv") as fid:
        records = list(csv.DictReader(fid))
    assert records[0]["method"] == "ours"
    assert records[0]["best_psnr"] == "False"
    assert records[1]["best_ssim"] == "True"
    assert "inf" in (tmp_path / "table.md").read_text()
    assert json.loads((tmp_path / "table.json").read_text())[0]["dim_factor"] == 25.0


def test_write_curve_and_noise(tiny_protocol, tmp_path):
    methods = [evaluation_service.noisy_input_method()]
    protocol = tiny_protocol.model_copy(update={"displacement_bins": [0.0], "n_images": 1})
    curve = evaluation_service.write_curve(tmp_path, evaluation_service.eval_misalignment(methods, protocol))
    noise = evaluation_service.write_noise_levels(tmp_path, evaluation_service.eval_noise_levels(methods, protocol))
    with open(curve) as fid:
        header = next(csv.reader(fid))
    assert header == ["method", "target_displacement", "achieved_displacement", "psnr", "ssim"]
    assert noise.name == "noise.csv"


def test_reference_ablation(tiny_protocol, tmp_path):
    oracle = evaluation_service.oracle_method()
    rows = evaluation_service.eval_reference_ablation(
        {"noflash": (oracle, Reference.NOFLASH), "flash": (oracle, Reference.FLASH)},
        tiny_protocol.model_copy(update={"n_images": 1}),
    )
    assert [row.method for row in rows] == ["noflash", "noflash", "flash", "flash"]
    assert [row.reference for row in rows] == [Reference.NOFLASH] * 2 + [Reference.FLASH] * 2
    paths = evaluation_service.write_ablation(tmp_path, rows)
    markdown = paths[1].read_text()
    assert markdown.splitlines()[0] == "| Dim | noflash | flash |"


def test_flash_reference_warps_the_no_flash_capture(tiny_protocol):
    flash = evaluation_service.eval_sample(tiny_protocol, 0, 50.0, reference=Reference.FLASH)
    noflash = evaluation_service.eval_sample(tiny_protocol, 0, 50.0, reference=Reference.NOFLASH)
    assert flash.reference == Reference.FLASH
    # Ground truth stays in the scene frame; only the warped capture changes
    assert np.array_equal(flash.y, noflash.y)
    assert not np.array_equal(flash.clean_f, noflash.clean_f)
    assert not np.array_equal(flash.clean_nf, noflash.clean_nf)


def test_save_triptychs(tiny_protocol, tmp_path):
    method = EvalMethod("noisy", lambda sample: sample.x_nf)
    paths = evaluation_service.save_triptychs(tmp_path, [method], tiny_protocol, 50.0)
    assert len(paths) == 1
    assert paths[0].is_file()
