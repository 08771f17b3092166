"""
Benchmark harness: dimming sweeps, misalignment curves, noise-level sweeps,
method comparison tables and the reference ablation.

A method is any callable mapping a SamplePair to a linear estimate of its
ground truth. Metrics are computed on images rendered with the sample's
RenderParams. Evaluation samples are a pure function of the protocol seed and
the image index, so every method sees the same scenes, noise and warps.
"""
import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.config import settings
from app.models.network import FlashDenoiseNet
from app.schemas.evaluation import CurvePoint, EvalProtocol, NoiseRow, SweepRow
from app.schemas.imaging import Homography, RenderParams
from app.schemas.simulation import NoiseParams, Reference, SimulationConfig
from app.services.imaging_service import LinearImage, mean_displacement, psnr, render_srgb, save_triptych, ssim
from app.services.network_service import run_model
from app.services.simulation_service import SamplePair, load_scene, make_sample, sample_homography, sample_rng

logger = logging.getLogger(__name__)

Denoiser = Callable[[SamplePair], LinearImage]

# Bisection settings for displacement targeting
CALIBRATION_ITERATIONS = 60
CALIBRATION_MAX_SCALE = 1e4


@dataclass
class EvalMethod:
    name: str
    run: Denoiser


def oracle_method(name: str = "oracle") -> EvalMethod:
    """Returns the ground truth (upper bound)"""
    return EvalMethod(name, lambda sample: sample.y.copy())


def noisy_input_method(name: str = "noisy_input") -> EvalMethod:
    """Returns the noisy no-flash input (sanity floor)"""
    return EvalMethod(name, lambda sample: sample.x_nf.copy())


def model_method(name: str, model: FlashDenoiseNet) -> EvalMethod:
    return EvalMethod(name, lambda sample: run_model(model, sample))


# ---------------------------------------------------------------------------
# Evaluation samples
# ---------------------------------------------------------------------------

def _simulation_config(protocol: EvalProtocol, reference: Optional[Reference] = None) -> SimulationConfig:
    return SimulationConfig(crop_size=protocol.crop_size, reference=reference or protocol.reference)


def eval_homography(protocol: EvalProtocol, index: int, range_scale: float = 1.0) -> Homography:
    """Warp of eval image ``index``; draws are linear in range_scale for a fixed index"""
    if range_scale == 0.0:
        return Homography.identity()
    rng = np.random.default_rng(np.random.SeedSequence([protocol.seed, index, 1]))
    size = protocol.crop_size
    return sample_homography(rng, size, size, _simulation_config(protocol), range_scale)


def eval_sample(
    protocol: EvalProtocol,
    index: int,
    dim_factor: float,
    noise: Optional[NoiseParams] = None,
    range_scale: float = 1.0,
    reference: Optional[Reference] = None,
) -> SamplePair:
    """Eval image ``index``: same scene for every dim factor, noise level and warp scale"""
    config = _simulation_config(protocol, reference)
    rng = sample_rng(protocol.seed, index)
    ambient, flash_only, color_matrix = load_scene(config, rng, protocol.crop_size)
    return make_sample(
        ambient,
        flash_only,
        dim_factor,
        noise or protocol.noise,
        eval_homography(protocol, index, range_scale),
        config.reference,
        rng,
        color_matrix=color_matrix,
        flash_gain=config.flash_gain,
    )


def score(estimate: LinearImage, sample: SamplePair) -> Tuple[float, float]:
    """(PSNR, SSIM) between the rendered estimate and the rendered ground truth"""
    rendered = render_srgb(estimate, sample.render)
    target = render_srgb(sample.y, sample.render)
    return psnr(rendered, target), ssim(rendered, target)


def _map(function: Callable, items: Sequence) -> List:
    if settings.NUM_WORKERS > 0:
        with ThreadPoolExecutor(max_workers=settings.NUM_WORKERS) as pool:
            return list(pool.map(function, items))
    return [function(item) for item in items]


def _evaluate(methods: Sequence[EvalMethod], make: Callable[[int], SamplePair], n_images: int) -> Dict[str, Tuple[float, float]]:
    """Mean (PSNR, SSIM) per method over n_images samples"""

    def per_image(index: int) -> List[Tuple[float, float]]:
        sample = make(index)
        return [score(method.run(sample), sample) for method in methods]

    results = _map(per_image, range(n_images))
    means = {}
    for column, method in enumerate(methods):
        values = np.asarray([row[column] for row in results], dtype=np.float64)
        means[method.name] = (float(np.mean(values[:, 0])), float(np.mean(values[:, 1])))
    return means


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def eval_sweep(methods: Sequence[EvalMethod], protocol: EvalProtocol, reference: Optional[Reference] = None) -> List[SweepRow]:
    """Mean PSNR/SSIM per method and dimming factor at the protocol's fixed noise level"""
    reference = reference or protocol.reference
    rows = []
    for dim_factor in protocol.dim_factors:
        means = _evaluate(
            methods,
            lambda index: eval_sample(protocol, index, dim_factor, reference=reference),
            protocol.n_images,
        )
        for method in methods:
            value_psnr, value_ssim = means[method.name]
            rows.append(SweepRow(method=method.name, dim_factor=dim_factor, psnr=value_psnr, ssim=value_ssim, reference=reference))
            logger.info(f"{method.name} @ dim {dim_factor:g}: PSNR {value_psnr:.2f} dB, SSIM {value_ssim:.4f}")
    return rows


def average_displacement(protocol: EvalProtocol, range_scale: float) -> float:
    size = protocol.crop_size
    return float(np.mean([
        mean_displacement(eval_homography(protocol, index, range_scale), size, size)
        for index in range(protocol.n_images)
    ]))


def calibrate_displacement_scale(target: float, protocol: EvalProtocol, rtol: float = 0.01) -> float:
    """
    Range scale at which the eval homographies have the target mean displacement.

    Bisection on the average mean displacement of the protocol's own draws;
    target 0 gives scale 0 (identity warps).
    """
    if target < 0:
        raise ValueError("target displacement must be >= 0")
    if target == 0:
        return 0.0
    low, high = 0.0, 1.0
    while average_displacement(protocol, high) < target:
        high *= 2.0
        if high > CALIBRATION_MAX_SCALE:
            raise ValueError(f"cannot reach a mean displacement of {target} px")
    for _ in range(CALIBRATION_ITERATIONS):
        middle = 0.5 * (low + high)
        achieved = average_displacement(protocol, middle)
        if abs(achieved - target) <= rtol * target:
            return middle
        if achieved < target:
            low = middle
        else:
            high = middle
    return 0.5 * (low + high)


def eval_misalignment(methods: Sequence[EvalMethod], protocol: EvalProtocol) -> List[CurvePoint]:
    """PSNR/SSIM as a function of mean displacement at the misalignment dim factor"""
    points = []
    for target in protocol.displacement_bins:
        scale = calibrate_displacement_scale(target, protocol)
        achieved = average_displacement(protocol, scale)
        means = _evaluate(
            methods,
            lambda index: eval_sample(protocol, index, protocol.misalignment_dim_factor, range_scale=scale),
            protocol.n_images,
        )
        for method in methods:
            value_psnr, value_ssim = means[method.name]
            points.append(CurvePoint(
                method=method.name,
                target_displacement=target,
                achieved_displacement=achieved,
                psnr=value_psnr,
                ssim=value_ssim,
            ))
        logger.info(f"Displacement bin {target:g} px (achieved {achieved:.2f} px, scale {scale:.4f}) done")
    return points


def eval_noise_levels(methods: Sequence[EvalMethod], protocol: EvalProtocol) -> List[NoiseRow]:
    """PSNR/SSIM per method over the protocol's additional noise levels"""
    rows = []
    for log_r, log_s in protocol.noise_levels:
        noise = NoiseParams.from_log10(log_r, log_s)
        means = _evaluate(
            methods,
            lambda index: eval_sample(protocol, index, protocol.noise_level_dim_factor, noise=noise),
            protocol.n_images,
        )
        for method in methods:
            value_psnr, value_ssim = means[method.name]
            rows.append(NoiseRow(
                method=method.name,
                log_sigma_r=log_r,
                log_sigma_s=log_s,
                dim_factor=protocol.noise_level_dim_factor,
                psnr=value_psnr,
                ssim=value_ssim,
            ))
    return rows


def eval_reference_ablation(
    settings_by_name: Dict[str, Tuple[EvalMethod, Reference]],
    protocol: EvalProtocol,
) -> List[SweepRow]:
    """
    Sweep each (method, reference) setting under its own reference frame.

    Typical settings are a no-flash-reference model, a flash-reference model
    and optionally a no-flash-reference model trained without B kernels.
    """
    rows = []
    for name, (method, reference) in settings_by_name.items():
        renamed = EvalMethod(name, method.run)
        rows.extend(eval_sweep([renamed], protocol, reference=reference))
    return rows


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

def compare_methods(methods: Sequence[EvalMethod], protocol: EvalProtocol) -> Tuple[List[SweepRow], str]:
    """Sweep every method and format the comparison table (best per column in bold)"""
    rows = eval_sweep(methods, protocol)
    return rows, format_table_markdown(rows)


def best_by_column(rows: Sequence[SweepRow]) -> Dict[Tuple[float, str], float]:
    """Best PSNR and SSIM per dim factor, keyed by (dim_factor, metric)"""
    best: Dict[Tuple[float, str], float] = {}
    for row in rows:
        for metric in ("psnr", "ssim"):
            value = getattr(row, metric)
            key = (row.dim_factor, metric)
            if key not in best or value > best[key]:
                best[key] = value
    return best


def _fmt(value: float, digits: int) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.{digits}f}"


def format_table_markdown(rows: Sequence[SweepRow]) -> str:
    """One row per method, a PSNR and an SSIM column per dim factor"""
    dims = list(dict.fromkeys(row.dim_factor for row in rows))
    methods = list(dict.fromkeys(row.method for row in rows))
    by_key = {(row.method, row.dim_factor): row for row in rows}
    best = best_by_column(rows)

    header = ["Method"] + [f"{label} {dim:g}x" for dim in dims for label in ("PSNR", "SSIM")]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for method in methods:
        cells = [method]
        for dim in dims:
            row = by_key.get((method, dim))
            for metric, digits in (("psnr", 2), ("ssim", 4)):
                if row is None:
                    cells.append("")
                    continue
                text = _fmt(getattr(row, metric), digits)
                if getattr(row, metric) == best[(dim, metric)]:
                    text = f"**{text}**"
                cells.append(text)
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def format_ablation_markdown(rows: Sequence[SweepRow]) -> str:
    """One column per setting, one row per dim factor (PSNR / SSIM)"""
    names = list(dict.fromkeys(row.method for row in rows))
    dims = list(dict.fromkeys(row.dim_factor for row in rows))
    by_key = {(row.method, row.dim_factor): row for row in rows}
    lines = ["| Dim | " + " | ".join(names) + " |", "|" + "---|" * (len(names) + 1)]
    for dim in dims:
        cells = [f"{dim:g}x"]
        for name in names:
            row = by_key.get((name, dim))
            cells.append("" if row is None else f"{_fmt(row.psnr, 2)} / {_fmt(row.ssim, 4)}")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def _write_csv(path: Path, rows: Sequence[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fid:
        if rows:
            writer = csv.DictWriter(fid, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    return path


def write_sweep(out_dir: Union[str, Path], rows: Sequence[SweepRow], stem: str = "table") -> List[Path]:
    """Write ``{stem}.csv``, ``{stem}.md`` and ``{stem}.json``"""
    out_dir = Path(out_dir)
    best = best_by_column(rows)
    records = []
    for row in rows:
        record = row.model_dump(mode="json")
        record["best_psnr"] = row.psnr == best[(row.dim_factor, "psnr")]
        record["best_ssim"] = row.ssim == best[(row.dim_factor, "ssim")]
        records.append(record)
    paths = [_write_csv(out_dir / f"{stem}.csv", records)]
    markdown = format_table_markdown(rows)
    (out_dir / f"{stem}.md").write_text(markdown)
    (out_dir / f"{stem}.json").write_text(json.dumps(records, indent=2))
    paths += [out_dir / f"{stem}.md", out_dir / f"{stem}.json"]
    return paths


def write_curve(out_dir: Union[str, Path], points: Sequence[CurvePoint]) -> Path:
    return _write_csv(Path(out_dir) / "curve.csv", [point.model_dump(mode="json") for point in points])


def write_noise_levels(out_dir: Union[str, Path], rows: Sequence[NoiseRow]) -> Path:
    return _write_csv(Path(out_dir) / "noise.csv", [row.model_dump(mode="json") for row in rows])


def write_ablation(out_dir: Union[str, Path], rows: Sequence[SweepRow]) -> List[Path]:
    out_dir = Path(out_dir)
    paths = [_write_csv(out_dir / "ablation.csv", [row.model_dump(mode="json") for row in rows])]
    (out_dir / "ablation.md").write_text(format_ablation_markdown(rows))
    paths.append(out_dir / "ablation.md")
    return paths


def save_triptychs(out_dir: Union[str, Path], methods: Sequence[EvalMethod], protocol: EvalProtocol, dim_factor: float) -> List[Path]:
    """
    Per-image panels: no-flash input, flash input, each method's output and the
    ground truth. The flash input is rendered without the dimming gain.
    """
    out_dir = Path(out_dir)
    paths = []
    for index in range(min(protocol.n_triptychs, protocol.n_images)):
        sample = eval_sample(protocol, index, dim_factor)
        flash_render = RenderParams(gain=1.0, color_matrix=sample.render.color_matrix, gamma=sample.render.gamma)
        panels = [render_srgb(sample.x_nf, sample.render), render_srgb(sample.x_f, flash_render)]
        panels += [render_srgb(method.run(sample), sample.render) for method in methods]
        panels.append(render_srgb(sample.y, sample.render))
        paths.append(save_triptych(out_dir / f"triptych_{index:03d}_dim{dim_factor:g}.png", panels))
    return paths
