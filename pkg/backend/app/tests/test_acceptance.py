"""
Long training runs on the desk preset. Deselected by default; run with
``pytest -m slow tests/test_acceptance.py``.
"""
import pytest

from app.schemas.network import Variant
from app.services import evaluation_service, training_service
from app.services.config_service import resolve_run_config
from app.services.network_service import create_model

TRAIN_STEPS = 20_000
MARGIN_DB = 0.3


@pytest.fixture(scope="module")
def trained_methods():
    """Ours and both baselines trained with identical desk budgets"""
    methods = {}
    for variant in (Variant.OURS, Variant.SINGLE_IMAGE, Variant.DIRECT_PREDICTION):
        run_config = resolve_run_config(
            "desk", overrides={"network": {"variant": variant.value}, "training": {"max_steps": TRAIN_STEPS, "seed": 0}}
        )
        model = create_model(run_config.network, seed=0)
        train_data, val_data = training_service.make_datasets(run_config.simulation, run_config.training, model)
        training_service.train(model, train_data, val_data, run_config.training)
        methods[variant] = evaluation_service.model_method(variant.value, model)
    return methods


@pytest.fixture(scope="module")
def desk_protocol():
    return resolve_run_config("desk").evaluation.model_copy(update={"n_images": 16})


@pytest.mark.slow
def test_beats_baselines_at_dim_50(trained_methods, desk_protocol):
    protocol = desk_protocol.model_copy(update={"dim_factors": [50.0]})
    rows = evaluation_service.eval_sweep(list(trained_methods.values()), protocol)
    psnr = {row.method: row.psnr for row in rows}
    assert psnr["ours"] >= psnr["single_image"] + MARGIN_DB
    assert psnr["ours"] >= psnr["direct_prediction"] + MARGIN_DB


@pytest.mark.slow
def test_misalignment_lowers_psnr(trained_methods, desk_protocol):
    protocol = desk_protocol.model_copy(update={"displacement_bins": [0.0, 20.0]})
    points = evaluation_service.eval_misalignment([trained_methods[Variant.OURS]], protocol)
    by_target = {point.target_displacement: point.psnr for point in points}
    assert by_target[0.0] > by_target[20.0]
