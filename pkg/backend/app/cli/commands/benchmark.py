import argparse
import logging
from pathlib import Path

from app.cli.common import add_config_args, add_device_arg, load_models, resolve
from app.core.exceptions import EXIT_OK, ConfigError
from app.services import evaluation_service
from app.services.config_service import load_config_file
from app.services.evaluation_service import model_method, noisy_input_method
from app.services.manifest_service import RunRecorder

logger = logging.getLogger(__name__)

SWEEPS = ("dim", "misalignment", "noise")


def register(subparsers) -> None:
    parser = subparsers.add_parser("benchmark", help="Evaluate trained networks on the benchmark protocol")
    add_config_args(parser)
    add_device_arg(parser)
    parser.add_argument("--weights", nargs="+", required=True, help="Checkpoint directories, as PATH or NAME=PATH")
    parser.add_argument("--protocol", help="JSON EvalProtocol file (overrides the config's evaluation section)")
    parser.add_argument("--out", required=True, help="Output directory")
    parser.add_argument("--sweeps", nargs="+", choices=SWEEPS, default=["dim"], help="Sweeps to run")
    parser.add_argument("--n-images", type=int, help="Override evaluation.n_images")
    parser.add_argument("--reference", choices=["noflash", "flash"], help="Reference frame of the evaluation data")
    parser.add_argument("--with-noisy-input", action="store_true", help="Add the noisy no-flash input as a baseline row")
    parser.add_argument(
        "--ablation",
        action="store_true",
        help="Evaluate each checkpoint under its own reference frame and write the ablation table",
    )
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    evaluation = {"n_images": args.n_images, "seed": args.seed, "reference": args.reference}
    if args.protocol:
        flags = {key: value for key, value in evaluation.items() if value is not None}
        evaluation = {**load_config_file(args.protocol), **flags}
    config, _ = resolve(args, {"evaluation": evaluation})
    protocol = config.evaluation
    out_dir = Path(args.out)
    models = load_models(args.weights, args.device)
    names = [name for name, _ in models]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate method names {names}; use NAME=PATH")

    methods = [model_method(name, model) for name, model in models]
    if args.with_noisy_input:
        methods.append(noisy_input_method())
    inputs = [p for p in [args.config, args.protocol] if p] + [path.rpartition("=")[2] for path in args.weights]
    effective = {"evaluation": protocol.model_dump(mode="json"), "weights": args.weights, "sweeps": args.sweeps}
    with RunRecorder("benchmark", out_dir, effective, protocol.seed, inputs):
        if args.ablation:
            settings_by_name = {
                name: (model_method(name, model), model.config.reference) for name, model in models
            }
            rows = evaluation_service.eval_reference_ablation(settings_by_name, protocol)
            evaluation_service.write_ablation(out_dir, rows)
        if "dim" in args.sweeps:
            rows, markdown = evaluation_service.compare_methods(methods, protocol)
            evaluation_service.write_sweep(out_dir, rows)
            logger.info("\n" + markdown)
        if "misalignment" in args.sweeps:
            points = evaluation_service.eval_misalignment(methods, protocol)
            evaluation_service.write_curve(out_dir, points)
        if "noise" in args.sweeps:
            noise_rows = evaluation_service.eval_noise_levels(methods, protocol)
            evaluation_service.write_noise_levels(out_dir, noise_rows)
        if protocol.n_triptychs:
            dim_factor = protocol.misalignment_dim_factor
            evaluation_service.save_triptychs(out_dir / "triptychs", methods, protocol, dim_factor)
    return EXIT_OK
