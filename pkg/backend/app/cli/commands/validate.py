import argparse
import json
import logging
from pathlib import Path

from app.core.exceptions import EXIT_OK, EXIT_RUNTIME, ConfigError
from app.services.manifest_service import RunRecorder
from app.services.simulation_service import validate_sample
from app.storage.dataset import load_sample

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("validate", help="Check stored samples against the sample invariants")
    parser.add_argument("--data", required=True, help="Directory of .fnfc samples (searched recursively)")
    parser.add_argument("--out", help="Directory for report.json and the manifest (default: --data)")
    parser.add_argument("--atol", type=float, default=1e-9, help="Absolute tolerance of equality checks")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise ConfigError(f"data directory not found: {data_dir}")
    out_dir = Path(args.out) if args.out else data_dir
    files = sorted(p for p in data_dir.rglob("sample_*.fnfc"))
    with RunRecorder("validate", out_dir, {"atol": args.atol, "data": str(data_dir)}, 0, [data_dir]) as recorder:
        report = {}
        for path in files:
            problems = validate_sample(load_sample(path), atol=args.atol)
            report[str(path.relative_to(data_dir))] = problems
            for problem in problems:
                logger.warning(f"{path.name}: {problem}")
        (out_dir / "report.json").write_text(json.dumps(report, indent=2))
        failed = sum(1 for problems in report.values() if problems)
        logger.info(f"Validated {len(files)} samples, {failed} with problems")
        if failed:
            recorder.manifest.exit_code = EXIT_RUNTIME
            return EXIT_RUNTIME
    return EXIT_OK
