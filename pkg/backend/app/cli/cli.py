import argparse

from app.cli.commands import benchmark, denoise, kernels, simulate, train, validate
from app.core.config import settings


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fnf", description=settings.PROJECT_NAME)
    parser.add_argument("--log-level", default=settings.LOG_LEVEL, help="Logging level")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # Include all command parsers
    simulate.register(subparsers)
    validate.register(subparsers)
    train.register(subparsers)
    denoise.register(subparsers)
    benchmark.register(subparsers)
    kernels.register(subparsers)
    return parser
