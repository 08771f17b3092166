import logging
import sys
from typing import List, Optional

from app.cli.cli import build_parser
from app.core.config import settings
from app.core.exceptions import exit_code_for

logger = logging.getLogger("app")


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run the selected command and map failures to exit codes"""
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=args.log_level.upper(),
        format=settings.LOG_FORMAT,
        datefmt=settings.LOG_DATEFMT,
    )

    try:
        return args.handler(args)
    except (ValueError, RuntimeError, OSError) as e:
        code = exit_code_for(e)
        logger.error(f"{args.command} failed: {e}")
        logger.debug("Traceback", exc_info=True)
        return code


if __name__ == "__main__":
    sys.exit(main())
