"""Exception hierarchy shared by services, storage and the CLI.

Services raise these and never exit the process; ``app.main`` maps them to
exit codes (2 for usage/config errors, 3 for runtime failures).
"""


class FlashDenoiseError(Exception):
    """Base class for all errors raised by this package"""


class ConfigError(FlashDenoiseError, ValueError):
    """Invalid configuration value or key"""


class ShapeMismatchError(FlashDenoiseError, ValueError):
    """Arrays that must share dimensions do not"""


class DegenerateHomographyError(FlashDenoiseError, ValueError):
    """Homography matrix is singular"""

    def __init__(self, message: str = "degenerate homography"):
        super().__init__(message)


class NonFiniteLossError(FlashDenoiseError, RuntimeError):
    """Training produced a NaN or infinite loss"""

    def __init__(self, step: int, checkpoint_dir: str = ""):
        self.step = step
        self.checkpoint_dir = checkpoint_dir
        message = f"Non-finite loss at step {step}"
        if checkpoint_dir:
            message += f"; diagnostic checkpoint written to {checkpoint_dir}"
        super().__init__(message)


class CheckpointError(FlashDenoiseError, OSError):
    """Checkpoint or container file is missing or malformed"""


EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


def exit_code_for(error: BaseException) -> int:
    """Process exit code for an error raised by a command"""
    # pydantic's ValidationError is a ValueError
    if isinstance(error, ValueError):
        return EXIT_USAGE
    return EXIT_RUNTIME
