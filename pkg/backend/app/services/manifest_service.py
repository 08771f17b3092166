import hashlib
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

from app.core.exceptions import EXIT_OK, exit_code_for
from app.schemas.manifest import RunManifest

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"


def input_hash(config: Dict[str, Any], inputs: Iterable[Union[str, Path]] = ()) -> str:
    """SHA-256 of the canonical config JSON followed by the bytes of every input file"""
    digest = hashlib.sha256(json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8"))
    for path in inputs:
        path = Path(path)
        files = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
        for file in files:
            if file.name == MANIFEST_FILE:
                continue
            digest.update(file.read_bytes())
    return digest.hexdigest()


class RunRecorder:
    """
    Context manager writing ``manifest.json`` for one command.

    The manifest is written on exit whether the command succeeds or fails,
    with the exit code the failure maps to.
    """

    def __init__(
        self,
        command: str,
        out_dir: Union[str, Path],
        config: Dict[str, Any],
        seed: int,
        inputs: Iterable[Union[str, Path]] = (),
    ):
        self.out_dir = Path(out_dir)
        self.manifest = RunManifest(
            command=command,
            config=config,
            seed=seed,
            input_hash=input_hash(config, list(inputs)),
            started_at=datetime.now(timezone.utc),
        )

    def __enter__(self) -> "RunRecorder":
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self

    def __exit__(self, exc_type, exc, traceback) -> bool:
        self.manifest.finished_at = datetime.now(timezone.utc)
        if exc is not None:
            self.manifest.exit_code = exit_code_for(exc)
        elif self.manifest.exit_code is None:
            self.manifest.exit_code = EXIT_OK
        try:
            self.write()
        except OSError as e:
            logger.error(f"Could not write manifest to {self.out_dir}: {e}")
        return False

    @property
    def path(self) -> Path:
        return self.out_dir / MANIFEST_FILE

    def write(self) -> Path:
        self.path.write_text(self.manifest.model_dump_json(indent=2))
        return self.path


def read_manifest(path: Union[str, Path]) -> Optional[RunManifest]:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_FILE
    if not path.is_file():
        return None
    return RunManifest(**json.loads(path.read_text()))
