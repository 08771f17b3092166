from datetime import datetime
from typing import Any, Dict, Optional

from pydantic import BaseModel, Field

__all__ = ["RunManifest"]


class RunManifest(BaseModel):
    """Record of one CLI invocation, written as manifest.json"""
    command: str
    config: Dict[str, Any] = Field(default_factory=dict)
    seed: int
    input_hash: str
    started_at: datetime
    finished_at: Optional[datetime] = None
    exit_code: Optional[int] = None
