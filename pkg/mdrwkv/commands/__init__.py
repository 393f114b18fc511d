"""Sub-commands. Each module exposes ``register(subparsers)``; handlers return an exit code."""
import json
from pathlib import Path

from pydantic import ValidationError

from mdrwkv.models.schemas import RunConfig


def describe_error(error: Exception) -> str:
    """One line per failure; validation errors name the offending key."""
    if isinstance(error, ValidationError):
        return "; ".join(
            f"{'.'.join(str(part) for part in item['loc'])}: {item['msg']}" for item in error.errors()
        )
    return str(error)


def load_run_config(path: Path) -> RunConfig:
    """Parse and validate a run config; data paths resolve against the file's directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: invalid JSON ({e})") from e
    return RunConfig.model_validate(raw).resolve_paths(path.parent)
