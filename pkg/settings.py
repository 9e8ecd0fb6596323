import json
import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError

from schemas.run_config import RunConfig
from utils.errors import DocumentParseError, MissingArtifactError
from utils.logger_factory import new_logger

# Load environment variables from .env file
load_dotenv()

log = new_logger("settings")


def config_path(explicit: Optional[str] = None) -> Optional[str]:
    """--config wins over CPSOR_CONFIG; neither means built-in defaults."""
    return explicit or os.getenv("CPSOR_CONFIG") or None


def load_run_config(path: Optional[str] = None) -> RunConfig:
    path = config_path(path)
    if path is None:
        return RunConfig()
    file = Path(path)
    if not file.exists():
        raise MissingArtifactError(f"config file not found: {file}")
    try:
        config = RunConfig.model_validate(json.loads(file.read_text()))
    except json.JSONDecodeError as e:
        raise DocumentParseError(f"config file {file} is not valid JSON: {e}")
    except ValidationError as e:
        raise DocumentParseError(f"config file {file}: {e}")
    log.info(f"Loaded run config from {file}")
    return config


def with_overrides(section: BaseModel, **flags) -> BaseModel:
    """Copy of a config section with every flag that was given (not None) applied and re-validated."""
    given = {k: v for k, v in flags.items() if v is not None}
    if not given:
        return section
    try:
        return type(section).model_validate({**section.model_dump(), **given})
    except ValidationError as e:
        raise DocumentParseError(f"invalid option: {e}")
