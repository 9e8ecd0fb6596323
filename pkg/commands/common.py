"""
Helpers shared by the command modules: help texts with effective defaults, list parsing
and loading of the artifacts produced by earlier pipeline steps.
"""
import argparse
from pathlib import Path
from typing import Callable, Dict, List, Optional, Type

from pydantic import BaseModel

from schemas.cognitive import CognitiveCodec, CognitiveFrame, EmoCluster
from schemas.dbn import DbnModel
from schemas.trajectory import Episode
from services.dataset_service import DatasetService
from services.dbn_document_service import DbnDocumentService
from services.discretizer_service import DiscretizerService
from utils.errors import MissingArtifactError

FRAMES_DIR = "frames"
DBN_FILES = {"sor": "sor.dbn", "ordinary": "ordinary.dbn"}


def default_of(model: Type[BaseModel], field: str):
    value = model.model_fields[field].default
    if isinstance(value, list):
        return ",".join(str(getattr(v, "value", v)) for v in value)
    return getattr(value, "value", value)


def described(text: str, model: Type[BaseModel], field: str) -> str:
    return f"{text} (default: {default_of(model, field)})"


def parse_list(cast: Callable) -> Callable[[str], list]:
    """argparse type for comma-separated values."""
    def parse(text: str) -> list:
        try:
            return [cast(part.strip()) for part in text.split(",") if part.strip()]
        except (KeyError, ValueError) as e:
            raise argparse.ArgumentTypeError(f"invalid list {text!r}: {e}")
    return parse


def emotion(text: str) -> EmoCluster:
    by_name = {e.value.lower(): e for e in EmoCluster}
    return by_name[text.lower()]


def load_episodes(dataset: str, workers: int = 1) -> List[Episode]:
    return DatasetService.load_dataset(dataset, workers)


def frames_dir(dataset: str, frames: Optional[str]) -> Path:
    return Path(frames) if frames else Path(dataset) / FRAMES_DIR


def load_frames(dataset: str, frames: Optional[str], codec: CognitiveCodec) -> Dict[str, List[CognitiveFrame]]:
    return DiscretizerService.read_frames(frames_dir(dataset, frames), codec)


def load_models(dbn_dir: Optional[str], tags=("sor", "ordinary"), required: bool = False) -> Dict[str, DbnModel]:
    """DBN models by tag from a learn-dbn output directory; absent files are skipped unless required."""
    models = {}
    if dbn_dir is None:
        if required:
            raise MissingArtifactError("a DBN directory is required (--dbn-dir)")
        return models
    for tag in tags:
        path = Path(dbn_dir) / DBN_FILES[tag]
        if path.exists():
            models[tag] = DbnDocumentService.read(path)
        elif required:
            raise MissingArtifactError(f"DBN document not found: {path}")
    return models
