"""
Episode file format, ingestion/validation and sliding-window sample extraction.
"""
import json
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from schemas.cognitive import CognitiveFrame
from schemas.trajectory import (
    CSV_COLUMNS, DT, PAD_COLUMNS, STATE_COLUMNS, X, Y, Episode, EpisodeSidecar, Sample,
)
from utils.errors import DatasetLoadError, MissingArtifactError
from utils.logger_factory import new_logger
from utils.number_format import EPISODE_DIGITS

log = new_logger("dataset_service")

GRID_TOLERANCE = 1e-6
RANGE_CHECKS = [
    ("v", 0.0, np.inf),
    ("throttle", 0.0, 1.0),
    ("brake", 0.0, 1.0),
]


def steps_for(seconds: float) -> int:
    return int(round(seconds / DT))


class DatasetService:
    """Reads, writes and windows episodes."""

    @staticmethod
    def episode_frame(episode: Episode) -> pd.DataFrame:
        """Long-format table in the exact CSV column order, rows by step then vehicle id."""
        blocks = []
        for vid in episode.vehicle_ids:
            block = pd.DataFrame(episode.tracks[vid], columns=STATE_COLUMNS)
            block.insert(0, "vehicle_id", vid)
            block.insert(0, "t", episode.times)
            block["_step"] = np.arange(episode.n_steps)
            for i, col in enumerate(PAD_COLUMNS):
                block[col] = episode.ego_pad[:, i] if vid == episode.ego_id else np.nan
            blocks.append(block)
        frame = pd.concat(blocks, ignore_index=True)
        frame = frame.sort_values(["_step", "vehicle_id"], kind="mergesort").drop(columns="_step")
        return frame[CSV_COLUMNS].reset_index(drop=True)

    @staticmethod
    def write_episode(episode: Episode, directory) -> Tuple[Path, Path]:
        """
        Write the CSV + JSON pair for one episode.

        Floats are written with 9 significant digits; sidecar keys are sorted so
        reruns produce byte-identical files.
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        csv_path = directory / f"{episode.episode_id}.csv"
        json_path = directory / f"{episode.episode_id}.json"
        DatasetService.episode_frame(episode).to_csv(
            csv_path, index=False, float_format=f"%.{EPISODE_DIGITS}g", lineterminator="\n"
        )
        sidecar = episode.sidecar().model_dump(mode="json")
        json_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
        return csv_path, json_path

    @staticmethod
    def read_episode(csv_path) -> Episode:
        csv_path = Path(csv_path)
        json_path = csv_path.with_suffix(".json")
        if not json_path.exists():
            raise DatasetLoadError("missing JSON sidecar", path=str(json_path))
        try:
            sidecar = EpisodeSidecar.model_validate_json(json_path.read_text())
        except ValidationError as e:
            raise DatasetLoadError(f"invalid sidecar: {e.errors()[0]['msg']}", path=str(json_path))

        try:
            df = pd.read_csv(csv_path, dtype={"vehicle_id": str}, float_precision="round_trip")
        except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise DatasetLoadError(f"unreadable CSV: {e}", path=str(csv_path))

        DatasetService._check_columns(df, csv_path)
        DatasetService._check_values(df, csv_path, sidecar.ego_id)
        times, tracks, pad = DatasetService._assemble(df, csv_path, sidecar)

        try:
            return Episode(
                episode_id=csv_path.stem,
                scenario_id=sidecar.scenario_id,
                ego_id=sidecar.ego_id,
                npc_ids=sidecar.npc_ids,
                times=times,
                tracks=tracks,
                ego_pad=pad,
                sub_style_score=sidecar.sub_style_score,
                seed=sidecar.seed,
                meta=sidecar.meta,
                schema_version=sidecar.schema_version,
            )
        except ValidationError as e:
            raise DatasetLoadError(f"inconsistent episode: {e.errors()[0]['msg']}", path=str(csv_path))

    @staticmethod
    def _check_columns(df: pd.DataFrame, csv_path: Path) -> None:
        missing = [c for c in CSV_COLUMNS if c not in df.columns]
        if missing:
            raise DatasetLoadError(f"missing columns {missing}", path=str(csv_path))
        if list(df.columns) != CSV_COLUMNS:
            raise DatasetLoadError(f"columns out of order: {list(df.columns)}", path=str(csv_path))

    @staticmethod
    def _check_values(df: pd.DataFrame, csv_path: Path, ego_id: str) -> None:
        # Row numbers count data rows from 1 (the header is not a row)
        for col in ["t"] + STATE_COLUMNS + PAD_COLUMNS:
            if not pd.api.types.is_numeric_dtype(df[col]):
                bad = pd.to_numeric(df[col], errors="coerce").isna() & df[col].notna()
                raise DatasetLoadError(f"non-numeric {col}", path=str(csv_path), row=int(np.argmax(bad.values)) + 1)
        for col in ["t"] + STATE_COLUMNS:
            bad = ~np.isfinite(df[col].values)
            if bad.any():
                raise DatasetLoadError(f"{col} missing or non-finite", path=str(csv_path), row=int(np.argmax(bad)) + 1)
        for col, low, high in RANGE_CHECKS:
            values = df[col].values
            bad = (values < low) | (values > high)
            if bad.any():
                raise DatasetLoadError(f"{col} out of range", path=str(csv_path), row=int(np.argmax(bad)) + 1)

        is_ego = (df["vehicle_id"] == ego_id).values
        pad = df[PAD_COLUMNS].values
        for i, col in enumerate(PAD_COLUMNS):
            missing = is_ego & np.isnan(pad[:, i])
            if missing.any():
                raise DatasetLoadError(f"{col} missing for ego", path=str(csv_path), row=int(np.argmax(missing)) + 1)
            stray = ~is_ego & ~np.isnan(pad[:, i])
            if stray.any():
                raise DatasetLoadError(f"{col} set on a non-ego row", path=str(csv_path), row=int(np.argmax(stray)) + 1)
            out = is_ego & ((pad[:, i] < -1.0) | (pad[:, i] > 1.0))
            if out.any():
                raise DatasetLoadError(f"{col} out of range", path=str(csv_path), row=int(np.argmax(out)) + 1)

    @staticmethod
    def _assemble(df: pd.DataFrame, csv_path: Path, sidecar: EpisodeSidecar):
        vehicles = sorted({sidecar.ego_id, *sidecar.npc_ids})
        unknown = sorted(set(df["vehicle_id"]) - set(vehicles))
        if unknown:
            raise DatasetLoadError(f"unknown vehicle ids {unknown}", path=str(csv_path))

        grid = None
        tracks = {}
        pad = None
        for vid in vehicles:
            rows = df.index[df["vehicle_id"] == vid].values
            if len(rows) == 0:
                raise DatasetLoadError(f"vehicle {vid} has no rows", path=str(csv_path))
            t = df["t"].values[rows]
            steps = np.diff(t)
            if len(steps) and np.any(np.abs(steps - DT) > GRID_TOLERANCE):
                bad = int(np.argmax(np.abs(steps - DT) > GRID_TOLERANCE)) + 1
                raise DatasetLoadError(
                    f"non-uniform timestamps for {vid} (expected {DT} s spacing)",
                    path=str(csv_path), row=int(rows[bad]) + 1,
                )
            if grid is None:
                grid = t
            elif len(t) != len(grid) or np.any(np.abs(t - grid) > GRID_TOLERANCE):
                raise DatasetLoadError(f"vehicle {vid} is not on the shared time grid", path=str(csv_path),
                                       row=int(rows[0]) + 1)
            tracks[vid] = df[STATE_COLUMNS].values[rows].astype(float)
            if vid == sidecar.ego_id:
                pad = df[PAD_COLUMNS].values[rows].astype(float)
        return np.asarray(grid, dtype=float), tracks, pad

    @staticmethod
    def load_dataset(path, workers: int = 1) -> List[Episode]:
        """
        Load every episode (CSV with a JSON sidecar) in a directory, sorted by file name.

        Args:
            path: Dataset directory
            workers: Thread count for parsing distinct files

        Returns:
            List of validated episodes
        """
        directory = Path(path)
        if not directory.is_dir():
            raise MissingArtifactError(f"dataset directory not found: {directory}")
        start = time.time()
        csv_files = sorted(directory.glob("*.csv"))
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                episodes = list(pool.map(DatasetService.read_episode, csv_files))
        else:
            episodes = [DatasetService.read_episode(p) for p in csv_files]
        log.info(f"Loaded {len(episodes)} episodes from {directory} in {(time.time() - start) * 1000:.2f}ms")
        return episodes

    @staticmethod
    def window_samples(
        episode: Episode,
        t_p: float,
        t_f: float,
        stride: int,
        frames: Optional[List[CognitiveFrame]] = None,
    ) -> List[Sample]:
        """
        Cut every maximal (history, future) window.

        count = floor((N - H - F) / stride) + 1; sample i starts at step i * stride.
        An episode shorter than one window yields an empty list.
        """
        if stride < 1:
            raise ValueError(f"stride must be >= 1, got {stride}")
        h, f = steps_for(t_p), steps_for(t_f)
        if h < 1 or f < 1:
            raise ValueError(f"history and future must each span at least one step (got {h}, {f})")
        n = episode.n_steps
        if frames is not None and len(frames) != n:
            raise ValueError(f"{len(frames)} cognitive frames for {n} steps in {episode.episode_id}")
        if n < h + f:
            return []

        vehicle_ids = episode.vehicle_ids
        ego_index = vehicle_ids.index(episode.ego_id)
        stacked = np.stack([episode.tracks[vid] for vid in vehicle_ids], axis=1)
        ego_xy = episode.tracks[episode.ego_id][:, [X, Y]]

        samples = []
        for i in range((n - h - f) // stride + 1):
            s = i * stride
            samples.append(Sample(
                episode_id=episode.episode_id,
                scenario_id=episode.scenario_id,
                start_step=s,
                vehicle_ids=vehicle_ids,
                ego_index=ego_index,
                history_times=episode.times[s:s + h],
                history=stacked[s:s + h],
                cognitive=frames[s:s + h] if frames is not None else None,
                future_times=episode.times[s + h:s + h + f],
                future_xy=ego_xy[s + h:s + h + f],
            ))
        return samples
