"""
Evaluation of trained predictors and the P / CP / CPSOR ablation harness.
"""
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from schemas.cognitive import CognitiveCodec, CognitiveFrame
from schemas.dbn import DbnModel
from schemas.metrics import MetricReport
from schemas.predictor import VARIANT_DBN, WeightsDocument
from schemas.run_config import AblationConfig, TrainConfig, Variant
from schemas.trajectory import DT, Episode
from services.metrics_service import MetricsService, improvement
from services.predictor_service import PredictorService
from services.training_service import TrainingService
from utils.errors import MissingArtifactError, TrainingError
from utils.logger_factory import new_logger
from utils.number_format import MODEL_DIGITS

log = new_logger("ablation_service")

VARIANT_ORDER = [Variant.P, Variant.CP, Variant.CPSOR]
TABLE_COLUMNS = [
    "variant", "horizon_s", "scenario_id", "n_seeds", "n_samples", "rmse_mean", "rmse_std", "mae_mean",
    "ade_mean", "fde_mean", "fde_std", "rmse_decrease_vs_p", "fde_decrease_vs_p",
]


class AblationResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    reports: List[MetricReport]
    table: pd.DataFrame


def split_episodes(
    episodes: Sequence[Episode], ratios: Sequence[float], seed: int
) -> Tuple[List[Episode], List[Episode], List[Episode]]:
    """
    Train/validation/test split stratified by scenario.

    Within a scenario, episodes are sorted by id and shuffled with `seed`, so the split
    does not depend on file order.
    """
    train, valid, test = [], [], []
    by_scenario: Dict[int, List[Episode]] = {}
    for ep in episodes:
        by_scenario.setdefault(ep.scenario_id, []).append(ep)
    rng = np.random.default_rng(seed)
    for sid in sorted(by_scenario):
        group = sorted(by_scenario[sid], key=lambda e: e.episode_id)
        order = [group[i] for i in rng.permutation(len(group))]
        n = len(order)
        n_train = int(round(ratios[0] * n))
        n_valid = int(round(ratios[1] * n))
        if n >= 3:
            n_train = max(n_train, 1)
            if ratios[1] > 0:
                n_valid = max(n_valid, 1)
            if ratios[2] > 0:
                n_train = min(n_train, n - n_valid - 1)
        n_valid = min(n_valid, n - n_train)
        train += order[:n_train]
        valid += order[n_train:n_train + n_valid]
        test += order[n_train + n_valid:]
    return train, valid, test


class AblationService:

    @staticmethod
    def evaluate(
        doc: WeightsDocument,
        episodes: Sequence[Episode],
        codec: CognitiveCodec,
        stride: int,
        horizons: Sequence[float],
        frames: Optional[Dict[str, List[CognitiveFrame]]] = None,
        models: Optional[Dict[str, DbnModel]] = None,
        seed: Optional[int] = None,
    ) -> List[MetricReport]:
        """Per-scenario reports followed by the pooled report for one trained predictor."""
        config = TrainConfig(
            variant=doc.variant,
            t_p=doc.history_steps * DT,
            t_f=doc.future_steps * DT,
            stride=stride,
        )
        samples = TrainingService.prepare(
            episodes, doc.variant, config, doc.normalizer, doc.d_close, codec, frames, models
        )
        if not samples:
            raise TrainingError("no evaluation windows: episodes are shorter than history plus horizon")
        preds = PredictorService.predict(samples, doc.params, doc.variant, doc.offset_scale)
        truths = np.stack([s.future_xy for s in samples])
        return MetricsService.reports_by_scenario(
            preds, truths, [s.scenario_id for s in samples], doc.variant, horizons, seed
        )

    @staticmethod
    def _run_cell(
        cell: Tuple[int, float, Variant],
        episodes: Sequence[Episode],
        frames: Optional[Dict[str, List[CognitiveFrame]]],
        models: Dict[str, DbnModel],
        codec: CognitiveCodec,
        train_config: TrainConfig,
        ablation: AblationConfig,
        d_close: float,
    ) -> List[MetricReport]:
        seed, horizon, variant = cell
        train, valid, test = split_episodes(episodes, ablation.split, seed)
        config = train_config.model_copy(update={"variant": variant, "t_f": horizon, "seed": seed})
        doc, _ = TrainingService.train(train, valid, variant, config, d_close, codec, frames, models)
        return AblationService.evaluate(doc, test, codec, config.stride, [horizon], frames, models, seed)

    @staticmethod
    def run_ablation(
        episodes: Sequence[Episode],
        codec: CognitiveCodec,
        train_config: TrainConfig,
        ablation: AblationConfig,
        d_close: float,
        frames: Optional[Dict[str, List[CognitiveFrame]]] = None,
        models: Optional[Dict[str, DbnModel]] = None,
        variants: Sequence[Variant] = VARIANT_ORDER,
        workers: int = 1,
    ) -> AblationResult:
        """
        Train every variant at every horizon for every seed on identical splits, then
        evaluate each on its test split.

        Args:
            episodes: Dataset; its order does not matter
            codec: Cognitive node set the frames and models use
            train_config: Hyperparameters shared by all variants (t_f and seed are overridden)
            ablation: Horizons, seeds and split ratios
            d_close: Physical-graph distance cut-off
            frames: Cognitive frames per episode id, needed by CP and CPSOR
            models: DBN models by tag ("ordinary", "sor"), needed by CP and CPSOR
            variants: Subset of variants to run
            workers: Cells trained concurrently

        Returns:
            Every MetricReport and the aggregated comparison table
        """
        models = models or {}
        for variant in variants:
            needed = VARIANT_DBN[variant]
            if needed is not None and needed not in models:
                raise MissingArtifactError(f"variant {variant.value} needs the {needed} DBN")
        start = time.time()
        cells = [(seed, horizon, variant) for seed in ablation.seeds for horizon in ablation.horizons
                 for variant in variants]

        def run(cell):
            return AblationService._run_cell(cell, episodes, frames, models, codec, train_config, ablation, d_close)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outputs = list(pool.map(run, cells))
        else:
            outputs = [run(cell) for cell in cells]
        reports = [r for out in outputs for r in out]
        log.info(f"Ablation over {len(cells)} trainings took {(time.time() - start) * 1000:.2f}ms")
        return AblationResult(reports=reports, table=AblationService.table(reports))

    @staticmethod
    def table(reports: Sequence[MetricReport]) -> pd.DataFrame:
        """One row per (variant, horizon, scenario), aggregated over seeds; pooled reports are left out."""
        records = []
        for r in reports:
            if r.scenario_id is None:
                continue
            for h in r.horizons:
                records.append({
                    "variant": r.variant.value, "horizon_s": h.horizon_s, "scenario_id": r.scenario_id,
                    "seed": r.seed, "n_samples": r.n_samples, "rmse": h.pooled_rmse, "mae": h.mae,
                    "ade": h.ade, "fde": h.fde,
                })
        if not records:
            return pd.DataFrame(columns=TABLE_COLUMNS)
        df = pd.DataFrame(records)
        grouped = df.groupby(["variant", "horizon_s", "scenario_id"], sort=False).agg(
            n_seeds=("seed", "count"),
            n_samples=("n_samples", "sum"),
            rmse_mean=("rmse", "mean"),
            rmse_std=("rmse", lambda s: float(np.std(s.to_numpy()))),
            mae_mean=("mae", "mean"),
            ade_mean=("ade", "mean"),
            fde_mean=("fde", "mean"),
            fde_std=("fde", lambda s: float(np.std(s.to_numpy()))),
        ).reset_index()

        baseline = grouped[grouped["variant"] == Variant.P.value].set_index(["horizon_s", "scenario_id"])
        rmse_dec, fde_dec = [], []
        for row in grouped.itertuples():
            key = (row.horizon_s, row.scenario_id)
            if key in baseline.index:
                base = baseline.loc[key]
                rmse_dec.append(improvement(base["rmse_mean"], row.rmse_mean))
                fde_dec.append(improvement(base["fde_mean"], row.fde_mean))
            else:
                rmse_dec.append(np.nan)
                fde_dec.append(np.nan)
        grouped["rmse_decrease_vs_p"] = rmse_dec
        grouped["fde_decrease_vs_p"] = fde_dec

        rank = {v.value: i for i, v in enumerate(VARIANT_ORDER)}
        grouped["_rank"] = grouped["variant"].map(rank)
        grouped = grouped.sort_values(["_rank", "horizon_s", "scenario_id"]).drop(columns="_rank")
        return grouped[TABLE_COLUMNS].reset_index(drop=True)

    @staticmethod
    def markdown(table: pd.DataFrame) -> str:
        """Scenario x {ADE, FDE} table per horizon plus the relative-improvement sentences."""
        lines = ["# Ablation", ""]
        variants = [v.value for v in VARIANT_ORDER if v.value in set(table["variant"])]
        for horizon in sorted(set(table["horizon_s"])):
            at = table[table["horizon_s"] == horizon]
            lines += [f"## Horizon {horizon:g} s", ""]
            header = "| Scenario | " + " | ".join(f"{v.upper()} ADE | {v.upper()} FDE" for v in variants) + " |"
            lines += [header, "|" + "---|" * (1 + 2 * len(variants))]
            for sid in sorted(set(at["scenario_id"])):
                cells = []
                for v in variants:
                    row = at[(at["variant"] == v) & (at["scenario_id"] == sid)]
                    if row.empty:
                        cells += ["", ""]
                    else:
                        cells += [f"{row['ade_mean'].iloc[0]:.2f}", f"{row['fde_mean'].iloc[0]:.2f}"]
                lines.append(f"| {sid} | " + " | ".join(cells) + " |")
            lines.append("")
            for v in variants:
                if v == Variant.P.value:
                    continue
                for row in at[at["variant"] == v].itertuples():
                    if np.isnan(row.rmse_decrease_vs_p):
                        continue
                    lines.append(
                        f"- {v.upper()} vs P, scenario {row.scenario_id}: RMSE decreased by "
                        f"{row.rmse_decrease_vs_p:.2f}%, FDE decreased by {row.fde_decrease_vs_p:.2f}%"
                    )
            lines.append("")
        return "\n".join(lines).rstrip("\n") + "\n"

    @staticmethod
    def write(result: AblationResult, directory) -> Path:
        """ablation.csv, ablation.md and the per-seed reports in ablation_reports.csv."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        result.table.to_csv(directory / "ablation.csv", index=False, float_format=f"%.{MODEL_DIGITS}g",
                            lineterminator="\n")
        (directory / "ablation.md").write_text(AblationService.markdown(result.table))
        MetricsService.write_reports(result.reports, directory / "ablation_reports.csv")
        log.info(f"Wrote ablation table with {len(result.table)} rows to {directory}")
        return directory
