"""
Displacement metrics: per-step RMSE, MAE, ADE and FDE over (x, y) positions.
"""
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from schemas.metrics import HorizonMetrics, MetricReport
from schemas.run_config import Variant
from services.dataset_service import steps_for
from utils.errors import DocumentParseError, MissingArtifactError, ShapeError
from utils.logger_factory import new_logger
from utils.number_format import MODEL_DIGITS, format_row

log = new_logger("metrics_service")

REPORT_COLUMNS = [
    "variant", "scenario_id", "seed", "horizon_s", "n_samples", "mae", "ade", "fde", "pooled_rmse", "rmse_per_step",
]


def _errors(preds, truths) -> np.ndarray:
    """Euclidean position error per (sample, step)."""
    preds, truths = np.asarray(preds, dtype=float), np.asarray(truths, dtype=float)
    if preds.shape != truths.shape:
        raise ShapeError(f"prediction shape {preds.shape} differs from truth shape {truths.shape}")
    if preds.ndim != 3 or preds.shape[2] != 2:
        raise ShapeError(f"expected (n, T, 2) positions, got {preds.shape}")
    if preds.shape[0] < 1 or preds.shape[1] < 1:
        raise ShapeError("metrics need at least one sample and one step")
    return np.linalg.norm(preds - truths, axis=2)


def rmse_per_step(preds, truths) -> np.ndarray:
    return np.sqrt((_errors(preds, truths) ** 2).mean(axis=0))


def mae(preds, truths) -> float:
    return float(_errors(preds, truths).mean())


def pooled_rmse(preds, truths) -> float:
    return float(np.sqrt((_errors(preds, truths) ** 2).mean()))


def ade(rmse: Sequence[float]) -> float:
    rmse = np.asarray(rmse, dtype=float)
    if rmse.size == 0:
        raise ShapeError("ade of an empty RMSE vector")
    return float(rmse.mean())


def fde(rmse: Sequence[float]) -> float:
    rmse = np.asarray(rmse, dtype=float)
    if rmse.size == 0:
        raise ShapeError("fde of an empty RMSE vector")
    return float(rmse[-1])


def improvement(baseline: float, value: float) -> float:
    """Percentage decrease of `value` relative to `baseline`."""
    if baseline == 0:
        return 0.0
    return 100.0 * (baseline - value) / baseline


class MetricsService:

    @staticmethod
    def horizon_metrics(preds, truths, horizon_s: float) -> HorizonMetrics:
        """Metrics over the first horizon_s seconds of each predicted trajectory."""
        steps = steps_for(horizon_s)
        preds, truths = np.asarray(preds, dtype=float), np.asarray(truths, dtype=float)
        if steps < 1 or steps > preds.shape[1]:
            raise ShapeError(f"horizon {horizon_s} s needs {steps} steps, predictions have {preds.shape[1]}")
        p, t = preds[:, :steps], truths[:, :steps]
        rmse = rmse_per_step(p, t)
        return HorizonMetrics(
            horizon_s=horizon_s,
            rmse_per_step=rmse.tolist(),
            mae=mae(p, t),
            ade=ade(rmse),
            fde=fde(rmse),
            pooled_rmse=pooled_rmse(p, t),
        )

    @staticmethod
    def report(
        preds,
        truths,
        variant: Variant,
        horizons: Sequence[float],
        scenario_id: Optional[int] = None,
        seed: Optional[int] = None,
    ) -> MetricReport:
        return MetricReport(
            variant=variant,
            scenario_id=scenario_id,
            n_samples=len(preds),
            seed=seed,
            horizons=[MetricsService.horizon_metrics(preds, truths, h) for h in horizons],
        )

    @staticmethod
    def reports_by_scenario(
        preds: np.ndarray,
        truths: np.ndarray,
        scenario_ids: Sequence[int],
        variant: Variant,
        horizons: Sequence[float],
        seed: Optional[int] = None,
    ) -> List[MetricReport]:
        """One report per scenario present, in ascending scenario order, then the pooled report."""
        scenario_ids = np.asarray(scenario_ids)
        reports = []
        for sid in sorted(set(scenario_ids.tolist())):
            mask = scenario_ids == sid
            reports.append(MetricsService.report(preds[mask], truths[mask], variant, horizons, int(sid), seed))
        reports.append(MetricsService.report(preds, truths, variant, horizons, None, seed))
        return reports

    @staticmethod
    def to_dataframe(reports: Sequence[MetricReport]) -> pd.DataFrame:
        rows = []
        for r in reports:
            for h in r.horizons:
                rows.append({
                    "variant": r.variant.value,
                    "scenario_id": "all" if r.scenario_id is None else str(r.scenario_id),
                    "seed": "" if r.seed is None else str(r.seed),
                    "horizon_s": h.horizon_s,
                    "n_samples": r.n_samples,
                    "mae": h.mae,
                    "ade": h.ade,
                    "fde": h.fde,
                    "pooled_rmse": h.pooled_rmse,
                    "rmse_per_step": format_row(h.rmse_per_step, MODEL_DIGITS),
                })
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)

    @staticmethod
    def write_reports(reports: Sequence[MetricReport], path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        MetricsService.to_dataframe(reports).to_csv(
            path, index=False, float_format=f"%.{MODEL_DIGITS}g", lineterminator="\n"
        )
        log.info(f"Wrote {len(reports)} metric reports to {path}")
        return path

    @staticmethod
    def read_reports(path) -> List[MetricReport]:
        """Inverse of write_reports; rows of one (variant, scenario, seed) are merged into one report."""
        path = Path(path)
        if not path.exists():
            raise MissingArtifactError(f"metric report not found: {path}")
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
        missing = [c for c in REPORT_COLUMNS if c not in df.columns]
        if missing:
            raise DocumentParseError(f"{path}: missing columns {missing}")
        reports: List[MetricReport] = []
        try:
            for (variant, scenario, seed), group in df.groupby(["variant", "scenario_id", "seed"], sort=False):
                horizons = []
                for record in group.to_dict(orient="records"):
                    rmse = [float(v) for v in record["rmse_per_step"].split()]
                    horizons.append(HorizonMetrics(
                        horizon_s=float(record["horizon_s"]),
                        rmse_per_step=rmse,
                        mae=float(record["mae"]),
                        ade=ade(rmse),
                        fde=fde(rmse),
                        pooled_rmse=float(record["pooled_rmse"]),
                    ))
                reports.append(MetricReport(
                    variant=Variant(variant),
                    scenario_id=None if scenario == "all" else int(scenario),
                    n_samples=int(group["n_samples"].iloc[0]),
                    seed=int(seed) if seed else None,
                    horizons=horizons,
                ))
        except ValueError as e:
            raise DocumentParseError(f"{path}: {e}")
        return reports
