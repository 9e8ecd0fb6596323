"""
SOR-DBN versus ordinary-DBN report: per-scenario BIC and conditional-distribution curves.
"""
import time
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from schemas.dbn import DbnModel, Penalty
from services.dbn_service import DbnService, FrameTable
from utils.errors import DbnError
from utils.logger_factory import new_logger
from utils.number_format import MODEL_DIGITS

log = new_logger("dbn_comparison_service")

MODEL_TAGS = ("sor", "ordinary")
CURVE_PAIRS = [("Npc_a", "Ego_a"), ("Sub_style", "Ego_a")]
POOLED = "all"


class ComparisonReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    bic: pd.DataFrame
    curves: pd.DataFrame
    total_variation: pd.DataFrame


def model_conditional(model: DbnModel, parent: str, child: str) -> np.ndarray:
    """P(child | parent) under the slice distribution; parent states of zero mass give zero rows."""
    joint = DbnService.joint(model, [parent, child])
    mass = joint.sum(axis=1, keepdims=True)
    return np.divide(joint, mass, out=np.zeros_like(joint), where=mass > 0)


def empirical_conditional(frames: np.ndarray, parent_col: int, child_col: int, parent_card: int,
                          child_card: int) -> Tuple[np.ndarray, np.ndarray]:
    """Row-normalized pair frequencies and the parent-state counts."""
    counts = np.zeros((parent_card, child_card))
    np.add.at(counts, (frames[:, parent_col], frames[:, child_col]), 1.0)
    support = counts.sum(axis=1)
    freq = np.divide(counts, support[:, None], out=np.zeros_like(counts), where=support[:, None] > 0)
    return freq, support


def total_variation(curve: np.ndarray, empirical: np.ndarray, support: np.ndarray) -> float:
    """Support-weighted mean over parent states of 0.5 * sum |p - q|."""
    total = support.sum()
    if total == 0:
        return 0.0
    per_state = 0.5 * np.abs(curve - empirical).sum(axis=1)
    return float((per_state * support).sum() / total)


class DbnComparisonService:

    @staticmethod
    def _check_nodes(sor: DbnModel, ordinary: DbnModel) -> None:
        a = [(n.name, n.cardinality) for n in sor.structure.nodes]
        b = [(n.name, n.cardinality) for n in ordinary.structure.nodes]
        if a != b:
            raise DbnError(f"models have different node sets: {a} vs {b}")

    @staticmethod
    def bic_table(
        data_by_scenario: Dict[str, Sequence[np.ndarray]], models: Dict[str, DbnModel], alpha: float = 0.0
    ) -> pd.DataFrame:
        """
        Refit each model's structure on every scenario's data and score it with both penalties.

        Rows come in scenario, model, penalty order.
        """
        rows = []
        for scenario in sorted(data_by_scenario, key=lambda k: (k == POOLED, k)):
            data = data_by_scenario[scenario]
            for tag in MODEL_TAGS:
                fitted = DbnService.mle_fit(models[tag].structure, data, alpha)
                ll = DbnService.log_likelihood(fitted, data)
                m = FrameTable(fitted.structure, data).m
                for penalty in (Penalty.PARAMS, Penalty.NODES):
                    rows.append({
                        "scenario": scenario,
                        "model": tag,
                        "penalty": penalty.value,
                        "frames": m,
                        "log_likelihood": ll,
                        "penalty_count": DbnService.penalty_count(fitted, penalty),
                        "bic": DbnService.bic_score(fitted, data, penalty),
                    })
        return pd.DataFrame(rows, columns=["scenario", "model", "penalty", "frames", "log_likelihood",
                                           "penalty_count", "bic"])

    @staticmethod
    def curves(data: Sequence[np.ndarray], models: Dict[str, DbnModel]) -> Tuple[pd.DataFrame, pd.DataFrame]:
        """P(child | parent) from each model next to the empirical frequencies, plus TV summaries."""
        structure = models["sor"].structure
        frames = np.vstack([np.asarray(seq, dtype=int) for seq in data if len(seq)])
        curve_rows, tv_rows = [], []
        for parent, child in CURVE_PAIRS:
            if parent not in structure.names or child not in structure.names:
                continue
            p_spec, c_spec = structure.node(parent), structure.node(child)
            empirical, support = empirical_conditional(
                frames, structure.index(parent), structure.index(child), p_spec.cardinality, c_spec.cardinality
            )
            from_models = {tag: model_conditional(models[tag], parent, child) for tag in MODEL_TAGS}
            condition = f"{child}|{parent}"
            for i in range(p_spec.cardinality):
                for j in range(c_spec.cardinality):
                    curve_rows.append({
                        "condition": condition,
                        "parent_state": p_spec.state_name(i),
                        "child_state": c_spec.state_name(j),
                        "sor": from_models["sor"][i, j],
                        "ordinary": from_models["ordinary"][i, j],
                        "empirical": empirical[i, j],
                        "parent_count": int(support[i]),
                    })
            for tag in MODEL_TAGS:
                tv_rows.append({"condition": condition, "model": tag,
                                "total_variation": total_variation(from_models[tag], empirical, support)})
        return (
            pd.DataFrame(curve_rows, columns=["condition", "parent_state", "child_state", "sor", "ordinary",
                                              "empirical", "parent_count"]),
            pd.DataFrame(tv_rows, columns=["condition", "model", "total_variation"]),
        )

    @staticmethod
    def compare(
        data_by_scenario: Dict[str, Sequence[np.ndarray]],
        sor_model: DbnModel,
        ordinary_model: DbnModel,
        alpha: float = 0.0,
    ) -> ComparisonReport:
        """
        BIC of both structures per scenario (and pooled) under both penalties, and conditional curves.

        Args:
            data_by_scenario: State-row sequences keyed by scenario id as text; "all" is added when absent
            sor_model: Model learned under the layer prior
            ordinary_model: Exogenous-emotion baseline fitted on the same data
            alpha: Smoothing used when refitting per scenario

        Returns:
            ComparisonReport with bic, curves and total_variation tables
        """
        DbnComparisonService._check_nodes(sor_model, ordinary_model)
        start = time.time()
        data_by_scenario = dict(data_by_scenario)
        if POOLED not in data_by_scenario:
            data_by_scenario[POOLED] = [seq for seqs in data_by_scenario.values() for seq in seqs]
        models = {"sor": sor_model, "ordinary": ordinary_model}
        bic = DbnComparisonService.bic_table(data_by_scenario, models, alpha)
        curves, tv = DbnComparisonService.curves(data_by_scenario[POOLED], models)
        log.info(f"Compared DBNs over {len(data_by_scenario)} data sets in {(time.time() - start) * 1000:.2f}ms")
        return ComparisonReport(bic=bic, curves=curves, total_variation=tv)

    @staticmethod
    def write(report: ComparisonReport, directory) -> List[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, frame in (("dbn_bic.csv", report.bic), ("dbn_curves.csv", report.curves),
                            ("dbn_tv.csv", report.total_variation)):
            path = directory / name
            frame.to_csv(path, index=False, float_format=f"%.{MODEL_DIGITS}g", lineterminator="\n")
            paths.append(path)
        log.info(f"Wrote DBN comparison to {directory}")
        return paths
