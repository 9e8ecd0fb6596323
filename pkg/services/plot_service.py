"""
Static figures: metric bars and predicted-versus-true trajectories, as SVG or as the CSV
of the plotted points. Identical inputs give byte-identical files.
"""
from pathlib import Path
from typing import Dict, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from schemas.metrics import MetricReport  # noqa: E402
from schemas.run_config import PlotConfig  # noqa: E402
from utils.logger_factory import new_logger  # noqa: E402
from utils.number_format import MODEL_DIGITS  # noqa: E402

log = new_logger("plot_service")

BAR_COLUMNS = ["variant", "scenario", "seed", "horizon_s", "metric", "value"]
TRAJECTORY_COLUMNS = ["series", "step", "x", "y"]
VARIANT_RANK = {"p": 0, "cp": 1, "cpsor": 2}

matplotlib.rcParams.update({
    "svg.hashsalt": "cpsor",
    "svg.fonttype": "none",
    "path.simplify": False,
})


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


class PlotService:

    @staticmethod
    def bar_points(reports: Sequence[MetricReport], metrics: Sequence[str] = ("ade", "fde")) -> pd.DataFrame:
        """One row per bar, sorted by variant, scenario, seed, horizon and metric."""
        rows = []
        for r in reports:
            for h in r.horizons:
                for metric in metrics:
                    rows.append({
                        "variant": r.variant.value,
                        "scenario": "all" if r.scenario_id is None else str(r.scenario_id),
                        "seed": "" if r.seed is None else str(r.seed),
                        "horizon_s": h.horizon_s,
                        "metric": metric,
                        "value": float(getattr(h, metric)),
                    })
        df = pd.DataFrame(rows, columns=BAR_COLUMNS)
        if df.empty:
            return df
        df["_rank"] = df["variant"].map(VARIANT_RANK)
        df = df.sort_values(["_rank", "scenario", "seed", "horizon_s", "metric"], kind="mergesort")
        return df.drop(columns="_rank").reset_index(drop=True)

    @staticmethod
    def trajectory_points(
        history_xy: np.ndarray,
        truth_xy: np.ndarray,
        predictions: Dict[str, np.ndarray],
        trigger_xy: Optional[np.ndarray] = None,
    ) -> pd.DataFrame:
        """History, truth, one polyline per prediction (sorted by name) and the optional trigger point."""
        rows = []

        def add(series: str, points) -> None:
            for step, (x, y) in enumerate(np.asarray(points, dtype=float)):
                rows.append({"series": series, "step": step, "x": x, "y": y})

        add("history", history_xy)
        add("truth", truth_xy)
        for name in sorted(predictions, key=lambda v: (VARIANT_RANK.get(v, len(VARIANT_RANK)), v)):
            add(f"pred_{name}", predictions[name])
        if trigger_xy is not None:
            add("trigger", np.asarray(trigger_xy, dtype=float).reshape(1, 2))
        return pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS)

    @staticmethod
    def _write_csv(points: pd.DataFrame, path: Path) -> Path:
        points.to_csv(path, index=False, float_format=f"%.{MODEL_DIGITS}g", lineterminator="\n")
        return path

    @staticmethod
    def write_bars(points: pd.DataFrame, path, config: PlotConfig = PlotConfig()) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if config.format == "csv":
            return PlotService._write_csv(points, path)

        fig, ax = plt.subplots(figsize=(config.width_in, config.height_in))
        labels = [f"{r.scenario}/{r.horizon_s:g}s/{r.metric}" + (f"/{r.seed}" if r.seed else "")
                  for r in points.itertuples()]
        groups = list(dict.fromkeys(labels))
        variants = list(dict.fromkeys(points["variant"]))
        width = 0.8 / max(len(variants), 1)
        for k, variant in enumerate(variants):
            mask = (points["variant"] == variant).to_numpy()
            xs = [groups.index(label) + k * width for label, m in zip(labels, mask) if m]
            ax.bar(xs, points.loc[mask, "value"].to_numpy(), width=width, label=variant.upper())
        ax.set_xticks([i + width * (len(variants) - 1) / 2 for i in range(len(groups))])
        ax.set_xticklabels(groups, rotation=60, ha="right", fontsize=7)
        ax.set_ylabel("error (m)")
        ax.legend()
        fig.tight_layout()
        _save(fig, path)
        log.info(f"Wrote bar chart {path}")
        return path

    @staticmethod
    def write_trajectory(points: pd.DataFrame, path, config: PlotConfig = PlotConfig()) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if config.format == "csv":
            return PlotService._write_csv(points, path)

        fig, ax = plt.subplots(figsize=(config.width_in, config.height_in))
        for series in list(dict.fromkeys(points["series"])):
            part = points[points["series"] == series]
            if series == "trigger":
                ax.plot(part["x"], part["y"], marker="x", linestyle="none", color="black", label=series)
            else:
                style = "--" if series == "history" else "-"
                ax.plot(part["x"], part["y"], linestyle=style, label=series)
        ax.set_xlabel("x (m)")
        ax.set_ylabel("y (m)")
        ax.set_aspect("equal", adjustable="datalim")
        ax.legend()
        fig.tight_layout()
        _save(fig, path)
        log.info(f"Wrote trajectory figure {path}")
        return path
