import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from schemas.metrics import HorizonMetrics, MetricReport
from schemas.run_config import PlotConfig, Variant
from services.plot_service import BAR_COLUMNS, PlotService


def reports():
    def one(variant, scenario, value):
        return MetricReport(variant=variant, scenario_id=scenario, n_samples=2, seed=0, horizons=[
            HorizonMetrics(horizon_s=1.0, rmse_per_step=[value, 2 * value], mae=value, ade=1.5 * value,
                           fde=2 * value, pooled_rmse=value),
        ])
    return [one(Variant.CPSOR, 1, 1.0), one(Variant.P, 1, 2.0), one(Variant.P, None, 3.0)]


def test_bar_points_one_row_per_bar():
    points = PlotService.bar_points(reports())
    assert list(points.columns) == BAR_COLUMNS
    assert len(points) == 3 * 2
    assert list(points["variant"]) == ["p", "p", "p", "p", "cpsor", "cpsor"]
    assert list(points["scenario"][:2]) == ["1", "1"]
    assert points.iloc[0]["metric"] == "ade" and points.iloc[0]["value"] == 3.0


def test_trajectory_series_order():
    history = np.zeros((3, 2))
    truth = np.ones((2, 2))
    points = PlotService.trajectory_points(history, truth, {"cpsor": truth + 0.1, "p": truth - 0.1},
                                           trigger_xy=np.array([5.0, 0.0]))
    assert list(dict.fromkeys(points["series"])) == ["history", "truth", "pred_p", "pred_cpsor", "trigger"]
    assert len(points) == 3 + 2 + 2 + 2 + 1


def test_csv_format_writes_the_points(tmp_path):
    points = PlotService.bar_points(reports())
    path = PlotService.write_bars(points, tmp_path / "bars.csv", PlotConfig(format="csv"))
    loaded = pd.read_csv(path, dtype={"scenario": str, "seed": str})
    assert len(loaded) == len(points)
    assert np.allclose(loaded["value"], points["value"])


@pytest.mark.parametrize("kind", ["bars", "trajectory"])
def test_svg_is_reproducible(tmp_path, kind):
    if kind == "bars":
        points = PlotService.bar_points(reports())
        write = PlotService.write_bars
    else:
        points = PlotService.trajectory_points(np.zeros((3, 2)), np.ones((2, 2)), {"p": np.ones((2, 2))})
        write = PlotService.write_trajectory
    first = write(points, tmp_path / "a.svg").read_bytes()
    second = write(points, tmp_path / "b.svg").read_bytes()
    assert first == second
    assert b"<svg" in first


def test_unknown_format():
    with pytest.raises(ValidationError):
        PlotConfig(format="png")
