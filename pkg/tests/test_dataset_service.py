import numpy as np
import pandas as pd
import pytest

from services.dataset_service import DatasetService, steps_for
from utils.errors import DatasetLoadError, MissingArtifactError


def test_written_episode_reads_back_exactly(short_episodes, tmp_path):
    episode = short_episodes[0]
    csv_path, json_path = DatasetService.write_episode(episode, tmp_path)
    assert json_path.exists()
    loaded = DatasetService.read_episode(csv_path)
    assert loaded.episode_id == episode.episode_id
    assert loaded.npc_ids == episode.npc_ids
    assert np.array_equal(loaded.times, episode.times)
    assert np.array_equal(loaded.ego_pad, episode.ego_pad)
    for vid in episode.vehicle_ids:
        assert np.array_equal(loaded.tracks[vid], episode.tracks[vid])


def test_rewrite_is_byte_identical(short_episodes, tmp_path):
    episode = short_episodes[2]
    first, _ = DatasetService.write_episode(episode, tmp_path / "a")
    second, _ = DatasetService.write_episode(DatasetService.read_episode(first), tmp_path / "b")
    assert first.read_bytes() == second.read_bytes()


def test_rows_ordered_by_step_then_vehicle(short_episodes):
    frame = DatasetService.episode_frame(short_episodes[4])
    assert list(frame["vehicle_id"][:3]) == ["cyclist", "ego", "parked"]
    assert frame["pad_p"].isna().sum() == 2 * short_episodes[4].n_steps


def _corrupt(csv_path, row, column, value):
    df = pd.read_csv(csv_path, dtype={"vehicle_id": str})
    df.loc[row, column] = value
    df.to_csv(csv_path, index=False)


def test_out_of_range_brake_names_the_row(short_episodes, tmp_path):
    csv_path, _ = DatasetService.write_episode(short_episodes[0], tmp_path)
    _corrupt(csv_path, 5, "brake", 1.5)
    with pytest.raises(DatasetLoadError) as err:
        DatasetService.read_episode(csv_path)
    assert err.value.row == 6
    assert "brake" in str(err.value)


def test_non_uniform_grid_is_rejected(short_episodes, tmp_path):
    csv_path, _ = DatasetService.write_episode(short_episodes[0], tmp_path)
    _corrupt(csv_path, 20, "t", 0.5)
    with pytest.raises(DatasetLoadError):
        DatasetService.read_episode(csv_path)


def test_pad_on_npc_row_is_rejected(short_episodes, tmp_path):
    csv_path, _ = DatasetService.write_episode(short_episodes[0], tmp_path)
    df = pd.read_csv(csv_path, dtype={"vehicle_id": str})
    npc_row = int(np.flatnonzero(df["vehicle_id"] != "ego")[0])
    _corrupt(csv_path, npc_row, "pad_a", 0.1)
    with pytest.raises(DatasetLoadError) as err:
        DatasetService.read_episode(csv_path)
    assert err.value.row == npc_row + 1


def test_missing_sidecar(short_episodes, tmp_path):
    csv_path, json_path = DatasetService.write_episode(short_episodes[0], tmp_path)
    json_path.unlink()
    with pytest.raises(DatasetLoadError):
        DatasetService.read_episode(csv_path)


def test_missing_dataset_directory(tmp_path):
    with pytest.raises(MissingArtifactError):
        DatasetService.load_dataset(tmp_path / "nowhere")


def test_load_dataset_sorted_and_parallel(dataset_dir):
    serial = DatasetService.load_dataset(dataset_dir)
    threaded = DatasetService.load_dataset(dataset_dir, workers=4)
    ids = [e.episode_id for e in serial]
    assert ids == sorted(ids)
    assert ids == [e.episode_id for e in threaded]


@pytest.mark.parametrize("t_p,t_f,stride", [(3.0, 1.0, 5), (1.0, 2.0, 1), (2.0, 3.0, 7)])
def test_window_count(short_episodes, t_p, t_f, stride):
    episode = short_episodes[0]
    h, f = steps_for(t_p), steps_for(t_f)
    samples = DatasetService.window_samples(episode, t_p, t_f, stride)
    assert len(samples) == (episode.n_steps - h - f) // stride + 1
    last = samples[-1]
    assert last.start_step + h + f <= episode.n_steps
    assert last.history.shape == (h, len(episode.vehicle_ids), 8)
    assert last.future_xy.shape == (f, 2)
    ego = episode.tracks[episode.ego_id]
    assert np.array_equal(last.future_xy, ego[last.start_step + h:last.start_step + h + f, :2])


def test_short_episode_gives_no_windows(short_episodes):
    assert DatasetService.window_samples(short_episodes[0], 5.0, 2.0, 1) == []


def test_window_rejects_bad_stride(short_episodes):
    with pytest.raises(ValueError):
        DatasetService.window_samples(short_episodes[0], 1.0, 1.0, 0)
