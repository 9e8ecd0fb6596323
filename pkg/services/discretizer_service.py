"""
Discretization of raw episodes into cognitive node states.

Scalar rules (TTC grade, acceleration bins, steering thresholds) are module-level
functions; DiscretizerService fits the pooled cluster models and labels episodes.
"""
import json
import math
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from schemas.cognitive import (
    ClusterModel, CognitiveCodec, CognitiveFrame, EmoCluster, ManLateral, ManLongi, ObjStyle, RiskGrade, SubStyle,
)
from schemas.discretizer import (
    DiscretizationResult, DiscretizerArtifacts, SubStyleThresholds, WindowSelection,
)
from schemas.run_config import DiscretizerConfig
from schemas.trajectory import A, BRAKE, STEER, THROTTLE, Episode, PadSample
from services.ttc_service import compute_ttc
from utils.errors import ClusteringError, DegenerateSeriesError, DomainError, MissingArtifactError
from utils.logger_factory import new_logger

log = new_logger("discretizer_service")

SAFE_TTC = 2.0
DANGER_TTC = 1.5
STEER_THRESHOLD_DEG = 4.0
MIN_WINDOW_SERIES = 40

ANGER_EXEMPLAR = (-0.848, 0.462, 0.382)
FRIGHT_EXEMPLAR = (-0.257, -0.985, -0.322)

WINDOW_CHANNELS = {"brake": BRAKE, "throttle": THROTTLE, "steer_deg": STEER}


def _require_number(value: float, what: str) -> float:
    value = float(value)
    if math.isnan(value):
        raise DomainError(f"{what} is NaN")
    return value


def ttc_risk_grade(ttc: float) -> RiskGrade:
    """Safe above 2 s, Moderate in (1.5, 2], Danger at or below 1.5 s. +inf is Safe."""
    ttc = _require_number(ttc, "ttc")
    if ttc <= 0.0:
        raise DomainError(f"ttc must be positive, got {ttc}")
    if ttc > SAFE_TTC:
        return RiskGrade.SAFE
    if ttc > DANGER_TTC:
        return RiskGrade.MODERATE
    return RiskGrade.DANGER


def bin_acceleration(a: float, width: float = 0.2) -> int:
    """
    Signed bin b with b * width <= a < (b + 1) * width.

    The bound is checked in float arithmetic, so values sitting on a bin edge
    land in the bin whose computed lower edge they reach.
    """
    a = _require_number(a, "acceleration")
    if not math.isfinite(a):
        raise DomainError(f"acceleration must be finite, got {a}")
    if width <= 0:
        raise ValueError(f"bin width must be positive, got {width}")
    b = math.floor(a / width)
    while b * width > a:
        b -= 1
    while (b + 1) * width <= a:
        b += 1
    return int(b)


def lateral_maneuver(steer_deg: float) -> ManLateral:
    steer_deg = _require_number(steer_deg, "steering angle")
    if steer_deg < -STEER_THRESHOLD_DEG:
        return ManLateral.LEFT_TURN
    if steer_deg > STEER_THRESHOLD_DEG:
        return ManLateral.RIGHT_TURN
    return ManLateral.STRAIGHT


def autocorrelation(series: Sequence[float], k: int) -> float:
    """
    Lag-k autocorrelation in [-1, 1].

    Both overlapping segments are centred on their own means and the covariance is
    divided by the geometric mean of their variances.
    """
    b = np.asarray(series, dtype=float)
    if k < 0 or len(b) <= k:
        raise ValueError(f"lag {k} needs a series longer than {k}, got {len(b)}")
    if np.ptp(b) == 0.0:
        raise DegenerateSeriesError("constant series has no autocorrelation")
    if k == 0:
        return 1.0
    head = b[k:] - b[k:].mean()
    tail = b[:-k] - b[:-k].mean()
    denom = math.sqrt(float(head @ head) * float(tail @ tail))
    if denom == 0.0:
        raise DegenerateSeriesError(f"overlap at lag {k} is constant")
    return float(np.clip((head @ tail) / denom, -1.0, 1.0))


def select_window(series: Sequence[float], threshold: float = 0.2, cap: int = 20) -> WindowSelection:
    """
    Smallest downsampling spacing whose lag-1 autocorrelation drops below `threshold`.

    Returns `cap` when no spacing qualifies; a constant series also returns `cap`,
    with the degenerate flag set.
    """
    b = np.asarray(series, dtype=float)
    if len(b) < MIN_WINDOW_SERIES:
        raise DomainError(f"window selection needs at least {MIN_WINDOW_SERIES} samples, got {len(b)}")
    lag1 = float("nan")
    for spacing in range(1, cap + 1):
        thinned = b[::spacing]
        if len(thinned) < 3:
            break
        try:
            lag1 = autocorrelation(thinned, 1)
        except DegenerateSeriesError:
            log.warning(f"Degenerate series at spacing {spacing}, using window cap {cap}")
            return WindowSelection(steps=cap, degenerate=True)
        if lag1 < threshold:
            return WindowSelection(steps=spacing, lag1=lag1)
    return WindowSelection(steps=cap, lag1=lag1)


def _plus_plus_seeds(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    chosen = [int(rng.integers(len(points)))]
    d2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    while len(chosen) < k:
        nxt = int(rng.choice(len(points), p=d2 / d2.sum()))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((points - points[nxt]) ** 2).sum(axis=1))
    return points[chosen].copy()


def kmeans(points, k: int, seed: int, max_iter: int = 100, standardize: bool = False) -> ClusterModel:
    """
    Lloyd's algorithm from k-means++ seeding.

    Stops at an assignment fixpoint or after `max_iter` assignments. Ties go to the
    lowest centroid index; an empty cluster keeps its previous centroid.

    Args:
        points: (n, d) array of feature vectors
        k: Number of clusters
        seed: Seed of the generator used for k-means++ seeding
        max_iter: Assignment iteration cap
        standardize: Scale each column to zero mean and unit variance first

    Returns:
        ClusterModel with placeholder labels "0".."k-1"
    """
    raw = np.atleast_2d(np.asarray(points, dtype=float))
    if k < 1:
        raise ClusteringError(f"k must be at least 1, got {k}")
    if not np.all(np.isfinite(raw)):
        raise ClusteringError("points must be finite")
    if len(np.unique(raw, axis=0)) < k:
        raise ClusteringError(f"need at least {k} distinct points for k={k}")

    mean = scale = None
    pts = raw
    if standardize:
        mean = raw.mean(axis=0)
        scale = raw.std(axis=0)
        scale[scale == 0.0] = 1.0
        pts = (raw - mean) / scale

    rng = np.random.default_rng(seed)
    centroids = _plus_plus_seeds(pts, k, rng)
    labels = None
    history: List[float] = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assigned = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(len(pts)), assigned].sum()))
        if labels is not None and np.array_equal(assigned, labels):
            break
        labels = assigned
        for c in range(k):
            members = pts[labels == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
            else:
                log.warning(f"k-means cluster {c} is empty at iteration {iterations}, keeping its centroid")

    raw_centroids = centroids * scale + mean if standardize else centroids
    return ClusterModel(
        k=k,
        centroids=centroids.tolist(),
        raw_centroids=raw_centroids.tolist(),
        label_map={i: str(i) for i in range(k)},
        feature_mean=None if mean is None else mean.tolist(),
        feature_scale=None if scale is None else scale.tolist(),
        inertia_history=history,
        iterations=iterations,
    )


def _pad_array(pad_series) -> np.ndarray:
    if len(pad_series) and isinstance(pad_series[0], PadSample):
        return np.stack([p.as_vector() for p in pad_series])
    return np.atleast_2d(np.asarray(pad_series, dtype=float))


def label_emotion_clusters(model: ClusterModel) -> ClusterModel:
    """
    Greedy exclusive nearest-exemplar labelling: the closest (centroid, exemplar) pair is
    fixed first, then the closest among the rest; the leftover cluster is Neutral.
    """
    if model.k != 3:
        raise ClusteringError(f"emotion clustering needs k=3, got {model.k}")
    centroids = np.asarray(model.raw_centroids, dtype=float)
    exemplars = {EmoCluster.ANGER: np.array(ANGER_EXEMPLAR), EmoCluster.FRIGHT: np.array(FRIGHT_EXEMPLAR)}
    pairs = sorted(
        (float(np.linalg.norm(centroids[c] - ex)), c, label)
        for c in range(3) for label, ex in exemplars.items()
    )
    label_map: Dict[int, str] = {}
    used = set()
    while len(used) < len(exemplars):
        open_pairs = [p for p in pairs if p[1] not in label_map and p[2] not in used]
        if len(open_pairs) > 1 and math.isclose(open_pairs[0][0], open_pairs[1][0], rel_tol=0.0, abs_tol=1e-12):
            raise ClusteringError("emotion centroids tie for the same exemplar")
        _, c, label = open_pairs[0]
        label_map[c] = label.value
        used.add(label)
    for c in range(3):
        label_map.setdefault(c, EmoCluster.NEUTRAL.value)
    return model.relabel(label_map)


def fit_emotion_model(pad_series, seed: int, max_iter: int = 100) -> ClusterModel:
    return label_emotion_clusters(kmeans(_pad_array(pad_series), 3, seed, max_iter=max_iter))


def emotion_states(pad_series, seed: int, max_iter: int = 100) -> List[EmoCluster]:
    """k=3 clustering of (pleased, aroused, dominant) with semantic labels per point."""
    points = _pad_array(pad_series)
    model = fit_emotion_model(points, seed, max_iter=max_iter)
    return [EmoCluster(label) for label in model.labels(points)]


def window_features(track: np.ndarray, window: int) -> np.ndarray:
    """
    Per complete window: means then standard deviations of brake, throttle and steering.

    A trailing partial window is dropped.
    """
    n_windows = len(track) // window
    channels = track[: n_windows * window][:, [BRAKE, THROTTLE, STEER]].reshape(n_windows, window, 3)
    return np.hstack([channels.mean(axis=1), channels.std(axis=1)])


def label_maneuver_clusters(model: ClusterModel) -> ClusterModel:
    """
    Longitudinal labels rank centroid (throttle - brake) means; style labels rank the
    norm of the centroid's standard-deviation part. Ranking ties keep cluster order.
    """
    if model.k != 3:
        raise ClusteringError(f"maneuver clustering needs k=3, got {model.k}")
    raw = np.asarray(model.raw_centroids, dtype=float)
    drive = raw[:, 1] - raw[:, 0]
    spread = np.linalg.norm(raw[:, 3:6], axis=1)
    longi_rank = list(np.argsort(-drive, kind="stable"))
    style_rank = list(np.argsort(spread, kind="stable"))
    longi = {longi_rank[0]: ManLongi.ACCELERATE, longi_rank[1]: ManLongi.MAINTAIN, longi_rank[2]: ManLongi.DECELERATE}
    style = {style_rank[0]: ObjStyle.GENTLE, style_rank[1]: ObjStyle.MODERATE, style_rank[2]: ObjStyle.HASTY}
    return model.relabel({int(c): f"{longi[c].value}|{style[c].value}" for c in range(3)})


def decode_maneuver_label(label: str) -> Tuple[ManLongi, ObjStyle]:
    longi, style = label.split("|")
    return ManLongi(longi), ObjStyle(style)


def fit_maneuver_model(features, seed: int, max_iter: int = 100) -> ClusterModel:
    return label_maneuver_clusters(kmeans(features, 3, seed, max_iter=max_iter, standardize=True))


def maneuver_and_style(features, seed: int, max_iter: int = 100) -> List[Tuple[ManLongi, ObjStyle]]:
    """Per-window (man_longi, obj_style) from the joint 6-vector clustering."""
    model = fit_maneuver_model(features, seed, max_iter=max_iter)
    return [decode_maneuver_label(label) for label in model.labels(np.atleast_2d(features))]


def sub_style(score: float, population: Sequence[float]) -> SubStyle:
    return SubStyleThresholds.from_population(population).classify(score)


class DiscretizerService:
    """Fits the pooled cluster models and turns episodes into CognitiveFrame sequences."""

    @staticmethod
    def fit(episodes: List[Episode], config: DiscretizerConfig) -> DiscretizerArtifacts:
        if not episodes:
            raise ClusteringError("cannot fit the discretizer on an empty dataset")
        start = time.time()
        pad = np.vstack([e.ego_pad for e in episodes])
        emotion = fit_emotion_model(pad, config.seed, max_iter=config.kmeans_max_iter)

        feature_blocks = [window_features(e.tracks[e.ego_id], config.window_steps) for e in episodes]
        features = np.vstack([f for f in feature_blocks if len(f)] or [np.zeros((0, 6))])
        maneuver = fit_maneuver_model(features, config.seed, max_iter=config.kmeans_max_iter)

        thresholds = SubStyleThresholds.from_population([e.sub_style_score for e in episodes])
        log.info(
            f"Fitted discretizer on {len(episodes)} episodes ({len(pad)} PAD points, {len(features)} windows) "
            f"in {(time.time() - start) * 1000:.2f}ms"
        )
        return DiscretizerArtifacts(
            emotion=emotion,
            maneuver=maneuver,
            sub_style=thresholds,
            window_steps=config.window_steps,
            accel_bin_width=config.accel_bin_width,
        )

    @staticmethod
    def risk_grades(episode: Episode) -> List[RiskGrade]:
        """Grade of the smallest TTC over all NPCs at each step; TTC 0 counts as Danger."""
        grades = []
        for step in range(episode.n_steps):
            ego = episode.state(episode.ego_id, step)
            ttc = min((compute_ttc(ego, episode.state(n, step)) for n in episode.npc_ids), default=math.inf)
            grades.append(RiskGrade.DANGER if ttc <= 0.0 else ttc_risk_grade(ttc))
        return grades

    @staticmethod
    def apply(episode: Episode, artifacts: DiscretizerArtifacts) -> List[CognitiveFrame]:
        width = artifacts.accel_bin_width
        ego_track = episode.tracks[episode.ego_id]
        npc_accel = episode.tracks[episode.npc_ids[0]][:, A] if episode.npc_ids else np.zeros(episode.n_steps)

        emotions = artifacts.emotion.labels(episode.ego_pad)
        window = artifacts.window_steps
        features = window_features(ego_track, window)
        if len(features) == 0:
            # shorter than one window: label the whole partial window
            partial = ego_track[:, [BRAKE, THROTTLE, STEER]]
            features = np.hstack([partial.mean(axis=0), partial.std(axis=0)])[None, :]
        maneuvers = [decode_maneuver_label(label) for label in artifacts.maneuver.labels(features)]
        style = artifacts.sub_style.classify(episode.sub_style_score)
        risks = DiscretizerService.risk_grades(episode)

        frames = []
        for step in range(episode.n_steps):
            longi, obj = maneuvers[min(step // window, len(maneuvers) - 1)]
            frames.append(CognitiveFrame(
                risk_grade=risks[step],
                npc_a_bin=bin_acceleration(npc_accel[step], width),
                ego_a_bin=bin_acceleration(ego_track[step, A], width),
                emo_cluster=EmoCluster(emotions[step]),
                sub_style=style,
                obj_style=obj,
                man_longi=longi,
                man_lateral=lateral_maneuver(ego_track[step, STEER]),
            ))
        return frames

    @staticmethod
    def window_report(episode: Episode, config: DiscretizerConfig) -> Dict[str, WindowSelection]:
        track = episode.tracks[episode.ego_id]
        if len(track) < MIN_WINDOW_SERIES:
            return {}
        report = {
            name: select_window(track[:, col], threshold=config.ac_threshold, cap=config.window_steps)
            for name, col in WINDOW_CHANNELS.items()
        }
        log.debug(f"{episode.episode_id} windows: " + ", ".join(f"{k}={v.steps}" for k, v in report.items()))
        return report

    @staticmethod
    def discretize_dataset(
        episodes: List[Episode],
        config: DiscretizerConfig,
        artifacts: Optional[DiscretizerArtifacts] = None,
    ) -> DiscretizationResult:
        """
        Label every episode; cluster models are fitted on the pooled dataset unless given.

        Args:
            episodes: Loaded episodes
            config: Discretizer settings
            artifacts: Previously fitted models to reuse

        Returns:
            Frames and window reports keyed by episode id
        """
        start = time.time()
        artifacts = artifacts or DiscretizerService.fit(episodes, config)
        frames = {e.episode_id: DiscretizerService.apply(e, artifacts) for e in episodes}
        windows = {e.episode_id: DiscretizerService.window_report(e, config) for e in episodes}
        log.info(f"Discretized {len(episodes)} episodes in {(time.time() - start) * 1000:.2f}ms")
        return DiscretizationResult(artifacts=artifacts, frames=frames, windows=windows)

    @staticmethod
    def write_result(result: DiscretizationResult, directory, codec: CognitiveCodec) -> Path:
        """Write frames/{episode}.csv, discretizer.json and windows.csv under `directory`."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for episode_id, frames in sorted(result.frames.items()):
            codec.to_dataframe(frames).to_csv(directory / f"{episode_id}.csv", index=False, lineterminator="\n")
        payload = result.artifacts.model_dump(mode="json")
        (directory / "discretizer.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

        rows = [
            {"episode_id": eid, "channel": channel, "steps": sel.steps, "lag1": sel.lag1, "degenerate": sel.degenerate}
            for eid, report in sorted(result.windows.items())
            for channel, sel in report.items()
        ]
        pd.DataFrame(rows, columns=["episode_id", "channel", "steps", "lag1", "degenerate"]).to_csv(
            directory / "windows.csv", index=False, float_format="%.9g", lineterminator="\n"
        )
        log.info(f"Wrote {len(result.frames)} frame files to {directory}")
        return directory

    @staticmethod
    def read_frames(directory, codec: CognitiveCodec) -> Dict[str, List[CognitiveFrame]]:
        directory = Path(directory)
        if not directory.is_dir():
            raise MissingArtifactError(f"frames directory not found: {directory}")
        files = sorted(p for p in directory.glob("*.csv") if p.name != "windows.csv")
        if not files:
            raise MissingArtifactError(f"no frame files in {directory}")
        return {
            p.stem: codec.from_dataframe(pd.read_csv(p, dtype=str, keep_default_na=False))
            for p in files
        }

    @staticmethod
    def read_artifacts(directory) -> DiscretizerArtifacts:
        path = Path(directory) / "discretizer.json"
        if not path.exists():
            raise MissingArtifactError(f"discretizer artifacts not found: {path}")
        return DiscretizerArtifacts.model_validate_json(path.read_text())
