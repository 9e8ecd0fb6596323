"""
Momentum gradient descent for the predictor, plus the weights and loss-curve artifacts.
"""
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from schemas.cognitive import CognitiveCodec, CognitiveFrame
from schemas.dbn import DbnModel
from schemas.graph import FeatureNormalizer
from schemas.predictor import (
    SCHEMA_VERSION, VARIANT_DBN, PredictorDims, PredictorParams, PreparedSample, WeightsDocument,
)
from schemas.run_config import TrainConfig, Variant
from schemas.trajectory import Episode
from services.dataset_service import DatasetService, steps_for
from services.dbn_service import DbnService
from services.graph_service import FEATURE_COLUMNS, GraphService
from services.predictor_service import PredictorService, stack_batch
from utils.errors import DocumentParseError, MissingArtifactError, TrainingError
from utils.logger_factory import new_logger
from utils.number_format import MODEL_DIGITS, format_row, format_sig

log = new_logger("training_service")


class EpochLoss(BaseModel):
    model_config = ConfigDict(frozen=True)

    epoch: int
    train_loss: float
    valid_loss: float


class TrainingService:

    @staticmethod
    def fit_normalizer(episodes: Sequence[Episode]) -> FeatureNormalizer:
        """Standardization of (x, y, v, a) over every vehicle row of the given episodes."""
        rows = [track[:, FEATURE_COLUMNS] for ep in episodes for track in ep.tracks.values()]
        return FeatureNormalizer.fit(np.concatenate(rows) if rows else np.zeros((0, len(FEATURE_COLUMNS))))

    @staticmethod
    def dims_for(config: TrainConfig, codec: CognitiveCodec) -> PredictorDims:
        return PredictorDims(
            cog_in=max(spec.cardinality for spec in codec.node_specs()),
            gcn_width=config.gcn_width,
            lstm_width=config.lstm_width,
            attention_width=config.attention_width,
            future_steps=steps_for(config.t_f),
        )

    @staticmethod
    def prepare(
        episodes: Sequence[Episode],
        variant: Variant,
        config: TrainConfig,
        normalizer: FeatureNormalizer,
        d_close: float,
        codec: CognitiveCodec,
        frames: Optional[Dict[str, List[CognitiveFrame]]] = None,
        models: Optional[Dict[str, DbnModel]] = None,
    ) -> List[PreparedSample]:
        """
        Window every episode (sorted by id) and build the graphs `variant` reads.

        models maps a DBN tag ("ordinary", "sor") to its model; P needs neither models nor frames.
        """
        needed = VARIANT_DBN[variant]
        model, tables = None, None
        if needed is not None:
            if not models or needed not in models:
                raise MissingArtifactError(f"variant {variant.value} needs the {needed} DBN")
            if frames is None:
                raise MissingArtifactError(f"variant {variant.value} needs cognitive frames")
            model = models[needed]
            DbnService.check_codec(model, codec)
            tables = GraphService.edge_tables(model)

        prepared: List[PreparedSample] = []
        for episode in sorted(episodes, key=lambda e: e.episode_id):
            episode_frames = None
            if model is not None:
                episode_frames = frames.get(episode.episode_id)
                if episode_frames is None:
                    raise MissingArtifactError(f"no cognitive frames for episode {episode.episode_id}")
            samples = DatasetService.window_samples(episode, config.t_p, config.t_f, config.stride)
            prepared += GraphService.prepare_episode(
                episode, samples, normalizer, d_close, episode_frames, codec, model, tables, needed
            )
        return prepared

    @staticmethod
    def train(
        train_episodes: Sequence[Episode],
        valid_episodes: Sequence[Episode],
        variant: Variant,
        config: TrainConfig,
        d_close: float,
        codec: CognitiveCodec,
        frames: Optional[Dict[str, List[CognitiveFrame]]] = None,
        models: Optional[Dict[str, DbnModel]] = None,
    ) -> Tuple[WeightsDocument, List[EpochLoss]]:
        """Normalizer, initialization and fit for one variant; returns the weights document and curve."""
        normalizer = TrainingService.fit_normalizer(train_episodes)
        train = TrainingService.prepare(train_episodes, variant, config, normalizer, d_close, codec, frames, models)
        valid = TrainingService.prepare(valid_episodes, variant, config, normalizer, d_close, codec, frames, models)
        dims = TrainingService.dims_for(config, codec)
        params, curve = TrainingService.fit(train, valid, PredictorService.init_params(dims, config.seed), config,
                                            variant)
        doc = WeightsDocument(
            variant=variant,
            history_steps=steps_for(config.t_p),
            future_steps=dims.future_steps,
            offset_scale=config.offset_scale,
            d_close=d_close,
            normalizer=normalizer,
            params=params,
        )
        return doc, curve

    @staticmethod
    def evaluate_loss(samples: Sequence[PreparedSample], params: PredictorParams, variant: Variant,
                      offset_scale: float) -> float:
        pred = PredictorService.predict(samples, params, variant, offset_scale)
        target = np.stack([s.future_xy for s in samples])
        return float(PredictorService.sample_losses(pred, target).mean())

    @staticmethod
    def fit(
        train: Sequence[PreparedSample],
        valid: Sequence[PreparedSample],
        params0: PredictorParams,
        config: TrainConfig,
        variant: Variant,
    ) -> Tuple[PredictorParams, List[EpochLoss]]:
        """
        Mini-batch momentum descent with gradient-norm clipping.

        Shuffling uses a generator seeded with config.seed, so equal inputs give equal
        curves. The parameters with the lowest validation loss are returned; zero epochs
        return params0 unchanged.

        Args:
            train: Prepared training samples
            valid: Prepared validation samples
            params0: Starting parameters
            config: Step size, momentum, epochs, batch size, seed
            variant: Which cognitive branch is active

        Returns:
            Best parameters and one EpochLoss per epoch
        """
        if not train or not valid:
            raise TrainingError("training and validation splits must both be non-empty")
        rng = np.random.default_rng(config.seed)
        theta = params0.vector.copy()
        velocity = np.zeros_like(theta)
        best_params, best_valid = params0, np.inf
        curve: List[EpochLoss] = []
        start = time.time()

        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(len(train))
            weighted = 0.0
            for lo in range(0, len(order), config.batch_size):
                chunk = [train[i] for i in order[lo:lo + config.batch_size]]
                batch = stack_batch(chunk, variant)
                loss, grad = PredictorService.loss_and_gradients(
                    batch, params0.with_vector(theta), variant, config.offset_scale
                )
                norm = float(np.linalg.norm(grad))
                if not np.isfinite(norm):
                    raise TrainingError(f"non-finite gradient in epoch {epoch}")
                if norm > config.clip_norm:
                    grad = grad * (config.clip_norm / norm)
                velocity = config.momentum * velocity - config.step_size * grad
                theta = theta + velocity
                weighted += loss * len(chunk)

            train_loss = weighted / len(train)
            if not np.all(np.isfinite(theta)) or not np.isfinite(train_loss):
                raise TrainingError(f"training diverged in epoch {epoch}")
            current = params0.with_vector(theta)
            valid_loss = TrainingService.evaluate_loss(valid, current, variant, config.offset_scale)
            if not np.isfinite(valid_loss):
                raise TrainingError(f"validation loss is not finite in epoch {epoch}")
            curve.append(EpochLoss(epoch=epoch, train_loss=train_loss, valid_loss=valid_loss))
            if valid_loss < best_valid:
                best_params, best_valid = current, valid_loss
            log.debug(f"epoch {epoch}: train {train_loss:.6f} valid {valid_loss:.6f}")

        log.info(f"Trained {variant.value} for {config.epochs} epochs on {len(train)} samples, best valid loss "
                 f"{best_valid:.6f}, took {(time.time() - start) * 1000:.2f}ms")
        return best_params, curve

    @staticmethod
    def write_loss_curve(curve: List[EpochLoss], path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame([c.model_dump() for c in curve], columns=["epoch", "train_loss", "valid_loss"])
        frame.to_csv(path, index=False, float_format=f"%.{MODEL_DIGITS}g", lineterminator="\n")
        return path

    @staticmethod
    def serialize_weights(doc: WeightsDocument) -> str:
        d = doc.params.dims
        lines = [
            f"schema_version = {doc.schema_version}",
            f"variant = {doc.variant.value}",
            f"history_steps = {doc.history_steps}",
            f"future_steps = {doc.future_steps}",
            f"offset_scale = {format_sig(doc.offset_scale, MODEL_DIGITS)}",
            f"d_close = {format_sig(doc.d_close, MODEL_DIGITS)}",
            f"dims = {d.phys_in} {d.cog_in} {d.gcn_width} {d.lstm_width} {d.attention_width}",
            f"normalizer_mean = {format_row(doc.normalizer.mean, MODEL_DIGITS)}",
            f"normalizer_scale = {format_row(doc.normalizer.scale, MODEL_DIGITS)}",
            f"parameter_count = {len(doc.params.vector)}",
            "[vector]",
        ]
        lines += [format_sig(v, MODEL_DIGITS) for v in doc.params.vector]
        return "\n".join(lines) + "\n"

    @staticmethod
    def deserialize_weights(text: str) -> WeightsDocument:
        header, _, body = text.partition("[vector]")
        fields = {}
        for number, line in enumerate(header.splitlines(), start=1):
            if not line.strip():
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise DocumentParseError(f"weights line {number}: expected 'key = value'")
            fields[key.strip()] = value.strip()
        try:
            if int(fields["schema_version"]) != SCHEMA_VERSION:
                raise DocumentParseError(f"unsupported weights schema_version {fields['schema_version']}")
            phys_in, cog_in, gcn, lstm, att = (int(v) for v in fields["dims"].split())
            dims = PredictorDims(phys_in=phys_in, cog_in=cog_in, gcn_width=gcn, lstm_width=lstm,
                                 attention_width=att, future_steps=int(fields["future_steps"]))
            vector = np.array([float(v) for v in body.split()])
            if len(vector) != int(fields["parameter_count"]):
                raise DocumentParseError(f"weights vector has {len(vector)} values, header says "
                                         f"{fields['parameter_count']}")
            return WeightsDocument(
                variant=Variant(fields["variant"]),
                history_steps=int(fields["history_steps"]),
                future_steps=int(fields["future_steps"]),
                offset_scale=float(fields["offset_scale"]),
                d_close=float(fields["d_close"]),
                normalizer=FeatureNormalizer(
                    mean=[float(v) for v in fields["normalizer_mean"].split()],
                    scale=[float(v) for v in fields["normalizer_scale"].split()],
                ),
                params=PredictorParams(dims=dims, vector=vector),
            )
        except KeyError as e:
            raise DocumentParseError(f"weights file is missing {e.args[0]}")
        except ValueError as e:
            if isinstance(e, DocumentParseError):
                raise
            raise DocumentParseError(f"invalid weights file: {e}")

    @staticmethod
    def write_weights(doc: WeightsDocument, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(TrainingService.serialize_weights(doc))
        log.info(f"Wrote weights {path}")
        return path

    @staticmethod
    def read_weights(path) -> WeightsDocument:
        path = Path(path)
        if not path.exists():
            raise MissingArtifactError(f"weights file not found: {path}")
        return TrainingService.deserialize_weights(path.read_text())
