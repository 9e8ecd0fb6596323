from pathlib import Path

from commands.common import load_frames, load_models
from commands.discretize import discretizer_settings
from schemas.predictor import VARIANT_DBN
from schemas.run_config import RunConfig, TrainConfig
from schemas.trajectory import DT, X, Y
from services.dataset_service import DatasetService
from services.graph_service import GraphService
from services.metrics_service import MetricsService
from services.plot_service import PlotService
from services.predictor_service import PredictorService
from services.training_service import TrainingService
from settings import with_overrides
from utils.errors import MissingArtifactError
from utils.logger_factory import new_logger

log = new_logger("plot_command")


def register(subparsers) -> None:
    p = subparsers.add_parser("plot", help="draw metric bars or a predicted-versus-true trajectory")
    p.add_argument("kind", choices=["metrics", "trajectory"], help="figure to draw")
    p.add_argument("--out", required=True, help="figure file to write")
    p.add_argument("--format", choices=["svg", "csv"], help="svg figure or csv of plotted points (default: svg)")
    p.add_argument("--report", help="metric report CSV (metrics)")
    p.add_argument("--dataset", help="dataset directory (trajectory)")
    p.add_argument("--frames", help="frames directory (default: <dataset>/frames)")
    p.add_argument("--dbn-dir", help="learn-dbn output directory, for cp and cpsor weights")
    p.add_argument("--episode", help="episode id (trajectory)")
    p.add_argument("--start-step", type=int, default=0, help="first history step of the window (default: 0)")
    p.add_argument("--weights", nargs="*", default=[], help="weights files, one polyline each (trajectory)")
    p.set_defaults(handler=run)


def _trajectory(args, config: RunConfig):
    if not args.dataset or not args.episode:
        raise MissingArtifactError("trajectory plots need --dataset and --episode")
    csv_path = Path(args.dataset) / f"{args.episode}.csv"
    if not csv_path.exists():
        raise MissingArtifactError(f"episode file not found: {csv_path}")
    episode = DatasetService.read_episode(csv_path)
    codec = discretizer_settings(args, config).codec()
    ego = episode.tracks[episode.ego_id]

    predictions, history_steps, future_steps = {}, None, 0
    for path in args.weights:
        doc = TrainingService.read_weights(path)
        settings = TrainConfig(variant=doc.variant, t_p=doc.history_steps * DT, t_f=doc.future_steps * DT)
        samples = [s for s in DatasetService.window_samples(episode, settings.t_p, settings.t_f, 1)
                   if s.start_step == args.start_step]
        if not samples:
            raise MissingArtifactError(f"{args.episode} has no window starting at step {args.start_step}")
        needed = VARIANT_DBN[doc.variant]
        model, frames = None, None
        if needed is not None:
            model = load_models(args.dbn_dir, tags=(needed,), required=True)[needed]
            frames = load_frames(args.dataset, args.frames, codec).get(episode.episode_id)
        prepared = GraphService.prepare_episode(episode, samples, doc.normalizer, doc.d_close, frames, codec,
                                                model, None, needed)
        predictions[doc.variant.value] = PredictorService.predict(prepared, doc.params, doc.variant,
                                                                  doc.offset_scale)[0]
        history_steps = doc.history_steps
        future_steps = max(future_steps, doc.future_steps)

    history_steps = history_steps or int(round(config.train.t_p / DT))
    future_steps = future_steps or int(round(config.train.t_f / DT))
    s = args.start_step
    history = ego[s:s + history_steps][:, [X, Y]]
    truth = ego[s + history_steps:s + history_steps + future_steps][:, [X, Y]]
    trigger = None
    if "trigger_time" in episode.meta:
        k = int(round(float(episode.meta["trigger_time"]) / DT))
        if 0 <= k < episode.n_steps:
            trigger = ego[k, [X, Y]]
    return PlotService.trajectory_points(history, truth, predictions, trigger)


def run(args, config: RunConfig) -> None:
    settings = with_overrides(config.plot, format=args.format)
    if args.kind == "metrics":
        if not args.report:
            raise MissingArtifactError("metric plots need --report")
        points = PlotService.bar_points(MetricsService.read_reports(args.report))
        PlotService.write_bars(points, args.out, settings)
    else:
        PlotService.write_trajectory(_trajectory(args, config), args.out, settings)
