from commands.common import described, load_episodes, load_frames, load_models, parse_list
from commands.discretize import discretizer_settings
from schemas.predictor import VARIANT_DBN
from schemas.run_config import RunConfig, TrainConfig
from schemas.trajectory import DT
from services.ablation_service import AblationService
from services.metrics_service import MetricsService
from services.training_service import TrainingService
from utils.logger_factory import new_logger

log = new_logger("evaluate_command")


def register(subparsers) -> None:
    p = subparsers.add_parser("eval", help="evaluate trained weights on a dataset")
    p.add_argument("--weights", required=True, help="weights file written by train")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--frames", help="frames directory (default: <dataset>/frames)")
    p.add_argument("--dbn-dir", help="learn-dbn output directory; required by cp and cpsor weights")
    p.add_argument("--horizons", type=parse_list(float),
                   help="comma-separated horizons in seconds (default: the full trained horizon)")
    p.add_argument("--stride", type=int, help=described("window stride in steps", TrainConfig, "stride"))
    p.add_argument("--out", required=True, help="metric report CSV to write")
    p.set_defaults(handler=run)


def run(args, config: RunConfig) -> None:
    doc = TrainingService.read_weights(args.weights)
    codec = discretizer_settings(args, config).codec()
    episodes = load_episodes(args.dataset)
    frames, models = None, {}
    needed = VARIANT_DBN[doc.variant]
    if needed is not None:
        models = load_models(args.dbn_dir, tags=(needed,), required=True)
        frames = load_frames(args.dataset, args.frames, codec)
    horizons = args.horizons or [doc.future_steps * DT]
    stride = args.stride or config.train.stride
    reports = AblationService.evaluate(doc, episodes, codec, stride, horizons, frames, models)
    MetricsService.write_reports(reports, args.out)
    pooled = reports[-1].horizons[-1]
    log.info(f"{doc.variant.value}: ADE {pooled.ade:.4f} FDE {pooled.fde:.4f} over {reports[-1].n_samples} samples")
