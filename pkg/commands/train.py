from pathlib import Path

from commands.common import described, load_episodes, load_frames, load_models
from commands.discretize import discretizer_settings
from schemas.predictor import VARIANT_DBN
from schemas.run_config import RunConfig, TrainConfig, Variant
from services.ablation_service import split_episodes
from services.training_service import TrainingService
from settings import with_overrides
from utils.errors import TrainingError
from utils.logger_factory import new_logger

log = new_logger("train_command")


def add_train_flags(p) -> None:
    p.add_argument("--t-p", type=float, help=described("history length in seconds", TrainConfig, "t_p"))
    p.add_argument("--t-f", type=float, help=described("prediction horizon in seconds", TrainConfig, "t_f"))
    p.add_argument("--stride", type=int, help=described("window stride in steps", TrainConfig, "stride"))
    p.add_argument("--epochs", type=int, help=described("training epochs", TrainConfig, "epochs"))
    p.add_argument("--batch-size", type=int, help=described("mini-batch size", TrainConfig, "batch_size"))
    p.add_argument("--step-size", type=float, help=described("learning rate", TrainConfig, "step_size"))
    p.add_argument("--momentum", type=float, help=described("momentum", TrainConfig, "momentum"))
    p.add_argument("--train-seed", type=int, help=described("initialization and shuffling seed", TrainConfig,
                                                            "seed"))


def train_settings(args, config: RunConfig) -> TrainConfig:
    return with_overrides(
        config.train,
        variant=getattr(args, "variant", None),
        t_p=args.t_p,
        t_f=args.t_f,
        stride=args.stride,
        epochs=args.epochs,
        batch_size=args.batch_size,
        step_size=args.step_size,
        momentum=args.momentum,
        seed=args.train_seed,
    )


def register(subparsers) -> None:
    p = subparsers.add_parser("train", help="train one predictor variant")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--frames", help="frames directory (default: <dataset>/frames)")
    p.add_argument("--dbn-dir", help="learn-dbn output directory; required by cp and cpsor")
    p.add_argument("--variant", choices=[v.value for v in Variant],
                   help=described("predictor variant", TrainConfig, "variant"))
    p.add_argument("--out", required=True, help="weights file to write")
    p.add_argument("--loss-curve", help="loss curve CSV (default: <out>.loss.csv)")
    p.add_argument("--split-seed", type=int, default=0, help="train/validation split seed (default: 0)")
    p.add_argument("--all-train", action="store_true",
                   help="train and validate on every episode instead of splitting")
    add_train_flags(p)
    p.set_defaults(handler=run)


def run(args, config: RunConfig) -> None:
    settings = train_settings(args, config)
    codec = discretizer_settings(args, config).codec()
    episodes = load_episodes(args.dataset)
    if not episodes:
        raise TrainingError(f"dataset {args.dataset} holds no episodes")

    frames, models = None, {}
    needed = VARIANT_DBN[settings.variant]
    if needed is not None:
        models = load_models(args.dbn_dir, tags=(needed,), required=True)
        frames = load_frames(args.dataset, args.frames, codec)

    if args.all_train:
        train, valid = episodes, episodes
    else:
        ratios = config.ablation.split
        train, valid, _ = split_episodes(episodes, [ratios[0], ratios[1] + ratios[2], 0.0], args.split_seed)
        if not valid:
            valid = train
    doc, curve = TrainingService.train(train, valid, settings.variant, settings, config.graph.d_close, codec,
                                       frames, models)
    out = TrainingService.write_weights(doc, args.out)
    TrainingService.write_loss_curve(curve, args.loss_curve or Path(f"{args.out}.loss.csv"))
    log.info(f"Trained {settings.variant.value} on {len(train)} episodes, weights at {out}")
