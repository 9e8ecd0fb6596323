from commands.common import load_episodes, load_frames, load_models, parse_list
from commands.discretize import discretizer_settings
from commands.train import add_train_flags, train_settings
from schemas.predictor import VARIANT_DBN
from schemas.run_config import AblationConfig, RunConfig, Variant
from services.ablation_service import VARIANT_ORDER, AblationService
from settings import with_overrides
from utils.logger_factory import new_logger

log = new_logger("ablate_command")


def register(subparsers) -> None:
    p = subparsers.add_parser("ablate", help="train and compare the P, CP and CPSOR variants")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--frames", help="frames directory (default: <dataset>/frames)")
    p.add_argument("--dbn-dir", help="learn-dbn output directory; required by cp and cpsor")
    p.add_argument("--variants", type=parse_list(Variant),
                   help="comma-separated variants (default: p,cp,cpsor)")
    p.add_argument("--horizons", type=parse_list(float), help="comma-separated horizons in seconds "
                                                                "(default: 1.0,2.0,3.0)")
    p.add_argument("--seeds", type=parse_list(int), help="comma-separated repetition seeds (default: 0,1,2,3,4)")
    p.add_argument("--out", required=True, help="directory for ablation.csv and ablation.md")
    p.add_argument("--workers", type=int, default=1, help="trainings run concurrently (default: 1)")
    add_train_flags(p)
    p.set_defaults(handler=run)


def run(args, config: RunConfig) -> None:
    ablation: AblationConfig = with_overrides(config.ablation, horizons=args.horizons, seeds=args.seeds)
    training = train_settings(args, config)
    codec = discretizer_settings(args, config).codec()
    variants = args.variants or VARIANT_ORDER
    episodes = load_episodes(args.dataset)

    frames, models = None, {}
    needed = tuple(sorted({VARIANT_DBN[v] for v in variants} - {None}))
    if needed:
        models = load_models(args.dbn_dir, tags=needed, required=True)
        frames = load_frames(args.dataset, args.frames, codec)

    result = AblationService.run_ablation(
        episodes, codec, training, ablation, config.graph.d_close, frames, models, variants, args.workers
    )
    AblationService.write(result, args.out)
    log.info(f"Ablation table with {len(result.table)} rows written to {args.out}")
