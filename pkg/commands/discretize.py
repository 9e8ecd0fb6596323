import argparse

from commands.common import described, frames_dir, load_episodes
from schemas.run_config import DiscretizerConfig, RunConfig
from services.discretizer_service import DiscretizerService
from settings import with_overrides
from utils.errors import DatasetLoadError
from utils.logger_factory import new_logger

log = new_logger("discretize_command")


def register(subparsers) -> None:
    p = subparsers.add_parser("discretize", help="label every frame of a dataset with cognitive states")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--out", help="frames directory (default: <dataset>/frames)")
    p.add_argument("--window-steps", type=int,
                   help=described("maneuver clustering window in steps", DiscretizerConfig, "window_steps"))
    p.add_argument("--ac-threshold", type=float,
                   help=described("autocorrelation threshold of the window report", DiscretizerConfig,
                                  "ac_threshold"))
    p.add_argument("--accel-bin-width", type=float,
                   help=described("acceleration bin width in m/s^2", DiscretizerConfig, "accel_bin_width"))
    p.add_argument("--include-behavior", action=argparse.BooleanOptionalAction,
                   help=described("keep the composite Behavior node", DiscretizerConfig, "include_behavior"))
    p.add_argument("--seed", type=int, help=described("k-means seed", DiscretizerConfig, "seed"))
    p.add_argument("--workers", type=int, default=1, help="episode files read concurrently (default: 1)")
    p.set_defaults(handler=run)


def discretizer_settings(args, config: RunConfig) -> DiscretizerConfig:
    return with_overrides(
        config.discretize,
        window_steps=getattr(args, "window_steps", None),
        ac_threshold=getattr(args, "ac_threshold", None),
        accel_bin_width=getattr(args, "accel_bin_width", None),
        include_behavior=getattr(args, "include_behavior", None),
        seed=getattr(args, "seed", None),
    )


def run(args, config: RunConfig) -> None:
    settings = discretizer_settings(args, config)
    episodes = load_episodes(args.dataset, args.workers)
    if not episodes:
        raise DatasetLoadError("dataset holds no episodes", path=args.dataset)
    result = DiscretizerService.discretize_dataset(episodes, settings)
    out = DiscretizerService.write_result(result, frames_dir(args.dataset, args.out), settings.codec())
    log.info(f"Wrote cognitive frames for {len(result.frames)} episodes to {out}")
