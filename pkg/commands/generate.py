from commands.common import described, emotion, parse_list
from schemas.run_config import GenerateConfig, RunConfig
from services.scenario_service import ScenarioService
from settings import with_overrides
from utils.logger_factory import new_logger

log = new_logger("generate_command")


def register(subparsers) -> None:
    p = subparsers.add_parser("generate", help="generate a synthetic pre-crash dataset")
    p.add_argument("--out", required=True, help="dataset directory to write")
    p.add_argument("--episodes", type=int, help=described("episodes per scenario and emotion", GenerateConfig,
                                                         "episodes"))
    p.add_argument("--scenarios", type=parse_list(int),
                   help=described("comma-separated scenario ids", GenerateConfig, "scenarios"))
    p.add_argument("--emotions", type=parse_list(emotion),
                   help=described("comma-separated emotion profiles", GenerateConfig, "emotions"))
    p.add_argument("--seed", type=int, help=described("first seed", GenerateConfig, "seed"))
    p.add_argument("--duration", type=float, help=described("episode length in seconds", GenerateConfig,
                                                            "duration"))
    p.add_argument("--trigger-time", type=float, help=described("trigger time in seconds", GenerateConfig,
                                                                "trigger_time"))
    p.add_argument("--workers", type=int, default=1, help="episodes generated concurrently (default: 1)")
    p.set_defaults(handler=run)


def run(args, config: RunConfig) -> None:
    settings = with_overrides(
        config.generate,
        episodes=args.episodes,
        scenarios=args.scenarios,
        emotions=args.emotions,
        seed=args.seed,
        duration=args.duration,
        trigger_time=args.trigger_time,
    )
    manifest = ScenarioService.generate_dataset(settings, args.out, args.workers)
    log.info(f"Dataset {args.out} holds {len(manifest.configs)} episodes")
