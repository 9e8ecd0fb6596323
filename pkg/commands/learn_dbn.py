import argparse
from pathlib import Path
from typing import Dict, List

import numpy as np

from commands.common import DBN_FILES, described, frames_dir, load_episodes
from commands.discretize import discretizer_settings
from schemas.cognitive import CognitiveCodec
from schemas.dbn import Penalty, Prior
from schemas.run_config import DbnSearchConfig, RunConfig
from services.dbn_document_service import DbnDocumentService
from services.dbn_service import DbnService
from services.discretizer_service import DiscretizerService
from services.structure_search_service import StructureSearchService
from settings import with_overrides
from templates import load_structure
from utils.errors import DbnError
from utils.logger_factory import new_logger

log = new_logger("learn_dbn_command")


def register(subparsers) -> None:
    p = subparsers.add_parser("learn-dbn", help="learn the SOR-DBN and fit the ordinary baseline")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--frames", help="frames directory; discretized on the fly when missing "
                                    "(default: <dataset>/frames)")
    p.add_argument("--out", required=True, help="directory for DBN documents and BIC logs")
    p.add_argument("--prior", choices=[p.value for p in Prior],
                   help=described("structure prior", DbnSearchConfig, "prior"))
    p.add_argument("--penalty", choices=[p.value for p in Penalty],
                   help=described("BIC penalty guiding the search", DbnSearchConfig, "penalty"))
    p.add_argument("--restarts", type=int, help=described("search restarts", DbnSearchConfig, "restarts"))
    p.add_argument("--seed", type=int, help=described("restart seed", DbnSearchConfig, "seed"))
    p.add_argument("--alpha", type=float, help=described("CPT smoothing pseudo-count", DbnSearchConfig, "alpha"))
    p.add_argument("--search-inter", action=argparse.BooleanOptionalAction,
                   help=described("search self transition edges", DbnSearchConfig, "search_inter"))
    p.add_argument("--max-parents", type=int, help=described("parents per node", DbnSearchConfig, "max_parents"))
    p.add_argument("--per-scenario", action=argparse.BooleanOptionalAction,
                   help=described("also learn one model per scenario", DbnSearchConfig, "per_scenario"))
    p.add_argument("--workers", type=int, default=1, help="episode files read concurrently (default: 1)")
    p.set_defaults(handler=run)


def learn(sequences: List[np.ndarray], codec: CognitiveCodec, settings: DbnSearchConfig, out: Path) -> None:
    """Search, fit the bundled ordinary structure on the same data and write both documents and the BIC log."""
    if not sequences or not any(len(s) for s in sequences):
        raise DbnError("cannot learn a DBN from an empty dataset")
    result = StructureSearchService.search(
        codec.node_specs(),
        sequences,
        prior=settings.prior,
        seed=settings.seed,
        restarts=settings.restarts,
        penalty=settings.penalty,
        alpha=settings.alpha,
        search_inter=settings.search_inter,
        start_edge_probability=settings.start_edge_probability,
        max_iterations=settings.max_iterations,
        max_parents=settings.max_parents,
    )
    out.mkdir(parents=True, exist_ok=True)
    learned = DBN_FILES["sor"] if settings.prior == Prior.SOR else "unconstrained.dbn"
    DbnDocumentService.write(result.model, out / learned)
    ordinary = DbnService.mle_fit(load_structure("ordinary", codec), sequences, settings.alpha)
    DbnDocumentService.write(ordinary, out / DBN_FILES["ordinary"])
    StructureSearchService.write_log(result.steps, out / "bic_log.csv")


def run(args, config: RunConfig) -> None:
    settings = with_overrides(
        config.dbn,
        prior=args.prior,
        penalty=args.penalty,
        restarts=args.restarts,
        seed=args.seed,
        alpha=args.alpha,
        search_inter=args.search_inter,
        max_parents=args.max_parents,
        per_scenario=args.per_scenario,
    )
    discretizer = discretizer_settings(argparse.Namespace(), config)
    codec = discretizer.codec()
    episodes = load_episodes(args.dataset, args.workers)
    if not episodes:
        raise DbnError(f"cannot learn a DBN from an empty dataset: {args.dataset}")

    source = frames_dir(args.dataset, args.frames)
    if source.is_dir():
        frames = DiscretizerService.read_frames(source, codec)
    else:
        log.info(f"No frames at {source}, discretizing {len(episodes)} episodes first")
        result = DiscretizerService.discretize_dataset(episodes, discretizer)
        DiscretizerService.write_result(result, source, codec)
        frames = result.frames

    ids, sequences = DbnService.frames_to_sequences(frames, codec)
    out = Path(args.out)
    learn(sequences, codec, settings, out)

    if settings.per_scenario:
        scenario_of = {e.episode_id: e.scenario_id for e in episodes}
        grouped: Dict[int, List[np.ndarray]] = {}
        for episode_id, seq in zip(ids, sequences):
            if episode_id in scenario_of:
                grouped.setdefault(scenario_of[episode_id], []).append(seq)
        for sid in sorted(grouped):
            learn(grouped[sid], codec, settings, out / f"scenario_{sid}")
    log.info(f"Wrote DBN documents to {out}")
