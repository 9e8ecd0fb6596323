from typing import Dict, List

import numpy as np

from commands.common import load_episodes, load_frames, load_models
from commands.discretize import discretizer_settings
from schemas.run_config import RunConfig
from services.dbn_comparison_service import DbnComparisonService
from services.dbn_service import DbnService
from utils.logger_factory import new_logger

log = new_logger("compare_dbn_command")


def register(subparsers) -> None:
    p = subparsers.add_parser("compare-dbn", help="compare the SOR-DBN with the ordinary DBN")
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--frames", help="frames directory (default: <dataset>/frames)")
    p.add_argument("--dbn-dir", required=True, help="learn-dbn output directory holding sor.dbn and ordinary.dbn")
    p.add_argument("--out", required=True, help="directory for dbn_bic.csv, dbn_curves.csv and dbn_tv.csv")
    p.set_defaults(handler=run)


def run(args, config: RunConfig) -> None:
    codec = discretizer_settings(args, config).codec()
    models = load_models(args.dbn_dir, required=True)
    for model in models.values():
        DbnService.check_codec(model, codec)
    frames = load_frames(args.dataset, args.frames, codec)
    scenario_of = {e.episode_id: e.scenario_id for e in load_episodes(args.dataset)}

    ids, sequences = DbnService.frames_to_sequences(frames, codec)
    by_scenario: Dict[str, List[np.ndarray]] = {}
    for episode_id, seq in zip(ids, sequences):
        if episode_id in scenario_of:
            by_scenario.setdefault(str(scenario_of[episode_id]), []).append(seq)
    report = DbnComparisonService.compare(by_scenario, models["sor"], models["ordinary"], config.dbn.alpha)
    DbnComparisonService.write(report, args.out)
    log.info(f"DBN comparison over {len(by_scenario)} scenarios written to {args.out}")
