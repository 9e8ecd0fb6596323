import numpy as np
import pytest

from schemas.cognitive import CognitiveCodec, EmoCluster
from schemas.dbn import Cpt, DbnModel, DbnStructure, Layer, NodeSpec, previous
from schemas.run_config import DiscretizerConfig
from schemas.scenario import ScenarioConfig
from services.dataset_service import DatasetService
from services.dbn_service import DbnService
from services.discretizer_service import DiscretizerService
from services.scenario_service import ScenarioService
from templates import load_structure

# Short episodes keep the suite fast; 6 s at 25 Hz is 150 steps
SHORT_DURATION = 6.0
SHORT_TRIGGER = 2.0


@pytest.fixture(scope="session")
def codec():
    return CognitiveCodec()


@pytest.fixture(scope="session")
def short_episodes():
    """One angry and one frightened episode for every scenario."""
    configs = [
        ScenarioConfig(scenario_id=s, emotion_profile=e, duration=SHORT_DURATION, trigger_time=SHORT_TRIGGER,
                       seed=7)
        for s in (1, 2, 3, 4)
        for e in (EmoCluster.ANGER, EmoCluster.FRIGHT)
    ]
    return [ScenarioService.generate_episode(c) for c in configs]


@pytest.fixture
def dataset_dir(tmp_path, short_episodes):
    directory = tmp_path / "dataset"
    for episode in short_episodes:
        DatasetService.write_episode(episode, directory)
    return directory


def random_cpt(child: str, parents, parent_cards, card: int, rng: np.random.Generator) -> Cpt:
    rows = int(np.prod(parent_cards)) if parent_cards else 1
    return Cpt(child=child, parents=list(parents), parent_cardinalities=list(parent_cards),
               table=rng.dirichlet(np.ones(card), size=rows))


def random_model(structure: DbnStructure, seed: int) -> DbnModel:
    """Model with Dirichlet(1) rows for every intra and transition CPT."""
    rng = np.random.default_rng(seed)
    intra, inter = {}, {}
    for spec in structure.nodes:
        parents = structure.parents(spec.name)
        cards = [structure.node(p).cardinality for p in parents]
        intra[spec.name] = random_cpt(spec.name, parents, cards, spec.cardinality, rng)
        if structure.has_inter(spec.name):
            inter[spec.name] = random_cpt(spec.name, [previous(spec.name)] + parents,
                                          [spec.cardinality] + cards, spec.cardinality, rng)
    return DbnModel(structure=structure, intra_cpts=intra, inter_cpts=inter)


@pytest.fixture
def chain_structure():
    """Stimulus -> Organism -> Response chain with a self transition on the organism node."""
    nodes = [
        NodeSpec(name="S", cardinality=2, layer=Layer.STIMULUS),
        NodeSpec(name="O", cardinality=3, layer=Layer.ORGANISM),
        NodeSpec(name="R", cardinality=2, layer=Layer.RESPONSE),
    ]
    return DbnStructure(nodes=nodes, intra_edges=[("S", "O"), ("O", "R")], inter_edges=[("O", "O")])


@pytest.fixture
def chain_model(chain_structure):
    return random_model(chain_structure, seed=3)


@pytest.fixture
def model_factory():
    return random_model


@pytest.fixture(scope="session")
def discretized(short_episodes):
    return DiscretizerService.discretize_dataset(short_episodes, DiscretizerConfig())


@pytest.fixture(scope="session")
def ordinary_model(discretized, codec):
    """Bundled ordinary structure fitted on the short episodes."""
    _, sequences = DbnService.frames_to_sequences(discretized.frames, codec)
    return DbnService.mle_fit(load_structure("ordinary", codec), sequences, alpha=1.0)
