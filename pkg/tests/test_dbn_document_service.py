import numpy as np
import pytest

from schemas.dbn import Layer
from services.dbn_document_service import DbnDocumentService
from templates import load_structure
from utils.errors import DocumentParseError, MissingArtifactError


def test_document_reads_back(chain_model):
    text = DbnDocumentService.serialize(chain_model)
    loaded = DbnDocumentService.deserialize(text)
    assert loaded.structure.edge_key() == chain_model.structure.edge_key()
    for name, cpt in chain_model.intra_cpts.items():
        assert np.allclose(loaded.intra_cpts[name].table, cpt.table, atol=1e-11)
    assert np.allclose(loaded.inter_cpts["O"].table, chain_model.inter_cpts["O"].table, atol=1e-11)
    assert loaded.sample_count == chain_model.sample_count


def test_write_and_read(chain_model, tmp_path):
    first = DbnDocumentService.write(chain_model, tmp_path / "a" / "chain.dbn")
    second = DbnDocumentService.write(chain_model, tmp_path / "b" / "chain.dbn")
    assert first.read_bytes() == second.read_bytes()
    assert DbnDocumentService.read(first).structure.names == ["S", "O", "R"]


def test_missing_document(tmp_path):
    with pytest.raises(MissingArtifactError):
        DbnDocumentService.read(tmp_path / "absent.dbn")


def test_row_that_does_not_sum_to_one(chain_model):
    text = DbnDocumentService.serialize(chain_model)
    lines = text.splitlines()
    at = lines.index("[cpt S]") + 2
    lines[at] = "- = 0.5 0.6"
    with pytest.raises(DocumentParseError, match="row sums"):
        DbnDocumentService.deserialize("\n".join(lines))


def test_structure_only_document(chain_structure):
    text = DbnDocumentService.serialize_structure(chain_structure)
    assert DbnDocumentService.deserialize_structure(text).edge_key() == chain_structure.edge_key()
    with pytest.raises(DocumentParseError):
        DbnDocumentService.deserialize(text)


@pytest.mark.parametrize("text", [
    "[nodes]\nS = 2 S\n",
    "schema_version = 9\n[nodes]\nS = 2 S\n",
    "schema_version = 1\n[nodes]\nS = two S\n",
    "schema_version = 1\n[nodes]\nS = 2 S\nO = 2 O\n[intra_edges]\nS -> O\nO -> S\n",
    "schema_version = 1\n[nodes]\nS = 2 S\n[inter_edges]\nS -> X\n",
])
def test_malformed_structures(text):
    with pytest.raises(DocumentParseError):
        DbnDocumentService.deserialize_structure(text)


def test_bundled_ordinary_structure(codec):
    structure = load_structure("ordinary", codec)
    assert structure.names == codec.node_names
    assert structure.inter_edges == []
    assert ("Emo_cluster", "Ego_a") in structure.intra_edges
    assert structure.node("Emo_cluster").layer == Layer.ORGANISM
    with pytest.raises(ValueError):
        load_structure("unknown")
