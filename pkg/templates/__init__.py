"""
Bundled DBN structure documents.
"""
from pathlib import Path

from schemas.cognitive import CognitiveCodec
from schemas.dbn import DbnStructure
from services.dbn_document_service import DbnDocumentService

TEMPLATE_DIR = Path(__file__).parent

# Template registry - maps structure names to bundled documents
TEMPLATE_REGISTRY = {
    "ordinary": TEMPLATE_DIR / "ordinary_dbn.dbn",
}


def load_structure(name: str, codec: CognitiveCodec = None) -> DbnStructure:
    """
    Load a bundled structure.

    With a codec, node specs are replaced by the codec's (bin range, Behavior on/off) and
    edges touching a node the codec does not have are dropped.
    """
    if name not in TEMPLATE_REGISTRY:
        raise ValueError(f"unknown structure template {name}, known: {sorted(TEMPLATE_REGISTRY)}")
    structure = DbnDocumentService.deserialize_structure(TEMPLATE_REGISTRY[name].read_text())
    if codec is None:
        return structure
    nodes = codec.node_specs()
    known = {n.name for n in nodes}
    return DbnStructure(
        nodes=nodes,
        intra_edges=[(u, v) for u, v in structure.intra_edges if u in known and v in known],
        inter_edges=[(u, v) for u, v in structure.inter_edges if u in known],
    )
