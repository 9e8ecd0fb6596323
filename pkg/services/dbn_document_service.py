"""
Text document format for DBN structures and fitted models.

    schema_version = 1
    sample_count = 1000
    alpha = 0

    [nodes]
    Emo_cluster = 3 O | Anger Neutral Fright

    [intra_edges]
    Npc_a -> Emo_cluster

    [inter_edges]
    Emo_cluster -> Emo_cluster

    [cpt Emo_cluster]
    parents = Npc_a
    0 = 0.2 0.5 0.3

    [transition Emo_cluster]
    parents = Emo_cluster@t-1 Npc_a
    0,0 = 0.9 0.05 0.05

Row keys are the comma-joined parent states ("-" without parents); probabilities are
written with 12 significant digits. A document without cpt sections describes a structure only.
"""
import itertools
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from schemas.dbn import SCHEMA_VERSION, Cpt, DbnModel, DbnStructure, Layer, NodeSpec, previous
from utils.errors import DocumentParseError, MissingArtifactError
from utils.logger_factory import new_logger
from utils.number_format import MODEL_DIGITS, format_row, format_sig

log = new_logger("dbn_document_service")

READ_ROW_TOLERANCE = 1e-9


def _row_key(states: Tuple[int, ...]) -> str:
    return ",".join(str(s) for s in states) if states else "-"


def _cpt_lines(cpt: Cpt) -> List[str]:
    lines = [f"parents = {' '.join(cpt.parents)}".rstrip()]
    configs = itertools.product(*[range(c) for c in cpt.parent_cardinalities]) if cpt.parents else [()]
    for i, states in enumerate(configs):
        lines.append(f"{_row_key(states)} = {format_row(cpt.table[i], MODEL_DIGITS)}")
    return lines


class DbnDocumentService:

    @staticmethod
    def serialize_structure(structure: DbnStructure, header: Optional[Dict[str, str]] = None) -> str:
        lines = [f"schema_version = {SCHEMA_VERSION}"]
        for key, value in (header or {}).items():
            lines.append(f"{key} = {value}")
        lines += ["", "[nodes]"]
        for spec in structure.nodes:
            states = f" | {' '.join(spec.states)}" if spec.states else ""
            lines.append(f"{spec.name} = {spec.cardinality} {spec.layer.value}{states}")
        lines += ["", "[intra_edges]"] + [f"{u} -> {v}" for u, v in sorted(structure.intra_edges)]
        lines += ["", "[inter_edges]"] + [f"{u} -> {v}" for u, v in sorted(structure.inter_edges)]
        return "\n".join(lines) + "\n"

    @staticmethod
    def serialize(model: DbnModel) -> str:
        """Full document; identical models give byte-identical text."""
        header = {"sample_count": str(model.sample_count), "alpha": format_sig(model.alpha, MODEL_DIGITS)}
        parts = [DbnDocumentService.serialize_structure(model.structure, header)]
        for name in model.structure.names:
            parts.append("\n".join([f"[cpt {name}]"] + _cpt_lines(model.intra_cpts[name])) + "\n")
            if name in model.inter_cpts:
                parts.append("\n".join([f"[transition {name}]"] + _cpt_lines(model.inter_cpts[name])) + "\n")
        return "\n".join(parts)

    @staticmethod
    def _sections(text: str) -> Tuple[Dict[str, str], List[Tuple[str, List[Tuple[int, str]]]]]:
        header: Dict[str, str] = {}
        sections: List[Tuple[str, List[Tuple[int, str]]]] = []
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                sections.append((line[1:-1].strip(), []))
            elif sections:
                sections[-1][1].append((number, line))
            else:
                key, sep, value = line.partition("=")
                if not sep:
                    raise DocumentParseError(f"line {number}: expected 'key = value' in header")
                header[key.strip()] = value.strip()
        return header, sections

    @staticmethod
    def _parse_structure(header: Dict[str, str], sections) -> DbnStructure:
        version = header.get("schema_version")
        if version is None:
            raise DocumentParseError("missing schema_version")
        if version != str(SCHEMA_VERSION):
            raise DocumentParseError(f"unsupported schema_version {version}, expected {SCHEMA_VERSION}")

        by_name = {name: lines for name, lines in sections}
        if "nodes" not in by_name:
            raise DocumentParseError("missing [nodes] section")
        nodes = []
        for number, line in by_name["nodes"]:
            name, sep, rest = line.partition("=")
            spec, _, states = rest.partition("|")
            fields = spec.split()
            if not sep or len(fields) != 2:
                raise DocumentParseError(f"line {number}: expected 'name = cardinality layer [| states]'")
            try:
                nodes.append(NodeSpec(
                    name=name.strip(),
                    cardinality=int(fields[0]),
                    layer=Layer(fields[1]),
                    states=states.split() or None,
                ))
            except ValueError as e:
                raise DocumentParseError(f"line {number}: {e}")

        edges = {}
        for kind in ("intra_edges", "inter_edges"):
            edges[kind] = []
            for number, line in by_name.get(kind, []):
                u, sep, v = line.partition("->")
                if not sep:
                    raise DocumentParseError(f"line {number}: expected 'parent -> child'")
                edges[kind].append((u.strip(), v.strip()))
        try:
            return DbnStructure(nodes=nodes, intra_edges=edges["intra_edges"], inter_edges=edges["inter_edges"])
        except ValueError as e:
            raise DocumentParseError(f"invalid structure: {e}")

    @staticmethod
    def _parse_cpt(name: str, lines: List[Tuple[int, str]], expected_parents: List[str],
                   cards: List[int], card: int) -> Cpt:
        if not lines or not lines[0][1].startswith("parents"):
            raise DocumentParseError(f"CPT {name}: first line must list parents")
        parents = lines[0][1].partition("=")[2].split()
        if parents != expected_parents:
            raise DocumentParseError(f"CPT {name}: parents {parents} do not match structure {expected_parents}")
        n_rows = int(np.prod(cards)) if cards else 1
        table = np.full((n_rows, card), np.nan)
        for number, line in lines[1:]:
            key, sep, values = line.partition("=")
            key = key.strip()
            try:
                states = () if key == "-" else tuple(int(s) for s in key.split(","))
                row = np.array([float(v) for v in values.split()])
                index = int(np.ravel_multi_index(states, tuple(cards))) if cards else 0
            except ValueError as e:
                raise DocumentParseError(f"line {number}: CPT {name}: {e}")
            if not sep or len(row) != card or len(states) != len(cards):
                raise DocumentParseError(f"line {number}: CPT {name}: malformed row")
            if np.any(row < 0) or not np.all(np.isfinite(row)):
                raise DocumentParseError(f"line {number}: CPT {name}: negative or non-finite probability")
            if abs(row.sum() - 1.0) > READ_ROW_TOLERANCE:
                raise DocumentParseError(f"line {number}: CPT {name}: row sums to {row.sum():.12g}, not 1")
            table[index] = row / row.sum()
        if np.isnan(table).any():
            raise DocumentParseError(f"CPT {name}: missing rows")
        return Cpt(child=name, parents=parents, parent_cardinalities=cards, table=table)

    @staticmethod
    def deserialize_structure(text: str) -> DbnStructure:
        header, sections = DbnDocumentService._sections(text)
        return DbnDocumentService._parse_structure(header, sections)

    @staticmethod
    def deserialize(text: str) -> DbnModel:
        """
        Parse a full document.

        Rows must sum to 1 within 1e-9 and are renormalized on read.
        """
        header, sections = DbnDocumentService._sections(text)
        structure = DbnDocumentService._parse_structure(header, sections)
        intra, inter = {}, {}
        for title, lines in sections:
            kind, _, name = title.partition(" ")
            if kind not in ("cpt", "transition"):
                continue
            if name not in structure.names:
                raise DocumentParseError(f"CPT for unknown node {name}")
            parents = structure.parents(name)
            cards = [structure.node(p).cardinality for p in parents]
            card = structure.node(name).cardinality
            if kind == "cpt":
                intra[name] = DbnDocumentService._parse_cpt(name, lines, parents, cards, card)
            else:
                inter[name] = DbnDocumentService._parse_cpt(name, lines, [previous(name)] + parents, [card] + cards, card)
        if not intra:
            raise DocumentParseError("document has no CPTs (structure only)")
        try:
            return DbnModel(
                structure=structure,
                intra_cpts=intra,
                inter_cpts=inter,
                sample_count=int(header.get("sample_count", 0)),
                alpha=float(header.get("alpha", 0.0)),
            )
        except ValueError as e:
            raise DocumentParseError(f"inconsistent model: {e}")

    @staticmethod
    def write(model: DbnModel, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(DbnDocumentService.serialize(model))
        log.info(f"Wrote DBN document {path}")
        return path

    @staticmethod
    def read(path) -> DbnModel:
        path = Path(path)
        if not path.exists():
            raise MissingArtifactError(f"DBN document not found: {path}")
        return DbnDocumentService.deserialize(path.read_text())
