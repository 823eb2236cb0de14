"""Knowledge graph storage: entities, relations, triples, adjacency.

Triples carry a unique edge id (edge_uid) so each concrete edge — including
augmented inverse edges and per-entity stop self-loops — can own a learned
embedding. After augmentation the graph is immutable and safe to share.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    ContractError,
    EmptyGraphError,
    GraphLookupError,
    ParseError,
)

STOP_RELATION_LABEL = "__stop__"
INVERSE_SUFFIX = "__inv"

FORWARD = "forward"
INVERSE = "inverse"
SELF_LOOP = "self_loop"


@dataclass(frozen=True)
class ActionEdge:
    relation_id: int
    edge_uid: int
    target_entity_id: int
    kind: str


@dataclass
class KnowledgeGraph:
    entity_labels: list[str] = field(default_factory=list)
    entity_keys: list[str] = field(default_factory=list)
    relation_labels: list[str] = field(default_factory=list)
    triples: list[tuple[int, int, int, int]] = field(default_factory=list)
    augmented: bool = False
    n_base_triples: int = 0
    stop_relation_id: int | None = None
    _entity_index: dict[str, int] = field(default_factory=dict, repr=False)
    _adjacency: list[list[ActionEdge]] | None = field(default=None, repr=False)

    @property
    def n_entities(self) -> int:
        return len(self.entity_labels)

    @property
    def n_relations(self) -> int:
        return len(self.relation_labels)

    @property
    def n_edges(self) -> int:
        return len(self.triples)

    def entity_id(self, key: str) -> int:
        try:
            return self._entity_index[key]
        except KeyError:
            raise GraphLookupError(f"unknown entity '{key}'") from None

    def has_entity(self, key: str) -> bool:
        return key in self._entity_index

    def rebuild_indexes(self) -> None:
        self._entity_index = {key: i for i, key in enumerate(self.entity_keys)}
        self._adjacency = None


def _intern(label: str, labels: list[str], index: dict[str, int]) -> int:
    if label in index:
        return index[label]
    idx = len(labels)
    labels.append(label)
    index[label] = idx
    return idx


def load_triples(path) -> KnowledgeGraph:
    """Parse a tab-separated `head<TAB>relation<TAB>tail` file into a graph.

    Lines starting with '#' are comments; duplicate triples collapse to one.
    Edge uids follow first-appearance file order.
    """
    path = Path(path)
    entity_labels: list[str] = []
    entity_index: dict[str, int] = {}
    relation_labels: list[str] = []
    relation_index: dict[str, int] = {}
    triples: list[tuple[int, int, int, int]] = []
    seen: set[tuple[int, int, int]] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(p.strip() for p in parts):
                raise ParseError(f"{path}:{lineno}: expected 'head<TAB>relation<TAB>tail'")
            head, relation, tail = (p.strip() for p in parts)
            h = _intern(head, entity_labels, entity_index)
            r = _intern(relation, relation_labels, relation_index)
            t = _intern(tail, entity_labels, entity_index)
            key = (h, r, t)
            if key in seen:
                continue
            seen.add(key)
            triples.append((h, r, t, len(triples)))
    if not triples:
        raise EmptyGraphError(f"{path}: no triples found")
    graph = KnowledgeGraph(
        entity_labels=entity_labels,
        entity_keys=list(entity_labels),
        relation_labels=relation_labels,
        triples=triples,
        n_base_triples=len(triples),
    )
    graph.rebuild_indexes()
    return graph


def save_triples(graph: KnowledgeGraph, path) -> None:
    """Write the base (pre-augmentation) triples back out in uid order."""
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t, _uid in graph.triples[:graph.n_base_triples]:
            fh.write(f"{graph.entity_labels[h]}\t{graph.relation_labels[r]}\t"
                     f"{graph.entity_labels[t]}\n")


def augment(graph: KnowledgeGraph) -> KnowledgeGraph:
    """Add inverse edges and per-entity stop self-loops, in place.

    After this call the edge list has exactly 2*|base triples| + |entities|
    entries, each with a fresh edge_uid.
    """
    if graph.augmented:
        raise ContractError("graph is already augmented")
    base = list(graph.triples)
    inverse_ids: dict[int, int] = {}
    for r, label in enumerate(list(graph.relation_labels)):
        inv_label = label + INVERSE_SUFFIX
        inverse_ids[r] = len(graph.relation_labels)
        graph.relation_labels.append(inv_label)
    next_uid = len(base)
    for h, r, t, _uid in base:
        graph.triples.append((t, inverse_ids[r], h, next_uid))
        next_uid += 1
    stop_id = len(graph.relation_labels)
    graph.relation_labels.append(STOP_RELATION_LABEL)
    graph.stop_relation_id = stop_id
    for e in range(graph.n_entities):
        graph.triples.append((e, stop_id, e, next_uid))
        next_uid += 1
    graph.augmented = True
    graph._adjacency = None
    return graph


def _build_adjacency(graph: KnowledgeGraph) -> list[list[ActionEdge]]:
    adjacency: list[list[ActionEdge]] = [[] for _ in range(graph.n_entities)]
    n_forward = graph.n_base_triples
    n_inverse = 2 * graph.n_base_triples
    for h, r, t, uid in graph.triples:
        if uid < n_forward:
            kind = FORWARD
        elif uid < n_inverse:
            kind = INVERSE
        else:
            kind = SELF_LOOP
        adjacency[h].append(ActionEdge(r, uid, t, kind))
    for edges in adjacency:
        edges.sort(key=lambda e: e.edge_uid)
    return adjacency


def out_edges(graph: KnowledgeGraph, entity_id: int) -> list[ActionEdge]:
    """All outgoing edges of an entity in stable edge_uid order."""
    if not graph.augmented:
        raise ContractError("out_edges requires an augmented graph")
    if not 0 <= entity_id < graph.n_entities:
        raise GraphLookupError(f"unknown entity id {entity_id}")
    if graph._adjacency is None:
        graph._adjacency = _build_adjacency(graph)
    return graph._adjacency[entity_id]


def nearest_entity_keys(graph: KnowledgeGraph, key: str, limit: int = 5) -> list[str]:
    """Closest known entity keys to an unresolved one, for error payloads."""
    import difflib

    return difflib.get_close_matches(key, graph.entity_keys, n=limit, cutoff=0.3)


def save_snapshot(graph: KnowledgeGraph, path, rng_seed: int, config_hash: str) -> None:
    """Persist the full (augmented) graph with the checkpoint header convention."""
    doc = {
        "header": {
            "format_version": 1,
            "rng_seed": int(rng_seed),
            "config_hash": config_hash,
        },
        "entity_labels": graph.entity_labels,
        "entity_keys": graph.entity_keys,
        "relation_labels": graph.relation_labels,
        "triples": [list(t) for t in graph.triples],
        "augmented": graph.augmented,
        "n_base_triples": graph.n_base_triples,
        "stop_relation_id": graph.stop_relation_id,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_snapshot(path) -> KnowledgeGraph:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid graph snapshot: {exc}") from exc
    graph = KnowledgeGraph(
        entity_labels=list(doc["entity_labels"]),
        entity_keys=list(doc["entity_keys"]),
        relation_labels=list(doc["relation_labels"]),
        triples=[tuple(t) for t in doc["triples"]],
        augmented=bool(doc["augmented"]),
        n_base_triples=int(doc["n_base_triples"]),
        stop_relation_id=doc["stop_relation_id"],
    )
    graph.rebuild_indexes()
    return graph
