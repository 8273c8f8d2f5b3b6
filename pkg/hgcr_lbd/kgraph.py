"""
Temporal concept co-occurrence graph.

Two concepts are linked when they are mentioned in the same document; every
edge keeps the (doc_id, year) pairs that evidence it. A snapshot at year t
holds the edges first evidenced at a year <= t, so snapshots only grow.
"""
from collections import defaultdict
from itertools import combinations
from pathlib import Path
from typing import Dict
from typing import Iterable
from typing import List
from typing import Optional
from typing import Set
from typing import Tuple

import networkx as nx

from .exceptions import DuplicateDocument
from .exceptions import FrozenGraph
from .exceptions import InvalidDocument
from .exceptions import NoSuchEdge
from .exceptions import NotFrozen
from .exceptions import UnknownConcept
from .logger import logger
from .models import DocRecord
from .models import GraphStats
from .serialization import iter_records
from .serialization import write_records

Evidence = Tuple[str, int]


def edge_key(u: str, v: str) -> Tuple[str, str]:
    return (u, v) if u <= v else (v, u)


def evidence_order(evidence: Iterable[Evidence]) -> List[Evidence]:
    """Year descending, then doc_id ascending."""
    return sorted(evidence, key=lambda e: (-e[1], e[0]))


class TemporalGraph:
    def __init__(self, year_range: Optional[Tuple[int, int]] = None):
        self.year_range = year_range
        self.frozen = False
        self._graph = nx.Graph()
        self._docs: Dict[str, DocRecord] = {}
        self._mentions: Dict[str, List[str]] = defaultdict(list)

    @property
    def graph(self) -> nx.Graph:
        return self._graph

    @property
    def nodes(self) -> Set[str]:
        return set(self._graph.nodes)

    @property
    def documents(self) -> List[DocRecord]:
        return sorted(self._docs.values(), key=lambda d: (d.year, d.doc_id))

    def document(self, doc_id: str) -> DocRecord:
        try:
            return self._docs[doc_id]
        except KeyError:
            raise InvalidDocument(f"unknown document {doc_id!r}")

    def has_document(self, doc_id: str) -> bool:
        return doc_id in self._docs

    def edges(self) -> List[Tuple[str, str]]:
        return sorted(edge_key(u, v) for u, v in self._graph.edges)

    def first_year(self, u: str, v: str) -> int:
        if not self._graph.has_edge(u, v):
            raise NoSuchEdge(f"no edge {u} - {v}")
        return self._graph[u][v]["first_year"]

    def concept_first_year(self, concept: str) -> int:
        if concept not in self._graph:
            raise UnknownConcept(f"unknown concept {concept!r}")
        return self._graph.nodes[concept]["first_year"]

    def mentions(self, concept: str, t: Optional[int] = None) -> List[str]:
        """Documents mentioning a concept, ordered like edge evidence."""
        docs = [(d, self._docs[d].year) for d in self._mentions.get(concept, [])]
        if t is not None:
            docs = [e for e in docs if e[1] <= t]
        return [d for d, _year in evidence_order(docs)]

    def add_document(self, doc: DocRecord) -> "TemporalGraph":
        if self.frozen:
            raise FrozenGraph("graph is frozen, documents can no longer be added")
        if not doc.doc_id:
            raise InvalidDocument("document without doc_id")
        if doc.doc_id in self._docs:
            raise DuplicateDocument(f"document {doc.doc_id!r} already ingested")
        if self.year_range and not (
            self.year_range[0] <= doc.year <= self.year_range[1]
        ):
            raise InvalidDocument(
                f"document {doc.doc_id!r} year {doc.year} outside {self.year_range}"
            )
        concepts = sorted(set(doc.concepts))
        if len(concepts) != len(doc.concepts):
            logger.warning(f"document {doc.doc_id} lists duplicate concepts")
        if any(not c for c in concepts):
            raise InvalidDocument(f"document {doc.doc_id!r} has an empty concept id")

        self._docs[doc.doc_id] = doc
        for concept in concepts:
            if concept in self._graph:
                first = self._graph.nodes[concept]["first_year"]
                self._graph.nodes[concept]["first_year"] = min(first, doc.year)
            else:
                self._graph.add_node(concept, first_year=doc.year)
            self._mentions[concept].append(doc.doc_id)

        # self co-occurrence never creates an edge: concepts is a set
        for u, v in combinations(concepts, 2):
            if self._graph.has_edge(u, v):
                data = self._graph[u][v]
                data["evidence"].append((doc.doc_id, doc.year))
                data["first_year"] = min(data["first_year"], doc.year)
            else:
                self._graph.add_edge(
                    u, v, evidence=[(doc.doc_id, doc.year)], first_year=doc.year
                )
        return self

    def extend(self, docs: Iterable[DocRecord]) -> "TemporalGraph":
        for doc in docs:
            self.add_document(doc)
        return self

    def freeze(self) -> "TemporalGraph":
        if not self.frozen:
            self.frozen = True
            nx.freeze(self._graph)
        return self

    def snapshot(self, t: int) -> "SnapshotView":
        if not self.frozen:
            raise NotFrozen("snapshots require a frozen graph")
        return SnapshotView(self, t)

    def stats(self) -> GraphStats:
        years = [d.year for d in self._docs.values()]
        return GraphStats(
            nodes=self._graph.number_of_nodes(),
            edges=self._graph.number_of_edges(),
            documents=len(self._docs),
            min_year=min(years) if years else None,
            max_year=max(years) if years else None,
        )

    @classmethod
    def from_documents(
        cls, docs: Iterable[DocRecord], year_range: Optional[Tuple[int, int]] = None
    ) -> "TemporalGraph":
        return cls(year_range=year_range).extend(docs).freeze()

    @classmethod
    def load(cls, path) -> "TemporalGraph":
        """Build and freeze the graph from a line-delimited corpus file."""
        graph = cls().extend(iter_records(path, DocRecord)).freeze()
        stats = graph.stats()
        logger.info(
            f"loaded {stats.documents} documents from {Path(path).name}: "
            f"{stats.nodes} nodes, {stats.edges} edges"
        )
        return graph

    def save(self, path) -> int:
        return write_records(path, self.documents)


class SnapshotView:
    """Read-only view of the edges first evidenced at a year <= t."""

    def __init__(self, base: TemporalGraph, t: int):
        self.base = base
        self.t = t
        full = base.graph
        self.graph = nx.subgraph_view(
            full, filter_edge=lambda u, v: full[u][v]["first_year"] <= t
        )

    def _check_concept(self, c: str):
        if c not in self.graph:
            raise UnknownConcept(f"unknown concept {c!r}")

    def has_edge(self, u: str, v: str) -> bool:
        return self.graph.has_edge(u, v)

    def edges(self) -> List[Tuple[str, str]]:
        return sorted(edge_key(u, v) for u, v in self.graph.edges)

    def active_nodes(self) -> Set[str]:
        """Concepts mentioned by at least one document of year <= t."""
        return {
            n for n, first in self.graph.nodes(data="first_year") if first <= self.t
        }

    def neighbors(self, c: str) -> Set[str]:
        self._check_concept(c)
        return set(self.graph.neighbors(c))

    def edge_evidence(self, u: str, v: str) -> List[Evidence]:
        if not self.graph.has_edge(u, v):
            raise NoSuchEdge(f"no edge {u} - {v} at t={self.t}")
        evidence = self.graph[u][v]["evidence"]
        return evidence_order(e for e in evidence if e[1] <= self.t)

    def mentions(self, concept: str) -> List[str]:
        return self.base.mentions(concept, self.t)

    def two_hop(self, c: str) -> Set[str]:
        """Concepts within two hops of c, c excluded."""
        if c not in self.graph:
            return set()
        near = set(self.graph.neighbors(c))
        for n in list(near):
            near.update(self.graph.neighbors(n))
        near.discard(c)
        return near
