"""
Candidate paths between query pairs and their labeled samples.

Path length is counted in nodes: candidates hold 3 or 4 nodes, i.e. one or
two intermediate concepts.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from dataclasses import field
from itertools import groupby
from typing import Dict
from typing import Iterable
from typing import List
from typing import Optional
from typing import Sequence
from typing import Set

import networkx as nx
import numpy as np

from .config import sub_seed
from .exceptions import CannotDiffer
from .exceptions import Disconnected
from .exceptions import DirectEdgePresent
from .exceptions import EmptyPool
from .exceptions import EndpointMismatch
from .exceptions import HgcrError
from .exceptions import NoFutureEvidence
from .exceptions import UnknownConcept
from .kgraph import SnapshotView
from .kgraph import TemporalGraph
from .kgraph import edge_key
from .logger import logger
from .models import EdgeContext
from .models import Label
from .models import LabeledPathSample
from .models import NegativeKind
from .models import Path
from .models import Query
from .models import QueryReport

MIN_NODES = 3
MAX_NODES = 4
CONTEXT_RETRIES = 100
DEFAULT_CAPS = {3: 100, 4: 100}


@dataclass
class FutureReferenceSet:
    query: Query
    terms: Set[str]
    abstracts: Set[str]


@dataclass
class DatasetResult:
    samples: List[LabeledPathSample] = field(default_factory=list)
    reports: List[QueryReport] = field(default_factory=list)

    @property
    def mean_negative_ratio(self) -> Optional[float]:
        ratios = [r.negative_ratio for r in self.reports if r.negative_ratio is not None]
        return float(np.mean(ratios)) if ratios else None


def _future_docs(g: TemporalGraph, q: Query):
    both = set(g.mentions(q.source, q.t)) & set(g.mentions(q.target, q.t))
    return sorted(
        (g.document(d) for d in both if g.document(d).year == q.t),
        key=lambda d: d.doc_id,
    )


def future_reference(g: TemporalGraph, q: Query) -> FutureReferenceSet:
    docs = _future_docs(g, q)
    if not docs:
        raise NoFutureEvidence(
            f"no document of {q.t} mentions both {q.source} and {q.target}"
        )
    terms = set()
    for doc in docs:
        terms.update(doc.concepts)
    terms -= {q.source, q.target}
    return FutureReferenceSet(
        query=q, terms=terms, abstracts={d.doc_id for d in docs}
    )


def discover_queries(g: TemporalGraph, split_year: int) -> List[Query]:
    """
    Pairs whose co-occurrence first appears at a year >= split_year while
    both concepts were already mentioned before split_year.
    """
    queries = []
    for u, v in g.edges():
        first = g.first_year(u, v)
        seen = max(g.concept_first_year(u), g.concept_first_year(v))
        if first >= split_year and seen < split_year:
            queries.append(Query(source=u, target=v, t=first))
    return sorted(queries, key=lambda q: (q.t, q.source, q.target))


def _edge_contexts(view: SnapshotView, nodes: Sequence[str]) -> List[EdgeContext]:
    return [
        EdgeContext(u=u, v=v, doc_ids=[d for d, _y in view.edge_evidence(u, v)])
        for u, v in zip(nodes, nodes[1:])
    ]


def enumerate_candidate_paths(
    view: SnapshotView,
    q: Query,
    max_nodes: int = MAX_NODES,
    cap_per_length: Optional[int] = None,
) -> List[Path]:
    """
    All simple paths with 3..max_nodes nodes from source to target.

    Paths are grouped by node count, ordered lexicographically inside a
    group and truncated to cap_per_length per group.
    """
    if max_nodes not in (3, 4):
        raise ValueError(f"max_nodes must be 3 or 4, got {max_nodes}")
    for concept in (q.source, q.target):
        if concept not in view.graph:
            raise UnknownConcept(f"unknown concept {concept!r}")
    if view.has_edge(q.source, q.target):
        raise DirectEdgePresent(
            f"{q.source} - {q.target} already linked at t={view.t}"
        )

    found = nx.all_simple_paths(view.graph, q.source, q.target, cutoff=max_nodes - 1)
    ordered = sorted((p for p in found if len(p) >= MIN_NODES), key=lambda p: (len(p), p))
    if not ordered:
        raise Disconnected(
            f"no path of at most {max_nodes} nodes between {q.source} and {q.target}"
        )

    paths = []
    for _length, group in groupby(ordered, key=len):
        group = list(group)
        if cap_per_length is not None:
            group = group[:cap_per_length]
        paths.extend(Path(nodes=p, edge_contexts=_edge_contexts(view, p)) for p in group)
    return paths


def label_path(p: Path, fr: FutureReferenceSet) -> Label:
    if p.nodes[0] != fr.query.source or p.nodes[-1] != fr.query.target:
        raise EndpointMismatch(
            f"path {p.nodes} does not join {fr.query.source} and {fr.query.target}"
        )
    if set(p.intermediates) <= fr.terms:
        return Label.POSITIVE
    return Label.NEGATIVE


def _node_contexts(view: SnapshotView, u: str, v: str, fallback: str, size: int):
    if view.has_edge(u, v):
        return [d for d, _y in view.edge_evidence(u, v)]
    # replacement pair is not an edge: fall back to documents of the new node
    docs = view.mentions(fallback)
    return docs[: max(size, 1)]


def corrupt_path(
    p: Path, node_pool: Iterable[str], rng_seed: int, view: SnapshotView
) -> Path:
    """
    Replace one intermediate node by a uniform draw from node_pool. Pool
    members no document of the view mentions are left out.
    """
    pool = sorted(n for n in set(node_pool) - set(p.nodes) if view.mentions(n))
    if not pool:
        raise EmptyPool(f"no replacement candidate for path {p.nodes}")
    rng = np.random.default_rng(rng_seed)
    position = 1 + int(rng.integers(len(p.intermediates)))
    replacement = pool[int(rng.integers(len(pool)))]

    nodes = list(p.nodes)
    nodes[position] = replacement
    contexts = list(p.edge_contexts)
    if len(contexts) != len(p.edges):
        contexts = [EdgeContext(u=u, v=v) for u, v in p.edges]
    for edge_index in (position - 1, position):
        u, v = nodes[edge_index], nodes[edge_index + 1]
        size = len(contexts[edge_index].doc_ids)
        contexts[edge_index] = EdgeContext(
            u=u, v=v, doc_ids=_node_contexts(view, u, v, replacement, size)
        )
    return Path(nodes=nodes, edge_contexts=contexts)


def corrupt_context(
    p: Path, query: Query, view: SnapshotView, rng_seed: int
) -> LabeledPathSample:
    """
    Pair a positive path with documents drawn per node, ignoring whether the
    documents mention the neighbouring nodes too.
    """
    positive = set(p.context_doc_ids())
    per_node = [view.mentions(n) for n in p.nodes]
    if all(set(docs) <= positive for docs in per_node):
        raise CannotDiffer(f"every document of {p.nodes} is already in its context")

    rng = np.random.default_rng(rng_seed)
    for _attempt in range(CONTEXT_RETRIES):
        drawn = [docs[int(rng.integers(len(docs)))] if docs else None for docs in per_node]
        if not set(d for d in drawn if d) <= positive:
            break
    else:
        raise CannotDiffer(
            f"no differing context for {p.nodes} after {CONTEXT_RETRIES} draws"
        )

    edge_contexts = []
    for i, (u, v) in enumerate(p.edges):
        docs = [d for d in (drawn[i], drawn[i + 1]) if d]
        edge_contexts.append(EdgeContext(u=u, v=v, doc_ids=list(dict.fromkeys(docs))))
    corrupted = Path(nodes=list(p.nodes), edge_contexts=edge_contexts)
    return LabeledPathSample(
        query=query,
        path=corrupted,
        contexts=corrupted.context_doc_ids(),
        label=Label.NEGATIVE,
        negative_kind=NegativeKind.CORRUPTED_CONTEXT,
    )


def _sample(q: Query, p: Path, label: Label, kind: NegativeKind) -> LabeledPathSample:
    return LabeledPathSample(
        query=q, path=p, contexts=p.context_doc_ids(), label=label, negative_kind=kind
    )


def query_samples(
    g: TemporalGraph,
    q: Query,
    caps: Dict[int, int],
    rng_seed: int,
    training: bool = True,
    sampling_year: Optional[int] = None,
    max_nodes: int = MAX_NODES,
):
    view = g.snapshot(q.t - 1 if sampling_year is None else sampling_year)
    report = QueryReport(query=q)
    fr = future_reference(g, q)
    candidates = enumerate_candidate_paths(view, q, max_nodes=max_nodes)

    positives, hard = [], []
    for path in candidates:
        if label_path(path, fr) is Label.POSITIVE:
            positives.append(_sample(q, path, Label.POSITIVE, NegativeKind.NONE))
        else:
            hard.append(_sample(q, path, Label.NEGATIVE, NegativeKind.HARD))

    kept_hard = []
    for length, group in groupby(hard, key=lambda s: s.path.node_length):
        kept_hard.extend(list(group)[: caps.get(length, 0)])

    corrupted = []
    if training:
        pool = view.active_nodes()
        for index, positive in enumerate(positives):
            seed = sub_seed(rng_seed, "corrupt_path", q.key, index)
            try:
                path = corrupt_path(positive.path, pool - set(positive.path.nodes), seed, view)
                corrupted.append(
                    _sample(q, path, Label.NEGATIVE, NegativeKind.CORRUPTED_PATH)
                )
                report.corrupted_paths += 1
            except EmptyPool as e:
                report.warnings.append(str(e))
            seed = sub_seed(rng_seed, "corrupt_context", q.key, index)
            try:
                corrupted.append(corrupt_context(positive.path, q, view, seed))
                report.corrupted_contexts += 1
            except CannotDiffer as e:
                report.warnings.append(str(e))

    report.positives = len(positives)
    report.hard_negatives = len(kept_hard)
    negatives = len(kept_hard) + len(corrupted)
    report.negative_ratio = negatives / len(positives) if positives else None
    return positives + kept_hard + corrupted, report


def build_dataset(
    g: TemporalGraph,
    queries: Sequence[Query],
    caps: Optional[Dict[int, int]] = None,
    rng_seed: int = 0,
    training: bool = True,
    sampling_year: Optional[int] = None,
    max_nodes: int = MAX_NODES,
    workers: int = 1,
) -> DatasetResult:
    """
    Labeled samples for every query; failing queries land in the report.

    Test datasets (training=False) hold positives and hard negatives only.
    """
    caps = DEFAULT_CAPS if caps is None else caps

    def run(q: Query):
        try:
            return query_samples(
                g, q, caps, rng_seed, training, sampling_year, max_nodes
            )
        except HgcrError as e:
            logger.warning(f"query {q.key}: {e}")
            return [], QueryReport(query=q, error=f"{e.code}: {e}")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            outcomes = list(executor.map(run, queries))
    else:
        outcomes = [run(q) for q in queries]

    result = DatasetResult()
    for samples, report in outcomes:
        result.samples.extend(samples)
        result.reports.append(report)
    return result


def filter_expl_queries(g: TemporalGraph, queries: Iterable[Query]) -> List[Query]:
    """
    Keep queries whose endpoints share a future reference title or an
    annotated predicate in a future reference document.
    """
    kept = []
    for q in queries:
        pair = {q.source, q.target}
        for doc in _future_docs(g, q):
            titled = pair <= set(doc.title_concepts)
            predicated = any(
                edge_key(p.subject, p.object) == edge_key(q.source, q.target)
                for p in doc.predicates
            )
            if titled or predicated:
                kept.append(q)
                break
    return kept
