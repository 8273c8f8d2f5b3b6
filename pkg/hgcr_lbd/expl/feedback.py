"""
Explanation runs over one (query, path).

The feedback loop generates an explanation from the retrieved abstracts,
extracts and validates its predicates and, for every sentence owning an
implausible predicate, swaps the abstract that most likely caused it for
the closest unused abstract of the same edge. It stops when no sentence
needs rework or after max_iter iterations. Baseline and prompt-only runs
generate once.
"""
import time
from dataclasses import dataclass
from dataclasses import field
from typing import Callable
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence
from typing import Set
from typing import Tuple

from ..config import sub_seed
from ..embed import ConceptMeanEncoder
from ..embed import cosine
from ..exceptions import EndpointMismatch
from ..exceptions import ExhaustedCandidates
from ..exceptions import HgcrError
from ..exceptions import NoContext
from ..kgraph import SnapshotView
from ..logger import logger
from ..models import ExplainMode
from ..models import FeedbackTrace
from ..models import IterationRecord
from ..models import Path
from ..models import PromptTemplate
from ..models import Query
from ..models import Replacement
from ..models import UsageRecord
from ..text_utils import ConceptLexicon
from .clients import Explanation
from .clients import GenerationRequest
from .clients import LanguageModelClient
from .clients import generate
from .prompts import ContextDoc
from .prompts import Prompt
from .prompts import abstract_text
from .prompts import build_bare_prompt
from .prompts import build_prompt
from .validation import PlausibilityOracle
from .validation import PredicateExtractor
from .validation import extract_predicates
from .validation import flag_rework
from .validation import validate

PROMPT_ONLY_TEMPERATURE = 0.5
PROMPT_ONLY_TOP_P = 0.6

Edge = Tuple[str, str]


@dataclass
class ContextEntry:
    doc_id: str
    u: str
    v: str

    @property
    def edge(self) -> Edge:
        return self.u, self.v


@dataclass
class ContextSelection:
    entries: List[ContextEntry]
    candidates: Dict[Edge, List[str]]
    truncated: bool = False

    @property
    def doc_ids(self) -> List[str]:
        return [e.doc_id for e in self.entries]


class ContextWindow:
    """The abstracts currently shown to the model and every abstract shown
    so far in the trace."""

    def __init__(self, selection: ContextSelection):
        self.entries = list(selection.entries)
        self.candidates = selection.candidates
        self.used: Set[str] = set(selection.doc_ids)

    @property
    def doc_ids(self) -> List[str]:
        return [e.doc_id for e in self.entries]

    def context_docs(self, view: SnapshotView) -> List[ContextDoc]:
        return [
            ContextDoc(e.doc_id, abstract_text(view.base.document(e.doc_id)))
            for e in self.entries
        ]

    def replace(self, old_doc: str, new_doc: str):
        for index, entry in enumerate(self.entries):
            if entry.doc_id == old_doc:
                self.entries[index] = ContextEntry(new_doc, entry.u, entry.v)
                self.used.add(new_doc)
                return
        raise KeyError(old_doc)


@dataclass
class ExplainerSuite:
    """Everything a run talks to besides the query and the path."""

    client: LanguageModelClient
    extractor: PredicateExtractor
    oracle: PlausibilityOracle
    lexicon: ConceptLexicon
    encoder: ConceptMeanEncoder
    view: SnapshotView
    known: Set[Edge]
    usage: List[UsageRecord] = field(default_factory=list)
    sleep: Callable[[float], None] = time.sleep


@dataclass
class LoopSettings:
    k: int = 7
    max_iter: int = 5
    template: PromptTemplate = PromptTemplate.SHORT
    n_comparison: int = 100
    top_frac: float = 0.10
    seed: int = 0
    max_tokens: int = 1000
    temperature: float = 1e-19
    top_p: float = 1e-9
    run: int = 0


def _ranked(
    vector, doc_ids: Sequence[str], view: SnapshotView, encoder: ConceptMeanEncoder
) -> List[str]:
    """Documents by cosine to vector, descending; ties and vectorless
    documents ordered by doc_id."""

    def key(doc_id: str):
        doc_vector = encoder.encode_doc(view.base.document(doc_id))
        if vector is None or doc_vector is None:
            return (1, 0.0, doc_id)
        return (0, -cosine(vector, doc_vector), doc_id)

    return sorted(doc_ids, key=key)


def edge_candidates(path: Path, view: SnapshotView) -> Dict[Edge, List[str]]:
    candidates = {}
    for index, (u, v) in enumerate(path.edges):
        docs = []
        if index < len(path.edge_contexts):
            docs = list(path.edge_contexts[index].doc_ids)
        if not docs and view.has_edge(u, v):
            docs = [d for d, _y in view.edge_evidence(u, v)]
        candidates[(u, v)] = docs
    return candidates


def select_edge_contexts(
    path: Path, view: SnapshotView, encoder: ConceptMeanEncoder, k: int = 7
) -> ContextSelection:
    """
    Rank the candidates of each edge by similarity to the edge's endpoint
    pair and take them round-robin across edges until k are collected.
    """
    candidates = edge_candidates(path, view)
    ranked = {
        (u, v): _ranked(encoder.encode_pair(u, v), docs, view, encoder)
        for (u, v), docs in candidates.items()
    }
    if not any(ranked.values()):
        raise NoContext(f"no context document along {path.nodes}")

    entries: List[ContextEntry] = []
    seen: Set[str] = set()
    cursors = {edge: 0 for edge in ranked}
    while len(entries) < k:
        progressed = False
        for edge, docs in ranked.items():
            while cursors[edge] < len(docs) and docs[cursors[edge]] in seen:
                cursors[edge] += 1
            if cursors[edge] >= len(docs) or len(entries) >= k:
                continue
            doc_id = docs[cursors[edge]]
            entries.append(ContextEntry(doc_id, *edge))
            seen.add(doc_id)
            cursors[edge] += 1
            progressed = True
        if not progressed:
            break

    truncated = len(entries) < k
    if truncated:
        logger.warning(f"only {len(entries)} of {k} context documents for {path.nodes}")
    return ContextSelection(entries, candidates, truncated)


def attribute_sentence(
    sentence: str, window: ContextWindow, view: SnapshotView, encoder: ConceptMeanEncoder
) -> ContextEntry:
    """The in-prompt abstract closest to the sentence."""
    vector = encoder.encode_text(sentence)
    if vector is None:
        raise ExhaustedCandidates(f"no concept of {sentence!r} can be embedded")
    best: Optional[Tuple[float, str]] = None
    chosen = None
    for entry in window.entries:
        doc_vector = encoder.encode_doc(view.base.document(entry.doc_id))
        if doc_vector is None:
            continue
        key = (-cosine(vector, doc_vector), entry.doc_id)
        if best is None or key < best:
            best, chosen = key, entry
    if chosen is None:
        raise ExhaustedCandidates(f"no abstract to attribute {sentence!r} to")
    return chosen


def refine_context(
    sentence: str, window: ContextWindow, view: SnapshotView, encoder: ConceptMeanEncoder
) -> Replacement:
    """Replace the abstract behind a rework sentence by the unused candidate
    of the same edge closest to the sentence."""
    entry = attribute_sentence(sentence, window, view, encoder)
    unused = [d for d in window.candidates.get(entry.edge, []) if d not in window.used]
    if not unused:
        raise ExhaustedCandidates(
            f"every candidate of {entry.u} - {entry.v} was already used"
        )
    new_doc = _ranked(encoder.encode_text(sentence), unused, view, encoder)[0]
    window.replace(entry.doc_id, new_doc)
    return Replacement(u=entry.u, v=entry.v, old_doc=entry.doc_id, new_doc=new_doc)


def _check_endpoints(query: Query, path: Path):
    if path.nodes[0] != query.source or path.nodes[-1] != query.target:
        raise EndpointMismatch(
            f"path {path.nodes} does not join {query.source} and {query.target}"
        )


def _iteration(
    index: int,
    prompt: Prompt,
    request: GenerationRequest,
    trace: FeedbackTrace,
    suite: ExplainerSuite,
    settings: LoopSettings,
) -> Tuple[Explanation, IterationRecord]:
    generation = generate(suite.client, request, sleep=suite.sleep)
    explanation = generation.explanation
    predicates = extract_predicates(suite.extractor, explanation, suite.lexicon)
    verdicts = [
        validate(
            suite.oracle,
            predicate,
            suite.known,
            suite.view,
            n_comparison=settings.n_comparison,
            top_frac=settings.top_frac,
            seed=sub_seed(settings.seed, "validation", trace.key, index, position),
        )
        for position, predicate in enumerate(predicates)
    ]
    record = IterationRecord(
        index=index,
        prompt=prompt.rendered,
        explanation=explanation.text,
        sentences=list(explanation.sentences),
        context_doc_ids=prompt.doc_ids,
        predicates=predicates,
        verdicts=verdicts,
        rework_sentence_indices=flag_rework(explanation, verdicts),
    )
    completion = generation.completion
    suite.usage.append(
        UsageRecord(
            trace_key=trace.key,
            iteration=index,
            attempts=generation.attempts,
            prompt_tokens=completion.prompt_tokens,
            completion_tokens=completion.completion_tokens,
            latency_ms=completion.latency_ms,
        )
    )
    trace.iterations.append(record)
    trace.iterations_used = index
    return explanation, record


def _request(prompt: Prompt, settings: LoopSettings, **overrides) -> GenerationRequest:
    values = dict(
        prompt=prompt.rendered,
        max_tokens=settings.max_tokens,
        temperature=settings.temperature,
        top_p=settings.top_p,
    )
    values.update(overrides)
    return GenerationRequest(**values)


def feedback_loop(
    query: Query, path: Path, suite: ExplainerSuite, settings: LoopSettings
) -> Tuple[Explanation, FeedbackTrace]:
    _check_endpoints(query, path)
    trace = FeedbackTrace(
        query=query,
        path_nodes=list(path.nodes),
        mode=ExplainMode.FEEDBACK,
        k=settings.k,
        max_iter=settings.max_iter,
        run=settings.run,
    )
    explanation = None
    try:
        window = ContextWindow(select_edge_contexts(path, suite.view, suite.encoder, settings.k))
        for index in range(1, settings.max_iter + 1):
            prompt = build_prompt(
                query.source, query.target, window.context_docs(suite.view), settings.template
            )
            explanation, record = _iteration(
                index, prompt, _request(prompt, settings), trace, suite, settings
            )
            if not record.rework_sentence_indices:
                trace.converged = True
                logger.info(f"{trace.key}: converged at iteration {index}")
                break
            if index == settings.max_iter:
                logger.info(f"{trace.key}: no convergence after {index} iterations")
                break
            for sentence_index in record.rework_sentence_indices:
                try:
                    record.replacements.append(
                        refine_context(
                            explanation.sentences[sentence_index],
                            window,
                            suite.view,
                            suite.encoder,
                        )
                    )
                except ExhaustedCandidates as e:
                    logger.warning(f"{trace.key}: {e}")
    except HgcrError as e:
        e.partial_trace = trace
        raise
    return explanation, trace


def single_shot(
    query: Query,
    path: Path,
    suite: ExplainerSuite,
    settings: LoopSettings,
    mode: ExplainMode,
) -> Tuple[Explanation, FeedbackTrace]:
    """
    One generation without refinement: the long instruction over the
    retrieved abstracts (baseline) or the bare instruction with no
    abstracts at a higher sampling temperature (prompt).
    """
    _check_endpoints(query, path)
    trace = FeedbackTrace(
        query=query,
        path_nodes=list(path.nodes),
        mode=mode,
        k=settings.k,
        max_iter=1,
        run=settings.run,
    )
    try:
        if mode is ExplainMode.PROMPT:
            prompt = build_bare_prompt(query.source, query.target)
            request = _request(
                prompt, settings, temperature=PROMPT_ONLY_TEMPERATURE, top_p=PROMPT_ONLY_TOP_P
            )
        else:
            selection = select_edge_contexts(path, suite.view, suite.encoder, settings.k)
            prompt = build_prompt(
                query.source,
                query.target,
                ContextWindow(selection).context_docs(suite.view),
                PromptTemplate.BASELINE,
            )
            request = _request(prompt, settings)
        explanation, record = _iteration(1, prompt, request, trace, suite, settings)
    except HgcrError as e:
        e.partial_trace = trace
        raise
    trace.converged = not record.rework_sentence_indices
    return explanation, trace


def explain(
    query: Query,
    path: Path,
    suite: ExplainerSuite,
    settings: LoopSettings,
    mode: ExplainMode = ExplainMode.FEEDBACK,
) -> Tuple[Explanation, FeedbackTrace]:
    mode = ExplainMode(mode)
    if mode is ExplainMode.FEEDBACK:
        return feedback_loop(query, path, suite, settings)
    return single_shot(query, path, suite, settings, mode)
