"""
Record types shared by the pipeline stages.

Every class here is a plain dataclass that the xsdata JSON serializer and
parser can bind, so the same objects are used in memory and in the
line-delimited artifact files.
"""
from dataclasses import dataclass
from dataclasses import field
from enum import Enum
from typing import List
from typing import Optional
from typing import Tuple


class Label(Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


class NegativeKind(Enum):
    NONE = "none"
    HARD = "hard"
    CORRUPTED_PATH = "corrupted_path"
    CORRUPTED_CONTEXT = "corrupted_context"


class VerdictStatus(Enum):
    KNOWN = "known"
    RANKED_VALID = "ranked_valid"
    IMPLAUSIBLE = "implausible"


class PromptTemplate(Enum):
    SHORT = "short"
    BASELINE = "baseline"


class ExplainMode(Enum):
    FEEDBACK = "feedback"
    BASELINE = "baseline"
    PROMPT = "prompt"


@dataclass
class PredicateAnnotation:
    subject: str
    verb: str
    object: str


@dataclass
class DocRecord:
    doc_id: str
    year: int
    concepts: List[str] = field(default_factory=list)
    text: Optional[str] = None
    title_concepts: List[str] = field(default_factory=list)
    predicates: List[PredicateAnnotation] = field(default_factory=list)


@dataclass
class GraphStats:
    nodes: int
    edges: int
    documents: int
    min_year: Optional[int] = None
    max_year: Optional[int] = None


@dataclass
class Query:
    source: str
    target: str
    t: int

    @property
    def key(self) -> str:
        return f"{self.source}|{self.target}|{self.t}"


@dataclass
class EdgeContext:
    u: str
    v: str
    doc_ids: List[str] = field(default_factory=list)


@dataclass
class Path:
    nodes: List[str]
    edge_contexts: List[EdgeContext] = field(default_factory=list)

    @property
    def intermediates(self) -> List[str]:
        return self.nodes[1:-1]

    @property
    def edges(self) -> List[Tuple[str, str]]:
        return list(zip(self.nodes, self.nodes[1:]))

    @property
    def node_length(self) -> int:
        return len(self.nodes)

    def context_doc_ids(self) -> List[str]:
        """Flattened per-edge contexts, first occurrence wins."""
        seen = []
        for edge in self.edge_contexts:
            for doc_id in edge.doc_ids:
                if doc_id not in seen:
                    seen.append(doc_id)
        return seen


@dataclass
class LabeledPathSample:
    query: Query
    path: Path
    contexts: List[str]
    label: Label
    negative_kind: NegativeKind = NegativeKind.NONE

    @property
    def is_positive(self) -> bool:
        return self.label is Label.POSITIVE


@dataclass
class DatasetRecord:
    query: Query
    path_nodes: List[str]
    edge_contexts: List[EdgeContext]
    context_doc_ids: List[str]
    label: Label
    negative_kind: NegativeKind
    node_length: int

    @classmethod
    def from_sample(cls, sample: LabeledPathSample) -> "DatasetRecord":
        return cls(
            query=sample.query,
            path_nodes=list(sample.path.nodes),
            edge_contexts=list(sample.path.edge_contexts),
            context_doc_ids=list(sample.contexts),
            label=sample.label,
            negative_kind=sample.negative_kind,
            node_length=sample.path.node_length,
        )

    def to_sample(self) -> LabeledPathSample:
        return LabeledPathSample(
            query=self.query,
            path=Path(nodes=list(self.path_nodes), edge_contexts=self.edge_contexts),
            contexts=list(self.context_doc_ids),
            label=self.label,
            negative_kind=self.negative_kind,
        )


@dataclass
class QueryReport:
    query: Query
    positives: int = 0
    hard_negatives: int = 0
    corrupted_paths: int = 0
    corrupted_contexts: int = 0
    negative_ratio: Optional[float] = None
    error: Optional[str] = None
    warnings: List[str] = field(default_factory=list)


@dataclass
class Predicate:
    subject: str
    verb: str
    object: str
    sentence_index: int

    @property
    def pair(self) -> Tuple[str, str]:
        return self.subject, self.object


@dataclass
class Verdict:
    predicate: Predicate
    status: VerdictStatus
    score: Optional[float] = None
    percentile_threshold: float = 0.0

    @property
    def implausible(self) -> bool:
        return self.status is VerdictStatus.IMPLAUSIBLE


@dataclass
class Replacement:
    u: str
    v: str
    old_doc: str
    new_doc: str


@dataclass
class IterationRecord:
    index: int
    prompt: str
    explanation: str
    sentences: List[str] = field(default_factory=list)
    context_doc_ids: List[str] = field(default_factory=list)
    predicates: List[Predicate] = field(default_factory=list)
    verdicts: List[Verdict] = field(default_factory=list)
    rework_sentence_indices: List[int] = field(default_factory=list)
    replacements: List[Replacement] = field(default_factory=list)


@dataclass
class FeedbackTrace:
    query: Query
    path_nodes: List[str]
    mode: ExplainMode
    k: int
    max_iter: int
    iterations: List[IterationRecord] = field(default_factory=list)
    converged: bool = False
    iterations_used: int = 0
    path_label: Optional[Label] = None
    path_score: Optional[float] = None
    run: int = 0

    @property
    def path_key(self) -> str:
        return f"{self.query.key}|{'>'.join(self.path_nodes)}|{self.mode.value}"

    @property
    def key(self) -> str:
        return f"{self.path_key}#{self.run}" if self.run else self.path_key

    @property
    def final(self) -> Optional[IterationRecord]:
        return self.iterations[-1] if self.iterations else None


@dataclass
class UsageRecord:
    trace_key: str
    iteration: int
    attempts: int
    prompt_tokens: int
    completion_tokens: int
    latency_ms: float


@dataclass
class ErrorRecord:
    error: str
    message: str
