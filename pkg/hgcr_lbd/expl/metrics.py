from dataclasses import dataclass
from dataclasses import field
from typing import Collection
from typing import Dict
from typing import Iterable
from typing import List
from typing import Optional
from typing import Sequence

import numpy as np

from ..embed import ConceptMeanEncoder
from ..embed import dot
from ..logger import logger
from ..models import FeedbackTrace
from ..models import UsageRecord
from ..models import Verdict


def jaccard_terms(expl_concepts: Collection[str], ref_concepts: Collection[str]) -> float:
    a, b = set(expl_concepts), set(ref_concepts)
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def semantic_sim(expl_vector: np.ndarray, ref_vector: np.ndarray) -> float:
    return dot(expl_vector, ref_vector)


def error_rate(verdicts: Sequence[Verdict]) -> float:
    if not verdicts:
        return 0.0
    return sum(1 for v in verdicts if v.implausible) / len(verdicts)


@dataclass
class EncoderSim:
    encoder: str
    value: Optional[float] = None


@dataclass
class ExplanationMetrics:
    trace_key: str
    mode: str
    k: int
    jaccard: float
    error_rate: float
    no_predicates: bool = False
    converged: bool = False
    iterations_used: int = 0
    sims: List[EncoderSim] = field(default_factory=list)
    path_key: str = ""
    run: int = 0
    repeats: int = 1

    def sim(self, encoder: str) -> Optional[float]:
        return next((s.value for s in self.sims if s.encoder == encoder), None)


def explanation_metrics(
    trace: FeedbackTrace,
    reference_concepts: Collection[str],
    encoders: Sequence[ConceptMeanEncoder],
) -> ExplanationMetrics:
    """
    Score the final explanation of a trace against the concepts of the
    future reference abstracts of its query.
    """
    final = trace.final
    text = final.explanation if final else ""
    verdicts = final.verdicts if final else []
    if not verdicts:
        logger.warning(f"{trace.key}: no predicate extracted, error rate set to 0")

    sims = []
    for encoder in encoders:
        expl_vector = encoder.encode_text(text)
        ref_vector = encoder.encode_concepts(reference_concepts)
        value = None
        if expl_vector is not None and ref_vector is not None:
            value = semantic_sim(expl_vector, ref_vector)
        sims.append(EncoderSim(encoder.name, value))

    lexicon = encoders[0].lexicon if encoders else None
    expl_concepts = lexicon.detect(text) if lexicon else []
    return ExplanationMetrics(
        trace_key=trace.key,
        mode=trace.mode.value,
        k=trace.k,
        jaccard=jaccard_terms(expl_concepts, reference_concepts),
        error_rate=error_rate(verdicts),
        no_predicates=not verdicts,
        converged=trace.converged,
        iterations_used=trace.iterations_used,
        sims=sims,
        path_key=trace.path_key,
        run=trace.run,
    )


def average_repeats(rows: Sequence[ExplanationMetrics]) -> List[ExplanationMetrics]:
    """
    One row per path: rows of repeated runs over the same (query, path,
    mode) are replaced by their mean, first-seen order kept.
    """
    groups: Dict[str, List[ExplanationMetrics]] = {}
    for row in rows:
        groups.setdefault(row.path_key or row.trace_key, []).append(row)

    averaged = []
    for key, members in groups.items():
        if len(members) == 1:
            averaged.append(members[0])
            continue
        encoders = [s.encoder for s in members[0].sims]
        sims = []
        for name in encoders:
            values = [r.sim(name) for r in members if r.sim(name) is not None]
            sims.append(EncoderSim(name, float(np.mean(values)) if values else None))
        averaged.append(
            ExplanationMetrics(
                trace_key=key,
                mode=members[0].mode,
                k=members[0].k,
                jaccard=float(np.mean([r.jaccard for r in members])),
                error_rate=float(np.mean([r.error_rate for r in members])),
                no_predicates=all(r.no_predicates for r in members),
                converged=all(r.converged for r in members),
                iterations_used=max(r.iterations_used for r in members),
                sims=sims,
                path_key=key,
                repeats=len(members),
            )
        )
    return averaged


@dataclass
class HistogramRow:
    iterations: int
    count: int


@dataclass
class ConvergenceReport:
    total: int
    did_not_converge: int
    rows: List[HistogramRow] = field(default_factory=list)

    def count(self, iterations: int) -> int:
        return next((r.count for r in self.rows if r.iterations == iterations), 0)


def convergence_report(traces: Iterable[FeedbackTrace], max_iter: int = 5) -> ConvergenceReport:
    counts: Dict[int, int] = {i: 0 for i in range(1, max_iter + 1)}
    total = dnf = 0
    for trace in traces:
        total += 1
        if not trace.converged:
            dnf += 1
        else:
            counts[trace.iterations_used] = counts.get(trace.iterations_used, 0) + 1
    rows = [HistogramRow(i, c) for i, c in sorted(counts.items())]
    return ConvergenceReport(total=total, did_not_converge=dnf, rows=rows)


@dataclass
class UsageSummary:
    requests: int
    mean_attempts: Optional[float] = None
    mean_latency_ms: Optional[float] = None
    std_latency_ms: Optional[float] = None
    mean_prompt_tokens: Optional[float] = None
    mean_completion_tokens: Optional[float] = None


def usage_summary(records: Sequence[UsageRecord]) -> UsageSummary:
    if not records:
        return UsageSummary(requests=0)
    latency = np.array([r.latency_ms for r in records])
    return UsageSummary(
        requests=len(records),
        mean_attempts=float(np.mean([r.attempts for r in records])),
        mean_latency_ms=float(latency.mean()),
        std_latency_ms=float(latency.std()),
        mean_prompt_tokens=float(np.mean([r.prompt_tokens for r in records])),
        mean_completion_tokens=float(np.mean([r.completion_tokens for r in records])),
    )


@dataclass
class MetricSummary:
    mode: str
    metric: str
    runs: int
    mean: Optional[float] = None
    std: Optional[float] = None


def summarize(rows: Sequence[ExplanationMetrics]) -> List[MetricSummary]:
    """Mean and standard deviation of every metric per run mode."""
    modes = sorted({r.mode for r in rows})
    encoders = sorted({s.encoder for r in rows for s in r.sims})
    summaries = []
    for mode in modes:
        members = [r for r in rows if r.mode == mode]
        columns = {
            "jaccard": [r.jaccard for r in members],
            "error_rate": [r.error_rate for r in members],
        }
        for name in encoders:
            columns[f"sim:{name}"] = [
                r.sim(name) for r in members if r.sim(name) is not None
            ]
        for metric, values in columns.items():
            summary = MetricSummary(mode=mode, metric=metric, runs=len(values))
            if values:
                summary.mean = float(np.mean(values))
                summary.std = float(np.std(values))
            summaries.append(summary)
    return summaries
