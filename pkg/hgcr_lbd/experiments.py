"""
Pipeline stages behind the command line: every function reads its inputs
from a RunConfig plus loaded artifacts and writes its outputs under
config.out_dir.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from pathlib import Path
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np

from . import hook
from .config import ABLATION_K_GRID
from .config import RunConfig
from .embed import ConceptMeanEncoder
from .embed import EmbeddingKind
from .embed import EmbeddingTable
from .embed import load_table
from .embed import synthetic_table
from .exceptions import ConfigError
from .exceptions import DimMismatch
from .exceptions import EmptyDataset
from .expl.feedback import ExplainerSuite
from .expl.feedback import LoopSettings
from .expl.feedback import explain
from .expl.metrics import ExplanationMetrics
from .expl.metrics import average_repeats
from .expl.metrics import convergence_report
from .expl.metrics import explanation_metrics
from .expl.metrics import summarize
from .expl.metrics import usage_summary
from .expl.validation import known_relations
from .ireval import QueryResult
from .ireval import metrics_report
from .kgraph import TemporalGraph
from .logger import logger
from .models import DatasetRecord
from .models import DocRecord
from .models import ExplainMode
from .models import FeedbackTrace
from .models import Label
from .models import LabeledPathSample
from .models import NegativeKind
from .models import Query
from .models import UsageRecord
from .pathgen import build_dataset
from .pathgen import discover_queries
from .pathgen import filter_expl_queries
from .pathgen import future_reference
from .ranker import Featurizer
from .ranker import RankerConfig
from .ranker import RankerParams
from .ranker import ScoredSample
from .ranker import build_groups
from .ranker import score_by_similarity
from .ranker import score_paths
from .ranker import scores_by_query
from .ranker import train
from .registry import clients
from .registry import extractors
from .registry import oracles
from .reports import write_report
from .serialization import read_records
from .serialization import write_records
from .text_utils import ConceptLexicon

GRAPH_FILE = "graph.jsonl"
GRAPH_STATS_FILE = "graph_stats.jsonl"
DATASET_FILE = "dataset.jsonl"
DATASET_REPORT_FILE = "dataset_report.jsonl"
CHECKPOINT_FILE = "checkpoint.json"
LOSS_LOG_FILE = "loss_log.jsonl"
RANKER_METRICS_FILE = "ranker_metrics.jsonl"
TRACES_FILE = "traces.jsonl"
EXPL_METRICS_FILE = "expl_metrics.jsonl"
ABLATION_FILE = "ablation.jsonl"
SCORE_VS_SIM_FILE = "score_vs_sim.jsonl"
REPORT_FILE = "report.jsonl"


def usage_path(traces: Path) -> Path:
    return traces.with_name(f"{traces.stem}_usage.jsonl")


def artifact(config: RunConfig, explicit: Optional[str], default: str) -> Path:
    return Path(explicit) if explicit else config.out_path.joinpath(default)


@dataclass
class LossRecord:
    epoch: int
    loss: float


@dataclass
class DatasetSummary:
    queries: int
    samples: int
    failed_queries: int
    mean_negative_ratio: Optional[float] = None


@dataclass
class AblationRow:
    k: int
    traces: int
    jaccard: Optional[float] = None
    sim: Optional[float] = None
    error_rate: Optional[float] = None


@dataclass
class ScatterPoint:
    query: Query
    path_nodes: List[str]
    label: str
    score: float
    sim: Optional[float] = None


@dataclass
class SlopeRecord:
    points: int
    slope: Optional[float] = None


# graph


def build_graph(corpus: Path, out_graph: Path) -> TemporalGraph:
    graph = TemporalGraph().extend(read_records(corpus, DocRecord)).freeze()
    stats = graph.stats()
    if not stats.documents:
        logger.warning(f"{corpus} holds no document, the graph is empty")
    graph.save(out_graph)
    write_records(out_graph.with_name(GRAPH_STATS_FILE), [stats])
    logger.info(f"graph: {stats.nodes} nodes, {stats.edges} edges")
    return graph


# dataset


def make_dataset(config: RunConfig, graph: TemporalGraph, out: Path):
    if config.split_year is None:
        raise ConfigError("a split year is required to build a dataset")
    queries = discover_queries(graph, config.split_year)
    logger.info(f"{len(queries)} queries first linked at or after {config.split_year}")
    result = build_dataset(
        graph,
        queries,
        caps=config.caps,
        rng_seed=config.sub_seed("dataset"),
        training=config.dataset_mode == "training",
        sampling_year=config.split_year - 1,
        max_nodes=config.max_nodes,
        workers=config.workers,
    )
    write_records(out, [DatasetRecord.from_sample(s) for s in result.samples])
    summary = DatasetSummary(
        queries=len(queries),
        samples=len(result.samples),
        failed_queries=sum(1 for r in result.reports if r.error),
        mean_negative_ratio=result.mean_negative_ratio,
    )
    write_records(out.with_name(DATASET_REPORT_FILE), result.reports)
    write_records(out.with_name("dataset_summary.jsonl"), [summary])
    return result, summary


def load_samples(path: Path) -> List[LabeledPathSample]:
    return [r.to_sample() for r in read_records(path, DatasetRecord)]


# embeddings and ranker


def _table(
    path: Optional[str], keys, dim: int, seed: int, kind: EmbeddingKind
) -> EmbeddingTable:
    if not path:
        return synthetic_table(keys, dim, seed, kind)
    table = load_table(path, kind)
    if table.dim != dim:
        raise DimMismatch(f"{path} holds dim {table.dim}, the ranker expects {dim}")
    return table


def concept_table(config: RunConfig, graph: TemporalGraph) -> EmbeddingTable:
    return _table(
        config.concept_embeddings,
        graph.nodes,
        config.d_n,
        config.sub_seed("synthetic", "concept"),
        EmbeddingKind.CONCEPT,
    )


def context_table(config: RunConfig, graph: TemporalGraph) -> EmbeddingTable:
    return _table(
        config.context_embeddings,
        [d.doc_id for d in graph.documents],
        config.d_p,
        config.sub_seed("synthetic", "context"),
        EmbeddingKind.CONTEXT,
    )


def featurizer(config: RunConfig, graph: TemporalGraph) -> Featurizer:
    return Featurizer(concept_table(config, graph), context_table(config, graph))


def ranker_config(config: RunConfig) -> RankerConfig:
    return RankerConfig(
        d_model=config.d_model,
        heads=config.heads,
        d_n=config.d_n,
        d_p=config.d_p,
        margin=config.margin,
        lr=config.lr,
        epochs=config.epochs,
        seed=config.sub_seed("init"),
    )


def train_ranker(
    config: RunConfig,
    graph: TemporalGraph,
    samples: Sequence[LabeledPathSample],
    checkpoint: Path,
) -> RankerParams:
    groups = build_groups(samples, featurizer(config, graph))
    if not groups:
        raise EmptyDataset("the dataset holds no positive with a negative")
    logger.info(f"training on {len(groups)} groups for {config.epochs} epochs")
    params = train(ranker_config(config), groups)
    params.save(checkpoint)
    write_records(
        checkpoint.with_name(LOSS_LOG_FILE),
        [LossRecord(epoch, loss) for epoch, loss in enumerate(params.loss_log)],
    )
    return params


def query_results(scored: Sequence[ScoredSample]) -> List[QueryResult]:
    return [
        QueryResult(key, [(s.score, 1 if s.sample.is_positive else 0) for s in items])
        for key, items in sorted(scores_by_query(scored).items())
    ]


def concept_encoder(config: RunConfig, graph: TemporalGraph, name: str = "concept"):
    lexicon = ConceptLexicon.from_concepts(graph.nodes)
    return ConceptMeanEncoder(name, concept_table(config, graph), lexicon)


def evaluate_ranker(
    config: RunConfig,
    graph: TemporalGraph,
    params: RankerParams,
    samples: Sequence[LabeledPathSample],
    out: Path,
):
    scored = score_paths(params, samples, featurizer(config, graph))
    baseline = score_by_similarity(samples, concept_encoder(config, graph), graph)
    reports = [
        metrics_report("hgcr", query_results(scored)),
        metrics_report("similarity", query_results(baseline)),
    ]
    write_records(out, reports)
    write_report(out.with_suffix(".txt"), "ranker_metrics.jinja2", reports=reports)
    return reports


# explanations


@dataclass
class ExplanationRun:
    traces: List[FeedbackTrace] = field(default_factory=list)
    usage: List[UsageRecord] = field(default_factory=list)


def loop_settings(config: RunConfig, k: Optional[int] = None) -> LoopSettings:
    return LoopSettings(
        k=config.k if k is None else k,
        max_iter=config.max_iter,
        template=config.template,
        n_comparison=config.n_comparison,
        top_frac=config.top_frac,
        seed=config.sub_seed("validation"),
        max_tokens=config.max_tokens,
        temperature=config.temperature,
        top_p=config.top_p,
    )


def make_client(config: RunConfig, lexicon: ConceptLexicon):
    hook.load_plugins()
    if config.llm_endpoint:
        return clients.create("remote", endpoint=config.llm_endpoint)
    if config.llm_fixture:
        return clients.create("scripted", fixture=config.llm_fixture)
    return clients.create("echo", lexicon=lexicon)


class Explainer:
    """Shared components of the explanation commands."""

    def __init__(self, config: RunConfig, graph: TemporalGraph, params: RankerParams):
        self.config = config
        self.graph = graph
        self.params = params
        self.featurizer = featurizer(config, graph)
        self.encoder = concept_encoder(config, graph)
        self.lexicon = self.encoder.lexicon
        self.client = make_client(config, self.lexicon)
        self.extractor = extractors.create("lexicon", verbs=config.verbs)
        self.oracle = oracles.create("embedding", concept_table=self.encoder.table)
        self._views: Dict[int, Tuple] = {}

    def sampling_year(self, query: Query) -> int:
        if self.config.split_year is not None:
            return self.config.split_year - 1
        return query.t - 1

    def suite(self, query: Query, usage: List[UsageRecord]) -> ExplainerSuite:
        year = self.sampling_year(query)
        if year not in self._views:
            view = self.graph.snapshot(year)
            self._views[year] = (view, known_relations(view))
        view, known = self._views[year]
        return ExplainerSuite(
            client=self.client,
            extractor=self.extractor,
            oracle=self.oracle,
            lexicon=self.lexicon,
            encoder=self.encoder,
            view=view,
            known=known,
            usage=usage,
        )

    def queries(self, samples: Sequence[LabeledPathSample]) -> List[Query]:
        unique: Dict[str, Query] = {}
        for sample in samples:
            unique.setdefault(sample.query.key, sample.query)
        kept = filter_expl_queries(self.graph, unique.values())
        logger.info(f"{len(kept)} of {len(unique)} queries qualify for explanations")
        return kept

    def candidates(self, samples: Sequence[LabeledPathSample]) -> Dict[str, List[ScoredSample]]:
        """Scored candidate paths per query, corrupted samples left out."""
        real = [
            s
            for s in samples
            if s.negative_kind in (NegativeKind.NONE, NegativeKind.HARD)
        ]
        return scores_by_query(score_paths(self.params, real, self.featurizer))

    def run(
        self,
        jobs: Sequence[Tuple[Query, ScoredSample]],
        mode: ExplainMode,
        k: Optional[int] = None,
    ) -> ExplanationRun:
        """Explain every job repeats_for(mode) times, each run under its own
        run index."""
        settings = loop_settings(self.config, k)
        runs = [
            (query, scored, replace(settings, run=index))
            for query, scored in jobs
            for index in range(self.config.repeats_for(mode))
        ]

        def one(job):
            query, scored, job_settings = job
            usage: List[UsageRecord] = []
            suite = self.suite(query, usage)
            _explanation, trace = explain(
                query, scored.sample.path, suite, job_settings, mode
            )
            trace.path_label = scored.sample.label
            trace.path_score = scored.score
            return trace, usage

        if self.config.workers > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as executor:
                outcomes = list(executor.map(one, runs))
        else:
            outcomes = [one(job) for job in runs]

        result = ExplanationRun()
        for trace, usage in outcomes:
            result.traces.append(trace)
            result.usage.extend(usage)
        return result

    def top_jobs(self, samples: Sequence[LabeledPathSample]) -> List[Tuple[Query, ScoredSample]]:
        candidates = self.candidates(samples)
        jobs = []
        for query in self.queries(samples):
            for scored in candidates.get(query.key, [])[: self.config.top_paths]:
                jobs.append((query, scored))
        return jobs


def write_traces(run: ExplanationRun, out: Path):
    write_records(out, run.traces)
    write_records(usage_path(out), run.usage)


def explain_queries(
    config: RunConfig,
    graph: TemporalGraph,
    params: RankerParams,
    samples: Sequence[LabeledPathSample],
    out: Path,
) -> ExplanationRun:
    explainer = Explainer(config, graph, params)
    run = explainer.run(explainer.top_jobs(samples), config.mode)
    write_traces(run, out)
    logger.info(f"{len(run.traces)} traces written to {out}")
    return run


def reference_concepts(graph: TemporalGraph, query: Query) -> List[str]:
    """Concepts of the future reference abstracts, endpoints included."""
    fr = future_reference(graph, query)
    concepts = set()
    for doc_id in fr.abstracts:
        concepts.update(graph.document(doc_id).concepts)
    return sorted(concepts)


def score_traces(
    graph: TemporalGraph,
    traces: Sequence[FeedbackTrace],
    encoders: Sequence[ConceptMeanEncoder],
) -> List[ExplanationMetrics]:
    return [
        explanation_metrics(trace, reference_concepts(graph, trace.query), encoders)
        for trace in traces
    ]


def evaluate_explanations(
    config: RunConfig,
    graph: TemporalGraph,
    traces: Sequence[FeedbackTrace],
    out: Path,
):
    rows = score_traces(graph, traces, [concept_encoder(config, graph)])
    summaries = summarize(average_repeats(rows))
    write_records(out, rows)
    write_records(out.with_name(f"{out.stem}_summary.jsonl"), summaries)
    write_report(
        out.with_suffix(".txt"), "expl_metrics.jinja2", rows=rows, summaries=summaries
    )
    return rows, summaries


def _mean(values) -> Optional[float]:
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def ablate_k(
    config: RunConfig,
    graph: TemporalGraph,
    params: RankerParams,
    samples: Sequence[LabeledPathSample],
    out: Path,
    grid: Sequence[int] = ABLATION_K_GRID,
) -> List[AblationRow]:
    explainer = Explainer(config, graph, params)
    jobs = [
        (query, scored)
        for query, scored in explainer.top_jobs(samples)
        if scored.sample.label is Label.POSITIVE
    ]
    logger.info(f"ablation over {len(jobs)} positive top scored paths")
    encoders = [explainer.encoder]
    rows = []
    for k in grid:
        run = explainer.run(jobs, config.mode, k=k)
        metrics = average_repeats(score_traces(graph, run.traces, encoders))
        rows.append(
            AblationRow(
                k=k,
                traces=len(metrics),
                jaccard=_mean(m.jaccard for m in metrics),
                sim=_mean(m.sim(explainer.encoder.name) for m in metrics),
                error_rate=_mean(m.error_rate for m in metrics),
            )
        )
        logger.info(f"k={k}: {len(metrics)} traces")
    write_records(out, rows)
    write_report(out.with_suffix(".txt"), "ablation.jinja2", rows=rows)
    return rows


def least_squares_slope(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    if len(x) < 2 or len(set(x)) < 2:
        return None
    slope, _intercept = np.polyfit(np.asarray(x, float), np.asarray(y, float), 1)
    return float(slope)


def score_vs_sim(
    config: RunConfig,
    graph: TemporalGraph,
    params: RankerParams,
    samples: Sequence[LabeledPathSample],
    out: Path,
) -> Tuple[List[ScatterPoint], SlopeRecord]:
    """
    Explain per_class positive and per_class negative paths of every
    explanation query and pair each path score with the similarity of its
    explanation to the future reference abstracts.
    """
    explainer = Explainer(config, graph, params)
    candidates = explainer.candidates(samples)
    jobs = []
    for query in explainer.queries(samples):
        scored = candidates.get(query.key, [])
        rng = np.random.default_rng(config.sub_seed("score_vs_sim", query.key))
        for positive in (True, False):
            pool = [s for s in scored if s.sample.is_positive is positive]
            take = min(config.per_class, len(pool))
            picked = sorted(rng.choice(len(pool), size=take, replace=False)) if take else []
            jobs.extend((query, pool[int(i)]) for i in picked)

    run = explainer.run(jobs, config.mode)
    first_traces: Dict[str, FeedbackTrace] = {}
    for trace in run.traces:
        first_traces.setdefault(trace.path_key, trace)
    metrics = average_repeats(score_traces(graph, run.traces, [explainer.encoder]))
    points = []
    for m in metrics:
        trace = first_traces[m.path_key]
        points.append(
            ScatterPoint(
                query=trace.query,
                path_nodes=trace.path_nodes,
                label=trace.path_label.value,
                score=trace.path_score,
                sim=m.sim(explainer.encoder.name),
            )
        )
    usable = [p for p in points if p.sim is not None]
    slope = SlopeRecord(
        points=len(points),
        slope=least_squares_slope([p.score for p in usable], [p.sim for p in usable]),
    )
    write_records(out, points)
    write_records(out.with_name(f"{out.stem}_slope.jsonl"), [slope])
    write_report(out.with_suffix(".txt"), "score_vs_sim.jinja2", points=points, slope=slope)
    return points, slope


def run_report(
    traces: Sequence[FeedbackTrace],
    usage: Sequence[UsageRecord],
    max_iter: int,
    out: Path,
):
    convergence = convergence_report(traces, max_iter)
    summary = usage_summary(usage)
    write_records(out, [convergence])
    write_records(out.with_name(f"{out.stem}_usage.jsonl"), [summary])
    write_report(
        out.with_suffix(".txt"), "report.jinja2", convergence=convergence, usage=summary
    )
    return convergence, summary
