"""
Ranking metrics over scored samples.

AUC counts a tie between a positive and a negative as half a correct pair.
AP walks the scores in descending order with a stable sort, so tied items
keep their input order; the number of tied positions is reported.
"""
import math
from dataclasses import dataclass
from dataclasses import field
from enum import Enum
from typing import Callable
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np

from .exceptions import AllDegenerate
from .exceptions import DegenerateLabels
from .exceptions import NoPositives
from .logger import logger

Pair = Tuple[float, int]


class Metric(Enum):
    ROC_AUC = "roc_auc"
    AP = "ap"


class Averaging(Enum):
    MICRO = "micro"
    MACRO = "macro"


def _arrays(pairs: Sequence[Pair]):
    scores = np.array([float(s) for s, _l in pairs], dtype=np.float64)
    labels = np.array([int(l) for _s, l in pairs], dtype=np.int64)
    return scores, labels


def roc_auc(pairs: Sequence[Pair]) -> float:
    scores, labels = _arrays(pairs)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels(f"AUC needs both classes, got {n_pos} pos / {n_neg} neg")

    # average ranks, ties share the mean of their positions
    uniq, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    mean_rank = upper - (counts - 1) / 2.0
    ranks = mean_rank[inverse]
    rank_sum = math.fsum(ranks[labels == 1])
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def ranking_order(scores: np.ndarray) -> np.ndarray:
    """Indices by descending score, input order kept among ties."""
    return np.argsort(-scores, kind="stable")


def average_precision(pairs: Sequence[Pair]) -> float:
    scores, labels = _arrays(pairs)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise NoPositives("average precision needs at least one positive")

    ordered = labels[ranking_order(scores)]
    precisions = []
    hits = 0
    for rank, label in enumerate(ordered, start=1):
        if label:
            hits += 1
            precisions.append(hits / rank)
    return math.fsum(precisions) / n_pos


def tied_positions(pairs: Sequence[Pair]) -> int:
    """Number of items sharing their score with another item."""
    scores, _labels = _arrays(pairs)
    _uniq, counts = np.unique(scores, return_counts=True)
    return int(counts[counts > 1].sum())


METRICS: Dict[Metric, Callable[[Sequence[Pair]], float]] = {
    Metric.ROC_AUC: roc_auc,
    Metric.AP: average_precision,
}


@dataclass
class QueryResult:
    query_id: str
    pairs: List[Pair] = field(default_factory=list)

    @property
    def positives(self) -> int:
        return sum(1 for _s, l in self.pairs if l)

    @property
    def negatives(self) -> int:
        return len(self.pairs) - self.positives

    @property
    def degenerate(self) -> bool:
        return self.positives == 0 or self.negatives == 0


@dataclass
class Aggregate:
    value: float
    skipped: int = 0


def aggregate(
    results: Sequence[QueryResult], mode: Averaging, metric: Metric
) -> Aggregate:
    mode, metric = Averaging(mode), Metric(metric)
    compute = METRICS[metric]
    if mode is Averaging.MICRO:
        pooled = [p for r in results for p in r.pairs]
        pooled_result = QueryResult("pooled", pooled)
        if pooled_result.degenerate:
            raise AllDegenerate("pooled pairs do not hold both classes")
        return Aggregate(compute(pooled))

    kept = [r for r in results if not r.degenerate]
    skipped = len(results) - len(kept)
    if not kept:
        raise AllDegenerate(f"all {len(results)} queries are degenerate")
    if skipped:
        logger.warning(f"{skipped} degenerate queries skipped from the macro {metric.value}")
    return Aggregate(float(np.mean([compute(r.pairs) for r in kept])), skipped)


@dataclass
class QueryMetricsRow:
    query_id: str
    positives: int
    negatives: int
    roc_auc: Optional[float] = None
    ap: Optional[float] = None
    ties: int = 0


@dataclass
class MetricsReport:
    scorer: str
    queries: int
    skipped: int
    micro_roc_auc: Optional[float] = None
    macro_roc_auc: Optional[float] = None
    micro_ap: Optional[float] = None
    macro_ap: Optional[float] = None
    rows: List[QueryMetricsRow] = field(default_factory=list)


def _maybe(fn, *args) -> Optional[float]:
    try:
        value = fn(*args)
    except (AllDegenerate, DegenerateLabels, NoPositives) as e:
        logger.warning(str(e))
        return None
    return value.value if isinstance(value, Aggregate) else value


def metrics_report(scorer: str, results: Sequence[QueryResult]) -> MetricsReport:
    rows = []
    for r in results:
        rows.append(
            QueryMetricsRow(
                query_id=r.query_id,
                positives=r.positives,
                negatives=r.negatives,
                roc_auc=None if r.degenerate else roc_auc(r.pairs),
                ap=average_precision(r.pairs) if r.positives else None,
                ties=tied_positions(r.pairs) if r.pairs else 0,
            )
        )
    return MetricsReport(
        scorer=scorer,
        queries=len(results),
        skipped=sum(1 for r in results if r.degenerate),
        micro_roc_auc=_maybe(aggregate, results, Averaging.MICRO, Metric.ROC_AUC),
        macro_roc_auc=_maybe(aggregate, results, Averaging.MACRO, Metric.ROC_AUC),
        micro_ap=_maybe(aggregate, results, Averaging.MICRO, Metric.AP),
        macro_ap=_maybe(aggregate, results, Averaging.MACRO, Metric.AP),
        rows=rows,
    )
