import math
from typing import Dict
from typing import Iterable
from typing import List
from typing import Sequence
from typing import Set
from typing import Tuple

import numpy as np

from ..embed import EmbeddingTable
from ..embed import dot
from ..exceptions import HgcrError
from ..exceptions import OracleFailure
from ..kgraph import SnapshotView
from ..kgraph import edge_key
from ..models import Predicate
from ..models import Verdict
from ..models import VerdictStatus
from ..text_utils import ConceptLexicon
from .clients import Explanation

Pair = Tuple[str, str]


class PredicateExtractor:
    name = "base"

    def extract(self, explanation: Explanation, lexicon: ConceptLexicon) -> List[Predicate]:
        raise NotImplementedError


class LexiconExtractor(PredicateExtractor):
    """
    One predicate per sentence holding at least two lexicon concepts and a
    listed verb: (first concept, verb, second concept).
    """

    name = "lexicon"

    def __init__(self, verbs: Iterable[str]):
        self.verbs = list(verbs)

    def extract(self, explanation: Explanation, lexicon: ConceptLexicon) -> List[Predicate]:
        predicates = []
        for index, sentence in enumerate(explanation.sentences):
            concepts = lexicon.detect(sentence)
            if len(concepts) < 2:
                continue
            verb = lexicon.find_verb(sentence, self.verbs)
            if verb is None:
                continue
            predicates.append(Predicate(concepts[0], verb, concepts[1], index))
        return predicates


def extract_predicates(
    extractor: PredicateExtractor, explanation: Explanation, lexicon: ConceptLexicon
) -> List[Predicate]:
    return extractor.extract(explanation, lexicon)


class PlausibilityOracle:
    name = "base"

    def score(self, subject: str, obj: str) -> float:
        raise NotImplementedError


class ConstantOracle(PlausibilityOracle):
    name = "constant"

    def __init__(self, value: float = 1.0):
        self.value = value

    def score(self, subject: str, obj: str) -> float:
        return self.value


class PairTableOracle(PlausibilityOracle):
    """Scores looked up by unordered pair, default for the rest."""

    name = "table"

    def __init__(self, scores: Dict[Pair, float], default: float = 0.0):
        self.scores = {edge_key(*pair): value for pair, value in scores.items()}
        self.default = default

    def score(self, subject: str, obj: str) -> float:
        return self.scores.get(edge_key(subject, obj), self.default)


class EmbeddingOracle(PlausibilityOracle):
    """Dot product of the concept vectors of a pair."""

    name = "embedding"

    def __init__(self, table: EmbeddingTable):
        self.table = table

    def score(self, subject: str, obj: str) -> float:
        return dot(self.table[subject], self.table[obj])


def _score(oracle: PlausibilityOracle, subject: str, obj: str) -> float:
    try:
        value = float(oracle.score(subject, obj))
    except (HgcrError, KeyError, ValueError, TypeError) as e:
        raise OracleFailure(f"{oracle.name} cannot score {subject} - {obj}: {e}") from e
    if not math.isfinite(value):
        raise OracleFailure(f"{oracle.name} gave {value} for {subject} - {obj}")
    return value


def known_relations(view: SnapshotView) -> Set[Pair]:
    return set(view.edges())


def comparison_pool(view: SnapshotView, subject: str, obj: str) -> List[str]:
    """Partners for comparison pairs: the subject's 2-hop neighborhood, or
    every active concept when that is empty."""
    excluded = {subject, obj}
    pool = view.two_hop(subject) - excluded
    if not pool:
        pool = view.active_nodes() - excluded
    return sorted(pool)


def validate(
    oracle: PlausibilityOracle,
    predicate: Predicate,
    known: Set[Pair],
    view: SnapshotView,
    n_comparison: int = 100,
    top_frac: float = 0.10,
    seed: int = 0,
) -> Verdict:
    """
    Known pairs are accepted without scoring. Other pairs are valid when
    their score reaches the (1 - top_frac) quantile of the scores of
    n_comparison random pairs (subject, c), c drawn from the comparison pool.
    """
    if edge_key(predicate.subject, predicate.object) in known:
        return Verdict(predicate=predicate, status=VerdictStatus.KNOWN)

    score = _score(oracle, predicate.subject, predicate.object)
    pool = comparison_pool(view, predicate.subject, predicate.object)
    if not pool:
        raise OracleFailure(f"no comparison pair for {predicate.subject}")
    rng = np.random.default_rng(seed)
    partners = [pool[i] for i in rng.integers(len(pool), size=n_comparison)]
    scores = np.array([_score(oracle, predicate.subject, c) for c in partners])
    threshold = float(np.quantile(scores, 1.0 - top_frac))

    status = VerdictStatus.RANKED_VALID if score >= threshold else VerdictStatus.IMPLAUSIBLE
    return Verdict(
        predicate=predicate, status=status, score=score, percentile_threshold=threshold
    )


def flag_rework(
    explanation: Explanation, verdicts: Sequence[Verdict]
) -> List[int]:
    """Sorted indices of the sentences owning an implausible predicate."""
    flagged = set()
    for verdict in verdicts:
        index = verdict.predicate.sentence_index
        if not 0 <= index < len(explanation.sentences):
            raise ValueError(f"sentence index {index} out of range")
        if verdict.implausible:
            flagged.add(index)
    return sorted(flagged)

