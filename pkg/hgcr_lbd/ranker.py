"""
Path plausibility scorer.

    C' = SelfAttn(C)
    A  = CrossAttn(Q=C', K=P, V=P)
    S  = sigmoid(W . MeanPool(A) + b)

C holds the context document vectors of a path and P its node vectors,
both projected to d_model first. There is no positional encoding, so the
score does not depend on the order of the rows of C or P. Gradients are
derived by hand and checked against finite differences in the tests.
"""
import math
from dataclasses import dataclass
from dataclasses import field
from typing import Dict
from typing import Iterator
from typing import List
from typing import Sequence
from typing import Tuple

import numpy as np

from .embed import ConceptMeanEncoder
from .embed import EmbeddingTable
from .embed import cosine
from .embed import featurize
from .exceptions import ConfigError
from .exceptions import EmptyDataset
from .exceptions import EmptyNegatives
from .exceptions import ShapeMismatch
from .kgraph import TemporalGraph
from .logger import logger
from .models import LabeledPathSample
from .serialization import read_document
from .serialization import write_document

PARAM_NAMES = (
    "proj_ctx",
    "proj_node",
    "self_q",
    "self_k",
    "self_v",
    "self_o",
    "cross_q",
    "cross_k",
    "cross_v",
    "cross_o",
    "w",
    "b",
)

Features = Tuple[np.ndarray, np.ndarray]


@dataclass
class RankerConfig:
    d_model: int = 32
    heads: int = 2
    d_n: int = 32
    d_p: int = 32
    margin: float = 0.3
    lr: float = 0.05
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if min(self.d_model, self.heads, self.d_n, self.d_p) <= 0:
            raise ConfigError("ranker dimensions must be positive")
        if self.d_model % self.heads:
            raise ConfigError(
                f"d_model={self.d_model} is not divisible by heads={self.heads}"
            )
        if self.margin <= 0 or self.lr <= 0:
            raise ConfigError("margin and lr must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must not be negative")

    @property
    def d_head(self) -> int:
        return self.d_model // self.heads

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        d, h, dh = self.d_model, self.heads, self.d_head
        shapes = {"proj_ctx": (self.d_p, d), "proj_node": (self.d_n, d)}
        for block in ("self", "cross"):
            for part in ("q", "k", "v"):
                shapes[f"{block}_{part}"] = (h, d, dh)
            shapes[f"{block}_o"] = (d, d)
        shapes["w"] = (d,)
        shapes["b"] = ()
        return shapes


@dataclass
class TensorRecord:
    name: str
    shape: List[int] = field(default_factory=list)
    values: List[float] = field(default_factory=list)


@dataclass
class Checkpoint:
    config: RankerConfig
    tensors: List[TensorRecord] = field(default_factory=list)


class RankerParams:
    def __init__(self, config: RankerConfig, tensors: Dict[str, np.ndarray]):
        shapes = config.shapes()
        for name in PARAM_NAMES:
            if name not in tensors:
                raise ShapeMismatch(f"missing parameter tensor {name}")
            if tensors[name].shape != shapes[name]:
                raise ShapeMismatch(
                    f"{name}: expected {shapes[name]}, got {tensors[name].shape}"
                )
        self.config = config
        self.tensors = {n: np.asarray(tensors[n], dtype=np.float64) for n in PARAM_NAMES}
        self.loss_log: List[float] = []

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def items(self) -> Iterator[Tuple[str, np.ndarray]]:
        for name in PARAM_NAMES:
            yield name, self.tensors[name]

    def copy(self) -> "RankerParams":
        return RankerParams(self.config, {n: t.copy() for n, t in self.items()})

    @classmethod
    def zeros(cls, config: RankerConfig) -> "RankerParams":
        return cls(config, {n: np.zeros(s) for n, s in config.shapes().items()})

    @classmethod
    def initialize(cls, config: RankerConfig) -> "RankerParams":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); zero bias."""
        rng = np.random.default_rng(config.seed)
        tensors = {}
        for name, shape in config.shapes().items():
            if name == "b":
                tensors[name] = np.zeros(shape)
                continue
            fan_in = shape[-2] if len(shape) > 1 else shape[0]
            bound = 1.0 / math.sqrt(fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape)
        return cls(config, tensors)

    def save(self, path):
        tensors = [
            TensorRecord(name=n, shape=list(t.shape), values=t.ravel().tolist())
            for n, t in self.items()
        ]
        write_document(path, Checkpoint(config=self.config, tensors=tensors))

    @classmethod
    def load(cls, path) -> "RankerParams":
        checkpoint = read_document(path, Checkpoint)
        tensors = {
            t.name: np.array(t.values, dtype=np.float64).reshape(tuple(t.shape))
            for t in checkpoint.tensors
        }
        return cls(checkpoint.config, tensors)


@dataclass
class ScoredSample:
    sample: LabeledPathSample
    score: float


@dataclass
class Group:
    """One positive with every negative of its query."""

    positive: Features
    negatives: List[Features]
    key: str = ""


# scores stay strictly inside (0, 1) once exp saturates
SCORE_MIN = float(np.nextafter(0.0, 1.0))
SCORE_MAX = float(np.nextafter(1.0, 0.0))


def sigmoid(z: float) -> float:
    if z >= 0:
        s = 1.0 / (1.0 + math.exp(-z))
    else:
        e = math.exp(z)
        s = e / (1.0 + e)
    return min(max(s, SCORE_MIN), SCORE_MAX)


def softmax(x: np.ndarray) -> np.ndarray:
    shifted = np.exp(x - x.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def _attend(xq, xkv, wq, wk, wv, wo):
    scale = 1.0 / math.sqrt(wq.shape[2])
    heads, cache = [], []
    for h in range(wq.shape[0]):
        q, k, v = xq @ wq[h], xkv @ wk[h], xkv @ wv[h]
        a = softmax((q @ k.T) * scale)
        heads.append(a @ v)
        cache.append((q, k, v, a))
    concat = np.concatenate(heads, axis=1)
    return concat @ wo, (xq, xkv, concat, cache, scale)


def _attend_backward(d_out, wq, wk, wv, wo, cached):
    xq, xkv, concat, per_head, scale = cached
    dh = wq.shape[2]
    d_wo = concat.T @ d_out
    d_concat = d_out @ wo.T
    d_xq, d_xkv = np.zeros_like(xq), np.zeros_like(xkv)
    d_wq, d_wk, d_wv = np.zeros_like(wq), np.zeros_like(wk), np.zeros_like(wv)
    for h, (q, k, v, a) in enumerate(per_head):
        d_head = d_concat[:, h * dh : (h + 1) * dh]
        d_a = d_head @ v.T
        d_v = a.T @ d_head
        d_s = a * (d_a - (d_a * a).sum(axis=1, keepdims=True)) * scale
        d_q = d_s @ k
        d_k = d_s.T @ q
        d_wq[h] = xq.T @ d_q
        d_wk[h] = xkv.T @ d_k
        d_wv[h] = xkv.T @ d_v
        d_xq += d_q @ wq[h].T
        d_xkv += d_k @ wk[h].T + d_v @ wv[h].T
    return d_xq, d_xkv, d_wq, d_wk, d_wv, d_wo


def _check_inputs(params: RankerParams, C: np.ndarray, P: np.ndarray):
    config = params.config
    if C.ndim != 2 or C.shape[0] < 1 or C.shape[1] != config.d_p:
        raise ShapeMismatch(f"context rows must be (m>=1, {config.d_p}), got {C.shape}")
    if P.ndim != 2 or P.shape[0] < 3 or P.shape[1] != config.d_n:
        raise ShapeMismatch(f"path rows must be (k>=3, {config.d_n}), got {P.shape}")


def _forward(params: RankerParams, C: np.ndarray, P: np.ndarray):
    _check_inputs(params, C, P)
    p = params.tensors
    x = C @ p["proj_ctx"]
    y = P @ p["proj_node"]
    c_prime, self_cache = _attend(x, x, p["self_q"], p["self_k"], p["self_v"], p["self_o"])
    attended, cross_cache = _attend(
        c_prime, y, p["cross_q"], p["cross_k"], p["cross_v"], p["cross_o"]
    )
    pooled = attended.mean(axis=0)
    score = sigmoid(float(p["w"] @ pooled + p["b"]))
    return score, (C, P, self_cache, cross_cache, pooled, attended.shape[0], score)


def forward(params: RankerParams, C: np.ndarray, P: np.ndarray) -> float:
    return _forward(params, C, P)[0]


def _backward(params: RankerParams, cached, d_score: float, grads: Dict[str, np.ndarray]):
    p = params.tensors
    C, P, self_cache, cross_cache, pooled, m, score = cached
    d_z = d_score * score * (1.0 - score)
    grads["w"] += d_z * pooled
    grads["b"] += d_z
    d_attended = np.tile(d_z * p["w"] / m, (m, 1))

    d_cprime, d_y, d_wq, d_wk, d_wv, d_wo = _attend_backward(
        d_attended, p["cross_q"], p["cross_k"], p["cross_v"], p["cross_o"], cross_cache
    )
    grads["cross_q"] += d_wq
    grads["cross_k"] += d_wk
    grads["cross_v"] += d_wv
    grads["cross_o"] += d_wo

    d_xq, d_xkv, d_wq, d_wk, d_wv, d_wo = _attend_backward(
        d_cprime, p["self_q"], p["self_k"], p["self_v"], p["self_o"], self_cache
    )
    grads["self_q"] += d_wq
    grads["self_k"] += d_wk
    grads["self_v"] += d_wv
    grads["self_o"] += d_wo

    grads["proj_ctx"] += C.T @ (d_xq + d_xkv)
    grads["proj_node"] += P.T @ d_y


def margin_loss(s_pos: float, s_negs: Sequence[float], margin: float) -> float:
    """Mean hinge max(0, margin - (s_pos - s_neg)) over the negatives."""
    if not len(s_negs):
        raise EmptyNegatives("margin loss needs at least one negative")
    return sum(max(0.0, margin - (s_pos - s)) for s in s_negs) / len(s_negs)


def loss_and_gradients(
    params: RankerParams, group: Group
) -> Tuple[float, Dict[str, np.ndarray]]:
    if not group.negatives:
        raise EmptyNegatives(f"group {group.key!r} has no negative")
    margin = params.config.margin
    s_pos, pos_cache = _forward(params, *group.positive)
    negatives = [_forward(params, *features) for features in group.negatives]
    loss = margin_loss(s_pos, [s for s, _c in negatives], margin)

    grads = {n: np.zeros_like(t) for n, t in params.items()}
    active = [cache for s, cache in negatives if margin - (s_pos - s) > 0]
    if not active:
        return loss, grads
    n = len(negatives)
    _backward(params, pos_cache, -len(active) / n, grads)
    for cache in active:
        _backward(params, cache, 1.0 / n, grads)
    return loss, grads


def gradients(params: RankerParams, group: Group) -> Dict[str, np.ndarray]:
    return loss_and_gradients(params, group)[1]


def train(config: RankerConfig, groups: Sequence[Group]) -> RankerParams:
    """Plain gradient descent, one step per group, fixed group order."""
    if not groups:
        raise EmptyDataset("no training group")
    for group in groups:
        if not group.negatives:
            raise EmptyNegatives(f"group {group.key!r} has no negative")

    params = RankerParams.initialize(config)
    for epoch in range(config.epochs):
        losses = []
        for group in groups:
            loss, grads = loss_and_gradients(params, group)
            losses.append(loss)
            for name, grad in grads.items():
                params.tensors[name] -= config.lr * grad
        mean = float(np.mean(losses))
        params.loss_log.append(mean)
        if epoch % 10 == 0 or epoch == config.epochs - 1:
            logger.info(f"epoch {epoch}: mean margin loss {mean:.6f}")
        if mean == 0.0:
            logger.info(f"every margin satisfied after epoch {epoch}")
            break
    return params


class Featurizer:
    """Look up context and node rows of a sample."""

    def __init__(self, concept_table: EmbeddingTable, context_table: EmbeddingTable):
        self.concept_table = concept_table
        self.context_table = context_table

    def __call__(self, sample: LabeledPathSample) -> Features:
        C, P = featurize(
            sample.contexts, sample.path.nodes, self.context_table, self.concept_table
        )
        return C, P


def build_groups(
    samples: Sequence[LabeledPathSample], featurizer: Featurizer
) -> List[Group]:
    """Pair each positive with all negatives of its query, in sample order."""
    by_query: Dict[str, List[LabeledPathSample]] = {}
    for sample in samples:
        by_query.setdefault(sample.query.key, []).append(sample)

    groups = []
    for key, members in by_query.items():
        negatives = [featurizer(s) for s in members if not s.is_positive]
        positives = [s for s in members if s.is_positive]
        if positives and not negatives:
            logger.warning(f"query {key} has positives but no negative, skipped")
            continue
        for index, positive in enumerate(positives):
            groups.append(Group(featurizer(positive), negatives, f"{key}#{index}"))
    return groups


def _sort_scored(scored: List[ScoredSample]) -> List[ScoredSample]:
    return sorted(scored, key=lambda s: (-s.score, s.sample.path.nodes))


def score_paths(
    params: RankerParams,
    samples: Sequence[LabeledPathSample],
    featurizer: Featurizer,
) -> List[ScoredSample]:
    scored = [ScoredSample(s, forward(params, *featurizer(s))) for s in samples]
    return _sort_scored(scored)


def score_by_similarity(
    samples: Sequence[LabeledPathSample],
    encoder: ConceptMeanEncoder,
    graph: TemporalGraph,
) -> List[ScoredSample]:
    """
    Path-free retrieval baseline: mean cosine between the context documents
    of a sample and its query pair.
    """
    scored = []
    for sample in samples:
        query_vector = encoder.encode_pair(sample.query.source, sample.query.target)
        sims = []
        for doc_id in sample.contexts:
            vector = encoder.encode_doc(graph.document(doc_id))
            if vector is not None and query_vector is not None:
                sims.append(cosine(vector, query_vector))
        scored.append(ScoredSample(sample, float(np.mean(sims)) if sims else 0.0))
    return _sort_scored(scored)


def scores_by_query(scored: Sequence[ScoredSample]) -> Dict[str, List[ScoredSample]]:
    grouped: Dict[str, List[ScoredSample]] = {}
    for item in scored:
        grouped.setdefault(item.sample.query.key, []).append(item)
    return grouped

