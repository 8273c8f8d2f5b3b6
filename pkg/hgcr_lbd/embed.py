"""
Concept and context vectors.

Tables are loaded from text files or synthesized from a seed; synthetic
vectors are unit-norm so dot product and cosine coincide on them.
"""
import hashlib
from dataclasses import dataclass
from dataclasses import field
from enum import Enum
from pathlib import Path
from typing import Dict
from typing import Iterable
from typing import List
from typing import Optional
from typing import Sequence

import numpy as np

from .exceptions import DimMismatch
from .exceptions import DuplicateId
from .exceptions import ParseError
from .exceptions import UnknownId
from .exceptions import ZeroVector
from .text_utils import ConceptLexicon


class EmbeddingKind(Enum):
    CONCEPT = "concept"
    CONTEXT = "context"


@dataclass(frozen=True)
class EmbeddingTable:
    dim: int
    kind: EmbeddingKind
    entries: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim <= 0:
            raise DimMismatch(f"dim must be positive, got {self.dim}")
        for key, vector in self.entries.items():
            if vector.shape != (self.dim,):
                raise DimMismatch(f"{key}: expected dim {self.dim}, got {vector.shape}")
            if not np.all(np.isfinite(vector)):
                raise ParseError(f"{key}: non finite value")
            vector.setflags(write=False)

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, key: str) -> np.ndarray:
        try:
            return self.entries[key]
        except KeyError:
            raise UnknownId(f"no {self.kind.value} vector for {key!r}")

    def matrix(self, keys: Sequence[str]) -> np.ndarray:
        return np.stack([self[k] for k in keys]) if keys else np.zeros((0, self.dim))

    def save(self, path):
        lines = [f"dim={self.dim} kind={self.kind.value}"]
        for key in sorted(self.entries):
            values = " ".join(repr(float(x)) for x in self.entries[key])
            lines.append(f"{key} {values}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_header(line: str):
    try:
        items = dict(part.split("=", 1) for part in line.split())
        return int(items["dim"]), EmbeddingKind(items["kind"])
    except (KeyError, ValueError) as e:
        raise ParseError(f"bad embedding header {line.strip()!r}") from e


def load_table(path, kind: EmbeddingKind) -> EmbeddingTable:
    kind = EmbeddingKind(kind)
    with Path(path).open(encoding="utf-8") as f:
        header = f.readline()
        if not header.strip():
            raise ParseError(f"{path}: missing header")
        dim, declared = _parse_header(header)
        if declared is not kind:
            raise ParseError(f"{path}: holds {declared.value} vectors, not {kind.value}")
        entries = {}
        for lineno, line in enumerate(f, start=2):
            parts = line.split()
            if not parts:
                continue
            key, raw = parts[0], parts[1:]
            if len(raw) != dim:
                raise DimMismatch(f"{path}:{lineno}: {key} has {len(raw)} values, dim={dim}")
            if key in entries:
                raise DuplicateId(f"{path}:{lineno}: duplicate id {key!r}")
            try:
                entries[key] = np.array([float(x) for x in raw], dtype=np.float64)
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: {e}") from e
    return EmbeddingTable(dim=dim, kind=kind, entries=entries)


def synthetic_embed(key: str, dim: int, seed: int) -> np.ndarray:
    """Deterministic unit vector derived from (key, seed)."""
    if dim <= 0:
        raise DimMismatch(f"dim must be positive, got {dim}")
    digest = hashlib.sha256(f"{seed}\x1f{key}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    vector = rng.standard_normal(dim)
    return vector / np.linalg.norm(vector)


def synthetic_table(
    keys: Iterable[str], dim: int, seed: int, kind: EmbeddingKind
) -> EmbeddingTable:
    return EmbeddingTable(
        dim=dim,
        kind=EmbeddingKind(kind),
        entries={k: synthetic_embed(k, dim, seed) for k in sorted(set(keys))},
    )


def _check_dims(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise DimMismatch(f"dimension mismatch {a.shape} vs {b.shape}")


def dot(a: np.ndarray, b: np.ndarray) -> float:
    _check_dims(a, b)
    return float(np.dot(a, b))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    _check_dims(a, b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine of a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def unit_mean(vectors: Sequence[np.ndarray]) -> Optional[np.ndarray]:
    """Normalised mean, None when nothing to average or the mean vanishes."""
    if not len(vectors):
        return None
    mean = np.mean(np.stack(vectors), axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0:
        return None
    return mean / norm


class ConceptMeanEncoder:
    """
    Text encoder standing in for a neural sentence encoder: a text is the
    normalised mean of the concept vectors of the concepts it mentions.

    Documents listed in doc_vectors use that vector instead; the table must
    live in the concept space.
    """

    def __init__(
        self,
        name: str,
        table: EmbeddingTable,
        lexicon: ConceptLexicon,
        doc_vectors: Optional[EmbeddingTable] = None,
    ):
        if doc_vectors is not None and doc_vectors.dim != table.dim:
            raise DimMismatch(
                f"document vectors have dim {doc_vectors.dim}, concepts {table.dim}"
            )
        self.name = name
        self.table = table
        self.lexicon = lexicon
        self.doc_vectors = doc_vectors

    @property
    def dim(self) -> int:
        return self.table.dim

    def encode_concepts(self, concepts: Iterable[str]) -> Optional[np.ndarray]:
        unique = sorted({c for c in concepts if c in self.table})
        return unit_mean([self.table[c] for c in unique])

    def encode_text(self, text: str) -> Optional[np.ndarray]:
        return self.encode_concepts(self.lexicon.detect(text))

    def encode_doc(self, doc) -> Optional[np.ndarray]:
        if self.doc_vectors is not None and doc.doc_id in self.doc_vectors:
            return self.doc_vectors[doc.doc_id]
        return self.encode_concepts(doc.concepts)

    def encode_pair(self, u: str, v: str) -> np.ndarray:
        return unit_mean([self.table[u], self.table[v]])


def featurize(
    contexts: Sequence[str],
    nodes: Sequence[str],
    context_table: EmbeddingTable,
    concept_table: EmbeddingTable,
) -> List[np.ndarray]:
    """Context rows C and path node rows P for the ranker."""
    return [context_table.matrix(list(contexts)), concept_table.matrix(list(nodes))]
