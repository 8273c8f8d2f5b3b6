from pathlib import Path

from hgcr_lbd.kgraph import TemporalGraph
from hgcr_lbd.models import DocRecord

FIXTURES = Path(__file__).parent
CORPUS = FIXTURES.joinpath("corpus.jsonl")
SMALL_CORPUS = FIXTURES.joinpath("small_corpus.jsonl")

SPLIT_YEAR = 2022
FISH_OIL_QUERY = "fish_oil|raynaud|2022"
MAGNESIUM_QUERY = "magnesium|migraine|2022"


def doc(doc_id: str, year: int, *concepts: str, **kwargs) -> DocRecord:
    return DocRecord(doc_id=doc_id, year=year, concepts=list(concepts), **kwargs)


def graph_of(*docs: DocRecord) -> TemporalGraph:
    return TemporalGraph.from_documents(docs)


def corpus_graph() -> TemporalGraph:
    return TemporalGraph.load(CORPUS)
