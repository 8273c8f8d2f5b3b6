from pathlib import Path
from tempfile import TemporaryDirectory
from unittest import TestCase

import numpy as np

from hgcr_lbd.embed import ConceptMeanEncoder
from hgcr_lbd.embed import EmbeddingKind
from hgcr_lbd.embed import EmbeddingTable
from hgcr_lbd.embed import cosine
from hgcr_lbd.embed import dot
from hgcr_lbd.embed import featurize
from hgcr_lbd.embed import load_table
from hgcr_lbd.embed import synthetic_embed
from hgcr_lbd.embed import synthetic_table
from hgcr_lbd.exceptions import DimMismatch
from hgcr_lbd.exceptions import DuplicateId
from hgcr_lbd.exceptions import ParseError
from hgcr_lbd.exceptions import UnknownId
from hgcr_lbd.exceptions import ZeroVector
from hgcr_lbd.text_utils import ConceptLexicon
from tests.fixtures import doc


def one_hot(keys):
    keys = sorted(keys)
    return EmbeddingTable(
        dim=len(keys),
        kind=EmbeddingKind.CONCEPT,
        entries={k: np.eye(len(keys))[i] for i, k in enumerate(keys)},
    )


class LoadTableTests(TestCase):
    def setUp(self):
        self.tmp = TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, text: str) -> Path:
        path = self.dir.joinpath("table.txt")
        path.write_text(text, encoding="utf-8")
        return path

    def test_load(self):
        rows = "\n".join(f"c{i} " + " ".join(["0.5"] * 8) for i in range(3))
        table = load_table(self.write(f"dim=8 kind=concept\n{rows}\n"), "concept")
        self.assertEqual(3, len(table))
        self.assertEqual(8, table.dim)
        self.assertEqual((8,), table["c1"].shape)

    def test_dim_mismatch(self):
        path = self.write("dim=8 kind=concept\na " + "1 " * 8 + "\nb " + "1 " * 16)
        with self.assertRaises(DimMismatch):
            load_table(path, EmbeddingKind.CONCEPT)

    def test_duplicate_id(self):
        path = self.write("dim=2 kind=context\na 1 0\na 0 1\n")
        with self.assertRaises(DuplicateId):
            load_table(path, EmbeddingKind.CONTEXT)

    def test_bad_header_and_kind(self):
        with self.assertRaises(ParseError):
            load_table(self.write("nothing here\n"), EmbeddingKind.CONCEPT)
        with self.assertRaises(ParseError):
            load_table(self.write("dim=2 kind=context\na 1 0\n"), EmbeddingKind.CONCEPT)

    def test_bad_value(self):
        with self.assertRaises(ParseError):
            load_table(self.write("dim=2 kind=concept\na 1 x\n"), EmbeddingKind.CONCEPT)

    def test_save_then_load(self):
        table = synthetic_table(["a", "b"], 4, 7, EmbeddingKind.CONTEXT)
        path = self.dir.joinpath("saved.txt")
        table.save(path)
        loaded = load_table(path, EmbeddingKind.CONTEXT)
        np.testing.assert_array_equal(table["a"], loaded["a"])
        np.testing.assert_array_equal(table["b"], loaded["b"])


class EmbeddingTableTests(TestCase):
    def test_unknown_id(self):
        table = synthetic_table(["a"], 4, 0, EmbeddingKind.CONCEPT)
        with self.assertRaises(UnknownId):
            table["b"]
        with self.assertRaises(KeyError):
            table["b"]

    def test_rows_are_read_only(self):
        table = synthetic_table(["a"], 4, 0, EmbeddingKind.CONCEPT)
        with self.assertRaises(ValueError):
            table["a"][0] = 1.0

    def test_matrix(self):
        table = one_hot(["a", "b", "c"])
        np.testing.assert_array_equal(np.eye(3)[[2, 0]], table.matrix(["c", "a"]))
        self.assertEqual((0, 3), table.matrix([]).shape)


class VectorTests(TestCase):
    def test_synthetic_embed(self):
        a = synthetic_embed("A", 4, 7)
        np.testing.assert_array_equal(a, synthetic_embed("A", 4, 7))
        self.assertAlmostEqual(1.0, float(np.linalg.norm(a)), places=12)
        self.assertFalse(np.array_equal(a, synthetic_embed("A", 4, 8)))
        with self.assertRaises(DimMismatch):
            synthetic_embed("A", 0, 7)

    def test_dot(self):
        self.assertEqual(0.0, dot(np.array([1.0, 0.0]), np.array([0.0, 1.0])))
        self.assertEqual(11.0, dot(np.array([1.0, 2.0]), np.array([3.0, 4.0])))
        with self.assertRaises(DimMismatch):
            dot(np.zeros(2), np.zeros(3))

    def test_cosine(self):
        a = np.array([0.3, -1.2, 2.0])
        self.assertAlmostEqual(1.0, cosine(a, a), places=12)
        self.assertEqual(0.0, cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])))
        self.assertAlmostEqual(
            0.7071067811865476,
            cosine(np.array([1.0, 1.0]), np.array([1.0, 0.0])),
            delta=1e-12,
        )
        with self.assertRaises(ZeroVector):
            cosine(np.zeros(2), np.array([1.0, 0.0]))


class ConceptMeanEncoderTests(TestCase):
    def setUp(self):
        self.table = synthetic_table(["A", "Z", "B"], 8, 3, EmbeddingKind.CONCEPT)
        self.encoder = ConceptMeanEncoder(
            "concept", self.table, ConceptLexicon.from_concepts(["A", "Z", "B"])
        )

    def test_text_and_doc_of_same_concepts_coincide(self):
        text = self.encoder.encode_text("A Z")
        vector = self.encoder.encode_doc(doc("D1", 2000, "Z", "A"))
        self.assertAlmostEqual(1.0, dot(text, vector), places=12)

    def test_nothing_to_encode(self):
        self.assertIsNone(self.encoder.encode_text("no concept here"))
        self.assertIsNone(self.encoder.encode_concepts(["unknown"]))

    def test_doc_vectors_take_precedence(self):
        doc_vectors = EmbeddingTable(
            dim=8, kind=EmbeddingKind.CONTEXT, entries={"D1": np.eye(8)[0]}
        )
        encoder = ConceptMeanEncoder(
            "concept", self.table, self.encoder.lexicon, doc_vectors
        )
        np.testing.assert_array_equal(np.eye(8)[0], encoder.encode_doc(doc("D1", 2000, "A")))
        np.testing.assert_allclose(
            self.table["A"], encoder.encode_doc(doc("D2", 2000, "A")), atol=1e-12
        )

    def test_doc_vectors_dim_must_match(self):
        doc_vectors = EmbeddingTable(
            dim=2, kind=EmbeddingKind.CONTEXT, entries={"D1": np.eye(2)[0]}
        )
        with self.assertRaises(DimMismatch):
            ConceptMeanEncoder("concept", self.table, self.encoder.lexicon, doc_vectors)

    def test_featurize(self):
        contexts = synthetic_table(["D1", "D2"], 5, 0, EmbeddingKind.CONTEXT)
        C, P = featurize(["D2", "D1"], ["A", "B", "Z"], contexts, self.table)
        self.assertEqual((2, 5), C.shape)
        self.assertEqual((3, 8), P.shape)
        np.testing.assert_array_equal(contexts["D2"], C[0])
        np.testing.assert_array_equal(self.table["Z"], P[2])
