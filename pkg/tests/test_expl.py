import math
from pathlib import Path as FilePath
from tempfile import TemporaryDirectory
from unittest import TestCase

import numpy as np
import requests

from hgcr_lbd.embed import ConceptMeanEncoder
from hgcr_lbd.embed import EmbeddingKind
from hgcr_lbd.embed import EmbeddingTable
from hgcr_lbd.exceptions import ClientError
from hgcr_lbd.exceptions import ClientTimeout
from hgcr_lbd.exceptions import ConfigError
from hgcr_lbd.exceptions import EmptyCompletion
from hgcr_lbd.exceptions import ExhaustedCandidates
from hgcr_lbd.exceptions import NoContext
from hgcr_lbd.exceptions import OracleFailure
from hgcr_lbd.expl.clients import Completion
from hgcr_lbd.expl.clients import ContextEchoClient
from hgcr_lbd.expl.clients import Explanation
from hgcr_lbd.expl.clients import GenerationRequest
from hgcr_lbd.expl.clients import LanguageModelClient
from hgcr_lbd.expl.clients import RemoteClient
from hgcr_lbd.expl.clients import ScriptedClient
from hgcr_lbd.expl.clients import generate
from hgcr_lbd.expl.clients import prompt_hash
from hgcr_lbd.expl.feedback import ContextWindow
from hgcr_lbd.expl.feedback import refine_context
from hgcr_lbd.expl.feedback import select_edge_contexts
from hgcr_lbd.expl.metrics import ExplanationMetrics
from hgcr_lbd.expl.metrics import EncoderSim
from hgcr_lbd.expl.metrics import average_repeats
from hgcr_lbd.expl.metrics import convergence_report
from hgcr_lbd.expl.metrics import error_rate
from hgcr_lbd.expl.metrics import explanation_metrics
from hgcr_lbd.expl.metrics import jaccard_terms
from hgcr_lbd.expl.metrics import summarize
from hgcr_lbd.expl.metrics import usage_summary
from hgcr_lbd.expl.prompts import ContextDoc
from hgcr_lbd.expl.prompts import build_bare_prompt
from hgcr_lbd.expl.prompts import build_prompt
from hgcr_lbd.expl.prompts import parse_prompt
from hgcr_lbd.expl.validation import ConstantOracle
from hgcr_lbd.expl.validation import EmbeddingOracle
from hgcr_lbd.expl.validation import LexiconExtractor
from hgcr_lbd.expl.validation import PairTableOracle
from hgcr_lbd.expl.validation import flag_rework
from hgcr_lbd.expl.validation import known_relations
from hgcr_lbd.expl.validation import validate
from hgcr_lbd.hook import load_plugins
from hgcr_lbd.models import ExplainMode
from hgcr_lbd.models import FeedbackTrace
from hgcr_lbd.models import IterationRecord
from hgcr_lbd.models import Path
from hgcr_lbd.models import Predicate
from hgcr_lbd.models import PromptTemplate
from hgcr_lbd.models import Query
from hgcr_lbd.models import UsageRecord
from hgcr_lbd.models import Verdict
from hgcr_lbd.models import VerdictStatus
from hgcr_lbd.registry import Registry
from hgcr_lbd.registry import clients
from hgcr_lbd.registry import oracles
from hgcr_lbd.text_utils import ConceptLexicon
from tests.fixtures import doc
from tests.fixtures import graph_of

PREFIX = "Based on the following scientific abstracts"


def one_hot_table(concepts):
    return EmbeddingTable(
        dim=len(concepts),
        kind=EmbeddingKind.CONCEPT,
        entries={c: np.eye(len(concepts))[i] for i, c in enumerate(concepts)},
    )


def predicate(subject, obj, index=0, verb="affects"):
    return Predicate(subject, verb, obj, index)


def verdict(status, index=0):
    return Verdict(predicate=predicate("A", "B", index), status=status)


class PromptTests(TestCase):
    def test_short_prompt(self):
        prompt = build_prompt(
            "fish oil", "raynaud", [ContextDoc("d1", "Fish oil  lowers\nviscosity.")]
        )
        self.assertTrue(prompt.rendered.startswith(PREFIX))
        self.assertIn("between fish oil and raynaud", prompt.rendered)
        self.assertTrue(prompt.rendered.endswith("Abstract 1 (d1):\nFish oil lowers viscosity."))
        self.assertEqual(["d1"], prompt.doc_ids)

    def test_parse_prompt(self):
        docs = [ContextDoc("d1", "first text."), ContextDoc("d2", "second text.")]
        prompt = build_prompt("A", "Z", docs, PromptTemplate.BASELINE)
        instruction, parsed = parse_prompt(prompt.rendered)
        self.assertTrue(instruction.startswith(PREFIX))
        self.assertTrue(instruction.endswith("indirect linkage between A and Z."))
        self.assertEqual(docs, parsed)

    def test_no_context(self):
        with self.assertRaises(NoContext):
            build_prompt("A", "Z", [])

    def test_bare_prompt(self):
        prompt = build_bare_prompt("A", "Z")
        self.assertEqual(
            "Please describe how an indirect relationship between A and Z might exist.",
            prompt.rendered,
        )
        self.assertEqual([], parse_prompt(prompt.rendered)[1])


class FlakyClient(LanguageModelClient):
    name = "flaky"

    def __init__(self, failures, text="A affects B."):
        self.failures = failures
        self.text = text
        self.calls = 0

    def complete(self, request):
        self.calls += 1
        if self.calls <= self.failures:
            raise ClientError("unavailable")
        return Completion(text=self.text, latency_ms=5.0)


class FakeResponse:
    def __init__(self, payload=None, error=None):
        self.payload = payload
        self.error = error

    def raise_for_status(self):
        pass

    def json(self):
        if self.error:
            raise self.error
        return self.payload


class FakeSession:
    def __init__(self, response=None, error=None):
        self.response = response
        self.error = error
        self.posted = []

    def post(self, url, json=None, timeout=None):
        self.posted.append((url, json, timeout))
        if self.error:
            raise self.error
        return self.response


class GenerateTests(TestCase):
    def setUp(self):
        self.sleeps = []
        self.request = GenerationRequest(prompt="p")

    def test_retries_with_backoff(self):
        client = FlakyClient(failures=2)
        generation = generate(client, self.request, sleep=self.sleeps.append)
        self.assertEqual(3, generation.attempts)
        self.assertEqual([0.5, 1.0], self.sleeps)
        self.assertEqual(["A affects B."], generation.explanation.sentences)
        self.assertEqual(5.0, generation.completion.latency_ms)

    def test_gives_up_after_three_attempts(self):
        client = FlakyClient(failures=5)
        with self.assertRaises(ClientError):
            generate(client, self.request, sleep=self.sleeps.append)
        self.assertEqual(3, client.calls)
        self.assertEqual([0.5, 1.0], self.sleeps)

    def test_empty_completion_is_not_retried(self):
        client = FlakyClient(failures=0, text="  ")
        with self.assertRaises(EmptyCompletion):
            generate(client, self.request, sleep=self.sleeps.append)
        self.assertEqual(1, client.calls)

    def test_remote_client(self):
        session = FakeSession(
            FakeResponse({"text": "A affects B.", "prompt_tokens": 7, "latency_ms": 12.5})
        )
        completion = RemoteClient("http://llm", session=session).complete(self.request)
        self.assertEqual("A affects B.", completion.text)
        self.assertEqual(7, completion.prompt_tokens)
        self.assertEqual(0, completion.completion_tokens)
        self.assertEqual(12.5, completion.latency_ms)
        url, body, _timeout = session.posted[0]
        self.assertEqual("http://llm", url)
        self.assertEqual("p", body["prompt"])
        self.assertEqual(1000, body["max_tokens"])

    def test_remote_client_errors(self):
        session = FakeSession(error=requests.exceptions.Timeout())
        with self.assertRaises(ClientTimeout):
            RemoteClient("http://llm", session=session).complete(self.request)
        session = FakeSession(FakeResponse(error=ValueError("not json")))
        with self.assertRaises(ClientError):
            RemoteClient("http://llm", session=session).complete(self.request)
        session = FakeSession(FakeResponse({"answer": "no text field"}))
        with self.assertRaises(ClientError):
            RemoteClient("http://llm", session=session).complete(self.request)

    def test_timeouts_are_retried(self):
        session = FakeSession(error=requests.exceptions.Timeout())
        client = RemoteClient("http://llm", session=session)
        with self.assertRaises(ClientTimeout):
            generate(client, self.request, sleep=self.sleeps.append)
        self.assertEqual(3, len(session.posted))


class MockClientTests(TestCase):
    def test_echo_client(self):
        lexicon = ConceptLexicon.from_concepts(["fish_oil", "raynaud", "blood_viscosity"])
        prompt = build_prompt(
            "fish_oil",
            "raynaud",
            [ContextDoc("d1", "fish_oil lowers blood_viscosity in raynaud patients.")],
        )
        completion = ContextEchoClient(lexicon).complete(GenerationRequest(prompt.rendered))
        self.assertEqual(
            "fish_oil and raynaud may be indirectly related. "
            "fish_oil affects blood_viscosity. blood_viscosity affects raynaud.",
            completion.text,
        )
        self.assertGreater(completion.prompt_tokens, 0)

    def test_scripted_client(self):
        client = ScriptedClient({prompt_hash("p"): "A affects B."}, default="B.")
        self.assertEqual("A affects B.", client.complete(GenerationRequest("p")).text)
        self.assertEqual("B.", client.complete(GenerationRequest("q")).text)
        with self.assertRaises(ClientError):
            ScriptedClient({}).complete(GenerationRequest("q"))

    def test_scripted_fixture(self):
        with TemporaryDirectory() as tmp:
            path = FilePath(tmp).joinpath("llm.jsonl")
            path.write_text(
                f'{{"prompt_sha256": "{prompt_hash("p")}", "text": "first."}}\n'
                '{"prompt_sha256": "*", "text": "fallback."}\n',
                encoding="utf-8",
            )
            client = ScriptedClient.from_fixture(path)
        self.assertEqual("first.", client.complete(GenerationRequest("p")).text)
        self.assertEqual("fallback.", client.complete(GenerationRequest("x")).text)


class ExtractorTests(TestCase):
    def setUp(self):
        self.lexicon = ConceptLexicon(
            {"fish oil": "fish_oil", "raynaud": "raynaud", "blood viscosity": "bv"}
        )

    def test_one_predicate_per_sentence(self):
        explanation = Explanation.from_text(
            "Fish oil and Raynaud may be linked. Fish oil reduces blood viscosity. "
            "Blood viscosity increases risk of Raynaud. Raynaud is painful."
        )
        extractor = LexiconExtractor(["reduces", "increases", "increases risk of"])
        predicates = extractor.extract(explanation, self.lexicon)
        self.assertEqual(
            [
                Predicate("fish_oil", "reduces", "bv", 1),
                Predicate("bv", "increases risk of", "raynaud", 2),
            ],
            predicates,
        )

    def test_nothing_extracted(self):
        explanation = Explanation.from_text("Nothing to see here.")
        self.assertEqual([], LexiconExtractor(["reduces"]).extract(explanation, self.lexicon))


class ValidateTests(TestCase):
    def setUp(self):
        g = graph_of(
            doc("d1", 2000, "A", "B"), doc("d2", 2000, "B", "C"), doc("d3", 2000, "A", "D")
        )
        self.view = g.snapshot(2000)
        self.known = known_relations(self.view)

    def test_known_pair_is_not_scored(self):
        result = validate(ConstantOracle(float("nan")), predicate("B", "A"), self.known, self.view)
        self.assertEqual(VerdictStatus.KNOWN, result.status)
        self.assertIsNone(result.score)

    def test_ranked_valid_at_threshold(self):
        oracle = PairTableOracle({("A", "C"): 0.5}, default=0.5)
        result = validate(oracle, predicate("A", "C"), self.known, self.view)
        self.assertEqual(VerdictStatus.RANKED_VALID, result.status)
        self.assertEqual(0.5, result.percentile_threshold)

    def test_implausible(self):
        oracle = PairTableOracle({("A", "C"): 0.2}, default=0.5)
        result = validate(oracle, predicate("A", "C"), self.known, self.view)
        self.assertEqual(VerdictStatus.IMPLAUSIBLE, result.status)
        self.assertTrue(result.implausible)
        self.assertEqual(0.2, result.score)

    def test_deterministic_per_seed(self):
        oracle = PairTableOracle({("A", "B"): 0.9, ("A", "C"): 0.4}, default=0.1)
        first = validate(oracle, predicate("A", "C"), set(), self.view, seed=3)
        second = validate(oracle, predicate("A", "C"), set(), self.view, seed=3)
        self.assertEqual(first, second)

    def test_oracle_failures(self):
        with self.assertRaises(OracleFailure):
            validate(ConstantOracle(float("nan")), predicate("A", "C"), self.known, self.view)
        table = one_hot_table(["A", "B"])
        with self.assertRaises(OracleFailure):
            validate(EmbeddingOracle(table), predicate("A", "C"), self.known, self.view)
        empty = graph_of(doc("d1", 2000, "A", "B")).snapshot(1999)
        with self.assertRaises(OracleFailure):
            validate(ConstantOracle(), predicate("A", "B"), set(), empty)

    def test_flag_rework(self):
        explanation = Explanation.from_text("One. Two. Three.")
        verdicts = [
            verdict(VerdictStatus.IMPLAUSIBLE, 2),
            verdict(VerdictStatus.KNOWN, 1),
            verdict(VerdictStatus.IMPLAUSIBLE, 0),
            verdict(VerdictStatus.IMPLAUSIBLE, 2),
        ]
        self.assertEqual([0, 2], flag_rework(explanation, verdicts))
        self.assertEqual([], flag_rework(explanation, []))
        with self.assertRaises(ValueError):
            flag_rework(explanation, [verdict(VerdictStatus.KNOWN, 3)])


def towards(pair_vector, cos, orthogonal):
    return cos * pair_vector + math.sqrt(1.0 - cos ** 2) * orthogonal


class ContextSelectionTests(TestCase):
    """Edge A-B has a1, a2, a3 at cosines 0.1, 0.9, 0.5 to the pair; B-Z has
    b1, b2 at 0.5, 0.9."""

    def setUp(self):
        e = np.eye(3)
        ab = (e[0] + e[1]) / math.sqrt(2)
        bz = (e[1] + e[2]) / math.sqrt(2)
        doc_vectors = EmbeddingTable(
            dim=3,
            kind=EmbeddingKind.CONTEXT,
            entries={
                "a1": towards(ab, 0.1, e[2]),
                "a2": towards(ab, 0.9, e[2]),
                "a3": towards(ab, 0.5, e[2]),
                "b1": towards(bz, 0.5, e[0]),
                "b2": towards(bz, 0.9, e[0]),
            },
        )
        concepts = ["A", "B", "Z"]
        self.encoder = ConceptMeanEncoder(
            "concept", one_hot_table(concepts), ConceptLexicon.from_concepts(concepts), doc_vectors
        )
        graph = graph_of(
            *[doc(d, 2000, "A", "B") for d in ("a1", "a2", "a3")],
            *[doc(d, 2000, "B", "Z") for d in ("b1", "b2")],
        )
        self.view = graph.snapshot(2000)
        self.path = Path(nodes=["A", "B", "Z"])

    def test_top_one_per_edge(self):
        selection = select_edge_contexts(self.path, self.view, self.encoder, k=2)
        self.assertEqual(["a2", "b2"], selection.doc_ids)
        self.assertEqual([("A", "B"), ("B", "Z")], [e.edge for e in selection.entries])
        self.assertFalse(selection.truncated)

    def test_round_robin(self):
        selection = select_edge_contexts(self.path, self.view, self.encoder, k=4)
        self.assertEqual(["a2", "b2", "a3", "b1"], selection.doc_ids)

    def test_truncated(self):
        selection = select_edge_contexts(self.path, self.view, self.encoder, k=7)
        self.assertEqual(["a2", "b2", "a3", "b1", "a1"], selection.doc_ids)
        self.assertTrue(selection.truncated)

    def test_no_evidence(self):
        with self.assertRaises(NoContext):
            select_edge_contexts(self.path, self.view.base.snapshot(1999), self.encoder)

    def test_refine_until_exhausted(self):
        window = ContextWindow(select_edge_contexts(self.path, self.view, self.encoder, k=2))
        first = refine_context("A affects B.", window, self.view, self.encoder)
        self.assertEqual(("A", "B", "a2", "a3"), (first.u, first.v, first.old_doc, first.new_doc))
        self.assertEqual(["a3", "b2"], window.doc_ids)

        second = refine_context("A affects B.", window, self.view, self.encoder)
        self.assertEqual(("b2", "b1"), (second.old_doc, second.new_doc))
        self.assertEqual(["a3", "b1"], window.doc_ids)
        self.assertEqual({"a2", "a3", "b1", "b2"}, window.used)

        with self.assertRaises(ExhaustedCandidates):
            refine_context("A affects B.", window, self.view, self.encoder)
        with self.assertRaises(ExhaustedCandidates):
            refine_context("Nothing known.", window, self.view, self.encoder)


def trace(converged, iterations_used, mode=ExplainMode.FEEDBACK):
    return FeedbackTrace(
        query=Query("A", "Z", 2022),
        path_nodes=["A", "B", "Z"],
        mode=mode,
        k=7,
        max_iter=5,
        converged=converged,
        iterations_used=iterations_used,
    )


def metrics_row(mode, jaccard, sim=None, path_key=""):
    return ExplanationMetrics(
        trace_key=path_key or "k",
        path_key=path_key,
        mode=mode,
        k=7,
        jaccard=jaccard,
        error_rate=0.0,
        sims=[EncoderSim("concept", sim)],
    )


class MetricsTests(TestCase):
    def test_jaccard(self):
        self.assertAlmostEqual(1 / 3, jaccard_terms(["A", "B"], ["B", "C"]), delta=1e-12)
        self.assertEqual(0.0, jaccard_terms([], []))
        self.assertEqual(1.0, jaccard_terms(["A"], ["A"]))

    def test_error_rate(self):
        verdicts = [
            verdict(VerdictStatus.IMPLAUSIBLE),
            verdict(VerdictStatus.KNOWN),
            verdict(VerdictStatus.RANKED_VALID),
            verdict(VerdictStatus.KNOWN),
        ]
        self.assertEqual(0.25, error_rate(verdicts))
        self.assertEqual(0.0, error_rate([]))

    def test_convergence_report(self):
        report = convergence_report([trace(True, 1), trace(True, 2), trace(True, 1), trace(False, 5)])
        self.assertEqual(4, report.total)
        self.assertEqual(1, report.did_not_converge)
        self.assertEqual([2, 1, 0, 0, 0], [report.count(i) for i in range(1, 6)])

    def test_explanation_metrics(self):
        t = trace(True, 1)
        t.iterations.append(
            IterationRecord(
                index=1,
                prompt="p",
                explanation="A affects B.",
                verdicts=[verdict(VerdictStatus.KNOWN)],
            )
        )
        concepts = ["A", "B", "C"]
        encoder = ConceptMeanEncoder(
            "concept", one_hot_table(concepts), ConceptLexicon.from_concepts(concepts)
        )
        row = explanation_metrics(t, concepts, [encoder])
        self.assertAlmostEqual(2 / 3, row.jaccard, delta=1e-12)
        self.assertAlmostEqual(2 / math.sqrt(6), row.sim("concept"), delta=1e-12)
        self.assertEqual(0.0, row.error_rate)
        self.assertFalse(row.no_predicates)
        self.assertEqual("feedback", row.mode)

    def test_trace_without_predicates(self):
        row = explanation_metrics(trace(False, 0), ["A"], [])
        self.assertTrue(row.no_predicates)
        self.assertEqual(0.0, row.error_rate)
        self.assertEqual(0.0, row.jaccard)

    def test_summarize(self):
        rows = [
            metrics_row("feedback", 0.2, 0.5),
            metrics_row("feedback", 0.4, None),
            metrics_row("baseline", 0.1, 0.3),
        ]
        summaries = {(s.mode, s.metric): s for s in summarize(rows)}
        jaccard = summaries[("feedback", "jaccard")]
        self.assertEqual(2, jaccard.runs)
        self.assertAlmostEqual(0.3, jaccard.mean, delta=1e-12)
        self.assertAlmostEqual(0.1, jaccard.std, delta=1e-12)
        self.assertEqual(1, summaries[("feedback", "sim:concept")].runs)
        self.assertEqual(0.3, summaries[("baseline", "sim:concept")].mean)

    def test_average_repeats(self):
        rows = [
            metrics_row("prompt", 0.2, 0.5, path_key="p"),
            metrics_row("prompt", 0.1, 0.9, path_key="q"),
            metrics_row("prompt", 0.4, None, path_key="p"),
            metrics_row("prompt", 0.6, 0.3, path_key="p"),
        ]
        p, q = average_repeats(rows)
        self.assertEqual(("p", 3), (p.trace_key, p.repeats))
        self.assertAlmostEqual(0.4, p.jaccard, delta=1e-12)
        self.assertAlmostEqual(0.4, p.sim("concept"), delta=1e-12)
        self.assertIs(rows[1], q)
        summaries = {s.metric: s for s in summarize([p, q])}
        self.assertEqual(2, summaries["jaccard"].runs)
        self.assertAlmostEqual(0.25, summaries["jaccard"].mean, delta=1e-12)

    def test_usage_summary(self):
        records = [
            UsageRecord("k", 1, 1, 10, 5, 10.0),
            UsageRecord("k", 2, 3, 20, 15, 30.0),
        ]
        summary = usage_summary(records)
        self.assertEqual(2, summary.requests)
        self.assertEqual(2.0, summary.mean_attempts)
        self.assertEqual(20.0, summary.mean_latency_ms)
        self.assertEqual(10.0, summary.std_latency_ms)
        self.assertIsNone(usage_summary([]).mean_latency_ms)


class RegistryTests(TestCase):
    def test_builtin_components(self):
        load_plugins()
        self.assertEqual(["echo", "remote", "scripted"], clients.names())
        lexicon = ConceptLexicon.from_concepts(["A"])
        self.assertIsInstance(clients.create("echo", lexicon=lexicon), ContextEchoClient)
        self.assertIsInstance(oracles.create("constant"), ConstantOracle)

    def test_unknown_name(self):
        with self.assertRaises(ConfigError):
            oracles.create("missing")

    def test_register_decorator(self):
        registry = Registry("thing")

        @registry.register("one")
        def one(**options):
            return options

        registry.register("two", dict)
        self.assertIn("one", registry)
        self.assertEqual({"x": 1}, registry.create("one", x=1))
        self.assertEqual(["one", "two"], registry.names())
