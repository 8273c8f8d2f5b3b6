"""
Language model clients.

Every client answers a GenerationRequest with a Completion. The remote
client posts the request as JSON to an HTTP endpoint; the two mocks are
deterministic and never touch the network.
"""
import hashlib
import time
from dataclasses import asdict
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from typing import Callable
from typing import Dict
from typing import List
from typing import Optional

import requests

from ..exceptions import ClientError
from ..exceptions import ClientTimeout
from ..exceptions import EmptyCompletion
from ..logger import logger
from ..serialization import read_records
from ..text_utils import ConceptLexicon
from ..text_utils import count_tokens
from ..text_utils import split_sentences
from .prompts import parse_prompt

RETRY_ATTEMPTS = 3
RETRY_BACKOFF = 0.5


@dataclass
class GenerationRequest:
    prompt: str
    max_tokens: int = 1000
    temperature: float = 1e-19
    top_p: float = 1e-9


@dataclass
class Completion:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_ms: float = 0.0


@dataclass
class Explanation:
    text: str
    sentences: List[str] = field(default_factory=list)

    @classmethod
    def from_text(cls, text: str) -> "Explanation":
        return cls(text=text, sentences=split_sentences(text))


@dataclass
class Generation:
    explanation: Explanation
    completion: Completion
    attempts: int


@dataclass
class ScriptedResponse:
    prompt_sha256: str
    text: str


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class LanguageModelClient:
    name = "base"

    def complete(self, request: GenerationRequest) -> Completion:
        raise NotImplementedError


class RemoteClient(LanguageModelClient):
    """
    POST {prompt, max_tokens, temperature, top_p} and read back
    {text, prompt_tokens, completion_tokens, latency_ms}.
    """

    name = "remote"

    def __init__(self, endpoint: str, timeout: float = 120.0, session=None):
        self.endpoint = endpoint
        self.timeout = timeout
        self.session = session or requests.Session()

    def complete(self, request: GenerationRequest) -> Completion:
        start = time.perf_counter()
        try:
            response = self.session.post(
                self.endpoint, json=asdict(request), timeout=self.timeout
            )
            response.raise_for_status()
            payload = response.json()
        except requests.exceptions.Timeout as e:
            raise ClientTimeout(f"{self.endpoint} timed out after {self.timeout}s") from e
        except requests.exceptions.RequestException as e:
            raise ClientError(f"{self.endpoint}: {e}") from e
        except ValueError as e:
            raise ClientError(f"{self.endpoint} answered with invalid JSON") from e

        if not isinstance(payload, dict) or not isinstance(payload.get("text"), str):
            raise ClientError(f"{self.endpoint} answered without a text field")
        return Completion(
            text=payload["text"],
            prompt_tokens=int(payload.get("prompt_tokens") or 0),
            completion_tokens=int(payload.get("completion_tokens") or 0),
            latency_ms=float(
                payload.get("latency_ms") or (time.perf_counter() - start) * 1000
            ),
        )


class ContextEchoClient(LanguageModelClient):
    """
    Writes one sentence naming the query pair, then links consecutive
    concepts of every attached abstract with a fixed verb.
    """

    name = "echo"

    def __init__(self, lexicon: ConceptLexicon, verb: str = "affects"):
        self.lexicon = lexicon
        self.verb = verb

    def complete(self, request: GenerationRequest) -> Completion:
        instruction, docs = parse_prompt(request.prompt)
        surface = self.lexicon.surface
        sentences = []
        endpoints = self.lexicon.detect(instruction)
        if len(endpoints) >= 2:
            sentences.append(
                f"{surface(endpoints[0])} and {surface(endpoints[1])} "
                "may be indirectly related."
            )
        for doc in docs:
            concepts = self.lexicon.detect(doc.text)
            for a, b in zip(concepts, concepts[1:]):
                sentences.append(f"{surface(a)} {self.verb} {surface(b)}.")
        text = " ".join(sentences)
        return Completion(
            text=text,
            prompt_tokens=count_tokens(request.prompt),
            completion_tokens=count_tokens(text),
        )


class ScriptedClient(LanguageModelClient):
    """Answers from a table keyed by the SHA-256 of the prompt."""

    name = "scripted"

    def __init__(self, responses: Dict[str, str], default: Optional[str] = None):
        self.responses = dict(responses)
        self.default = default

    @classmethod
    def from_fixture(cls, path) -> "ScriptedClient":
        """Fixture lines hold {prompt_sha256, text}; the hash "*" is the default."""
        responses = {r.prompt_sha256: r.text for r in read_records(path, ScriptedResponse)}
        default = responses.pop("*", None)
        return cls(responses, default)

    def complete(self, request: GenerationRequest) -> Completion:
        key = prompt_hash(request.prompt)
        text = self.responses.get(key, self.default)
        if text is None:
            raise ClientError(f"no scripted response for prompt {key[:12]}")
        return Completion(
            text=text,
            prompt_tokens=count_tokens(request.prompt),
            completion_tokens=count_tokens(text),
        )


def generate(
    client: LanguageModelClient,
    request: GenerationRequest,
    attempts: int = RETRY_ATTEMPTS,
    backoff: float = RETRY_BACKOFF,
    sleep: Callable[[float], None] = time.sleep,
) -> Generation:
    """
    Complete a request with bounded retries and exponential backoff.

    An empty completion is raised at once: the endpoint answered, asking
    again returns the same text.
    """
    error: Optional[ClientError] = None
    for attempt in range(1, attempts + 1):
        start = time.perf_counter()
        try:
            completion = client.complete(request)
        except EmptyCompletion:
            raise
        except ClientError as e:
            error = e
            logger.warning(f"{client.name} attempt {attempt}/{attempts} failed: {e}")
            if attempt < attempts:
                sleep(backoff * 2 ** (attempt - 1))
            continue

        if not completion.text.strip():
            raise EmptyCompletion(f"{client.name} returned an empty completion")
        if not completion.latency_ms:
            completion = replace(
                completion, latency_ms=(time.perf_counter() - start) * 1000
            )
        logger.debug(
            f"{client.name}: {completion.prompt_tokens} prompt tokens, "
            f"{completion.completion_tokens} completion tokens, "
            f"{completion.latency_ms:.1f} ms, attempt {attempt}"
        )
        return Generation(Explanation.from_text(completion.text), completion, attempt)
    raise error
