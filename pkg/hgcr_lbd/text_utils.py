from typing import Dict
from typing import Iterable
from typing import List
from typing import Optional
from typing import Tuple

from nltk.tokenize import RegexpTokenizer
from nltk.tokenize import wordpunct_tokenize

# sentence terminator followed by whitespace
SENTENCE_TOKENIZER = RegexpTokenizer(r"(?<=[.!?])\s+", gaps=True)
WORD_TOKENIZER = RegexpTokenizer(r"[\w\-/]+")


def split_sentences(text: str) -> List[str]:
    return SENTENCE_TOKENIZER.tokenize(text.strip())


def count_tokens(text: str) -> int:
    """Rough token count used for the cost report of mock clients."""
    return len(wordpunct_tokenize(text))


def normalize(surface: str) -> Tuple[str, ...]:
    return tuple(w.lower() for w in WORD_TOKENIZER.tokenize(surface))


class ConceptLexicon:
    """
    Surface strings mapped to concept ids.

    Detection is greedy longest match over lower-cased word tokens and
    returns concept ids in order of first mention.
    """

    def __init__(self, surfaces: Optional[Dict[str, str]] = None):
        self._entries: Dict[Tuple[str, ...], str] = {}
        self._surface: Dict[str, str] = {}
        self.max_words = 1
        for surface, concept in (surfaces or {}).items():
            self.add(surface, concept)

    @classmethod
    def from_concepts(cls, concepts: Iterable[str]) -> "ConceptLexicon":
        """Identity lexicon: every concept id is its own surface form."""
        return cls({c: c for c in concepts})

    def add(self, surface: str, concept: str):
        key = normalize(surface)
        if not key:
            return
        self._entries[key] = concept
        self._surface.setdefault(concept, surface)
        self.max_words = max(self.max_words, len(key))

    def __contains__(self, concept: str) -> bool:
        return concept in self._surface

    def __len__(self) -> int:
        return len(self._entries)

    def surface(self, concept: str) -> str:
        return self._surface.get(concept, concept)

    def detect(self, text: str) -> List[str]:
        words = [w.lower() for w in WORD_TOKENIZER.tokenize(text)]
        found: List[str] = []
        i = 0
        while i < len(words):
            for size in range(min(self.max_words, len(words) - i), 0, -1):
                concept = self._entries.get(tuple(words[i : i + size]))
                if concept is not None:
                    if concept not in found:
                        found.append(concept)
                    i += size
                    break
            else:
                i += 1
        return found

    def find_verb(self, text: str, verbs: Iterable[str]) -> Optional[str]:
        """First listed verb phrase occurring in the text, longest first."""
        words = " ".join(w.lower() for w in WORD_TOKENIZER.tokenize(text))
        padded = f" {words} "
        for verb in sorted(verbs, key=lambda v: (-len(v), v)):
            if f" {' '.join(normalize(verb))} " in padded:
                return verb
        return None

