import re
from dataclasses import dataclass
from dataclasses import field
from typing import List
from typing import Sequence
from typing import Tuple

from ..exceptions import NoContext
from ..models import DocRecord
from ..models import PromptTemplate
from ..reports import render

SHORT_TEMPLATE = (
    "Based on the following scientific abstracts, please describe how an "
    "indirect relationship between {SOURCE} and {TARGET} might exist."
)

BASELINE_TEMPLATE = (
    "Based on the following scientific abstracts, please describe how an "
    "indirect relationship between {SOURCE} and {TARGET} might exist. "
    "Consider the key findings, underlying mechanisms, and any intermediate "
    "entities or processes mentioned in the abstracts. Your explanation should "
    "connect these elements to form a coherent narrative that illustrates the "
    "possible indirect linkage between {source} and {target}."
)

# no retrieved abstracts are attached in prompt-only runs
BARE_TEMPLATE = (
    "Please describe how an indirect relationship between {SOURCE} and "
    "{TARGET} might exist."
)

INSTRUCTIONS = {
    PromptTemplate.SHORT: SHORT_TEMPLATE,
    PromptTemplate.BASELINE: BASELINE_TEMPLATE,
}

ABSTRACT_BLOCK = re.compile(
    r"^Abstract \d+ \((?P<doc_id>[^)\n]*)\):\n(?P<text>[^\n]*)$", re.MULTILINE
)


@dataclass
class ContextDoc:
    doc_id: str
    text: str


@dataclass
class Prompt:
    source: str
    target: str
    template: PromptTemplate
    context_docs: List[ContextDoc] = field(default_factory=list)
    rendered: str = ""

    @property
    def doc_ids(self) -> List[str]:
        return [d.doc_id for d in self.context_docs]


def fill_slots(template: str, source: str, target: str) -> str:
    """Literal substitution of both the upper and lower case slots."""
    return (
        template.replace("{SOURCE}", source)
        .replace("{TARGET}", target)
        .replace("{source}", source)
        .replace("{target}", target)
    )


def abstract_text(doc: DocRecord) -> str:
    if doc.text:
        return " ".join(doc.text.split())
    return "Concepts: " + ", ".join(doc.concepts) + "."


def build_prompt(
    source: str,
    target: str,
    contexts: Sequence[ContextDoc],
    template: PromptTemplate = PromptTemplate.SHORT,
) -> Prompt:
    if not contexts:
        raise NoContext(f"no context document for {source} - {target}")
    template = PromptTemplate(template)
    docs = [ContextDoc(c.doc_id, " ".join(c.text.split())) for c in contexts]
    instruction = fill_slots(INSTRUCTIONS[template], source, target)
    rendered = render("prompt.jinja2", instruction=instruction, docs=docs)
    return Prompt(source, target, template, docs, rendered.rstrip("\n"))


def build_bare_prompt(source: str, target: str) -> Prompt:
    rendered = fill_slots(BARE_TEMPLATE, source, target)
    return Prompt(source, target, PromptTemplate.SHORT, [], rendered)


def parse_prompt(rendered: str) -> Tuple[str, List[ContextDoc]]:
    """Instruction line and attached abstracts of a rendered prompt."""
    instruction = rendered.split("\n", 1)[0]
    docs = [
        ContextDoc(m.group("doc_id"), m.group("text"))
        for m in ABSTRACT_BLOCK.finditer(rendered)
    ]
    return instruction, docs
