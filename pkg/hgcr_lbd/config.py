import hashlib
import os
from dataclasses import dataclass
from dataclasses import field
from dataclasses import fields
from dataclasses import replace
from pathlib import Path
from typing import Dict
from typing import List
from typing import Optional

from .exceptions import ConfigError
from .models import ExplainMode
from .models import PromptTemplate

ENV_PREFIX = "HGCR_"
LLM_ENDPOINT_ENV = "HGCR_LLM_ENDPOINT"

# context sizes swept by the ablation harness
ABLATION_K_GRID = (1, 3, 5, 7, 9, 11)

# sampled prompt-only generations are repeated and averaged
PROMPT_REPEATS = 3

DEFAULT_VERBS = (
    "inhibits",
    "activates",
    "affects",
    "increases",
    "decreases",
    "reduces",
    "causes",
    "treats",
    "prevents",
    "regulates",
    "interacts with",
    "is associated with",
)


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "."
    corpus: Optional[str] = None
    graph: Optional[str] = None
    dataset: Optional[str] = None
    checkpoint: Optional[str] = None
    traces: Optional[str] = None
    concept_embeddings: Optional[str] = None
    context_embeddings: Optional[str] = None
    llm_endpoint: Optional[str] = None
    llm_fixture: Optional[str] = None
    split_year: Optional[int] = None
    dataset_mode: str = "training"
    # ranker
    d_model: int = 32
    heads: int = 2
    d_n: int = 32
    d_p: int = 32
    margin: float = 0.3
    lr: float = 0.05
    epochs: int = 200
    # dataset caps per node length
    neg_len3: int = 100
    neg_len4: int = 100
    max_nodes: int = 4
    # explanations
    k: int = 7
    max_iter: int = 5
    top_paths: int = 3
    per_class: int = 3
    n_comparison: int = 100
    top_frac: float = 0.10
    mode: ExplainMode = ExplainMode.FEEDBACK
    template: PromptTemplate = PromptTemplate.SHORT
    max_tokens: int = 1000
    temperature: float = 1e-19
    top_p: float = 1e-9
    repeats: Optional[int] = None
    verbs: List[str] = field(default_factory=lambda: list(DEFAULT_VERBS))
    workers: int = 1

    def __post_init__(self):
        positives = (
            "d_model",
            "heads",
            "d_n",
            "d_p",
            "margin",
            "lr",
            "epochs",
            "neg_len3",
            "neg_len4",
            "k",
            "max_iter",
            "top_paths",
            "per_class",
            "n_comparison",
            "max_tokens",
            "workers",
        )
        for name in positives:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.repeats is not None and self.repeats <= 0:
            raise ConfigError(f"repeats must be positive, got {self.repeats}")
        if not 0 < self.top_frac < 1:
            raise ConfigError(f"top_frac must be in (0, 1), got {self.top_frac}")
        if self.max_nodes not in (3, 4):
            raise ConfigError(f"max_nodes must be 3 or 4, got {self.max_nodes}")
        if self.dataset_mode not in ("training", "test"):
            raise ConfigError("dataset_mode must be training or test")

    @property
    def caps(self) -> Dict[int, int]:
        return {3: self.neg_len3, 4: self.neg_len4}

    def repeats_for(self, mode: ExplainMode) -> int:
        if self.repeats is not None:
            return self.repeats
        return PROMPT_REPEATS if ExplainMode(mode) is ExplainMode.PROMPT else 1

    @property
    def out_path(self) -> Path:
        return Path(self.out_dir)

    def sub_seed(self, name: str, *parts) -> int:
        return sub_seed(self.seed, name, *parts)

    def merged(self, **overrides) -> "RunConfig":
        """New config with the non-None overrides applied."""
        values = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **values) if values else self

    @classmethod
    def load(
        cls,
        path: Optional[str] = None,
        environ: Optional[Dict[str, str]] = None,
        **overrides,
    ) -> "RunConfig":
        """Defaults, then the key=value file, then HGCR_* variables, then
        explicit overrides."""
        values: Dict[str, str] = {}
        if path:
            values.update(parse_config_file(path))
        values.update(read_environment(os.environ if environ is None else environ))
        kwargs = {name: coerce(name, raw) for name, raw in values.items()}
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kwargs)


def sub_seed(seed: int, name: str, *parts) -> int:
    """Stable 63 bit seed derived from the run seed and a component name."""
    key = "|".join([str(seed), name] + [str(p) for p in parts])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def _field_types() -> Dict[str, type]:
    return {f.name: f.type for f in fields(RunConfig)}


def parse_config_file(path: str) -> Dict[str, str]:
    known = _field_types()
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = raw
    return values


def read_environment(environ) -> Dict[str, str]:
    known = _field_types()
    values = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX) :].lower()
        if name in known:
            values[name] = raw
    return values


def coerce(name: str, raw: str):
    kind = _field_types()[name]
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is ExplainMode:
            return ExplainMode(raw)
        if kind is PromptTemplate:
            return PromptTemplate(raw)
        if kind == List[str]:
            return [v.strip() for v in raw.split(",") if v.strip()]
        if kind == Optional[int]:
            return int(raw) if raw else None
        if kind == Optional[str]:
            return raw or None
    except ValueError as e:
        raise ConfigError(f"invalid value for {name}: {raw!r}") from e
    return raw
