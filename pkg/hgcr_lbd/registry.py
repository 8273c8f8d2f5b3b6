from typing import Callable
from typing import Dict
from typing import List
from typing import Optional

from .exceptions import ConfigError


class Registry:
    """Named factories for one kind of pluggable component."""

    def __init__(self, kind: str):
        self.kind = kind
        self._factories: Dict[str, Callable] = {}

    def register(self, name: str, factory: Optional[Callable] = None):
        """Register a factory, or decorate one when factory is omitted."""

        def add(fn: Callable) -> Callable:
            self._factories[name] = fn
            return fn

        return add(factory) if factory is not None else add

    def __contains__(self, name: str) -> bool:
        return name in self._factories

    def names(self) -> List[str]:
        return sorted(self._factories)

    def create(self, name: str, **kwargs):
        try:
            factory = self._factories[name]
        except KeyError:
            raise ConfigError(
                f"unknown {self.kind} {name!r}, known: {', '.join(self.names())}"
            )
        return factory(**kwargs)


clients = Registry("language model client")
extractors = Registry("predicate extractor")
oracles = Registry("plausibility oracle")
