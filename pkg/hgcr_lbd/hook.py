"""
Register the built-in clients, extractors and oracles, then the ones
other packages declare under the ``hgcr_lbd.plugins`` entry point group.
A plugin module registers its components on import, the way this module
does.
"""
from importlib import metadata

from .embed import EmbeddingTable
from .expl.clients import ContextEchoClient
from .expl.clients import RemoteClient
from .expl.clients import ScriptedClient
from .expl.validation import ConstantOracle
from .expl.validation import EmbeddingOracle
from .expl.validation import LexiconExtractor
from .logger import logger
from .registry import clients
from .registry import extractors
from .registry import oracles
from .text_utils import ConceptLexicon

PLUGIN_GROUP = "hgcr_lbd.plugins"


@clients.register("echo")
def echo_client(lexicon: ConceptLexicon, **_options):
    return ContextEchoClient(lexicon)


@clients.register("scripted")
def scripted_client(fixture: str, **_options):
    return ScriptedClient.from_fixture(fixture)


@clients.register("remote")
def remote_client(endpoint: str, **_options):
    return RemoteClient(endpoint)


@extractors.register("lexicon")
def lexicon_extractor(verbs, **_options):
    return LexiconExtractor(verbs)


@oracles.register("embedding")
def embedding_oracle(concept_table: EmbeddingTable, **_options):
    return EmbeddingOracle(concept_table)


@oracles.register("constant")
def constant_oracle(**_options):
    return ConstantOracle()


def _entry_points():
    eps = metadata.entry_points()
    if hasattr(eps, "select"):
        return list(eps.select(group=PLUGIN_GROUP))
    return list(eps.get(PLUGIN_GROUP, []))


_loaded = False


def load_plugins():
    global _loaded
    if _loaded:
        return
    _loaded = True
    for entry_point in _entry_points():
        try:
            entry_point.load()
        except Exception as e:
            logger.warning(f"plugin {entry_point.name} failed to load: {e}")
        else:
            logger.debug(f"plugin {entry_point.name} loaded")
