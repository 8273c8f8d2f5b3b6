from .models import ErrorRecord


class HgcrError(Exception):
    """Base class of every error raised by the pipeline."""

    code = "hgcr_error"

    def to_record(self) -> ErrorRecord:
        return ErrorRecord(error=self.code, message=str(self))


class ConfigError(HgcrError):
    code = "config_error"


# graph


class InvalidDocument(HgcrError):
    code = "invalid_document"


class DuplicateDocument(HgcrError):
    code = "duplicate_document"


class FrozenGraph(HgcrError):
    code = "frozen_graph"


class NotFrozen(HgcrError):
    code = "not_frozen"


class UnknownConcept(HgcrError):
    code = "unknown_concept"


class NoSuchEdge(HgcrError):
    code = "no_such_edge"


# path generation


class NoFutureEvidence(HgcrError):
    code = "no_future_evidence"


class DirectEdgePresent(HgcrError):
    code = "direct_edge_present"


class Disconnected(HgcrError):
    code = "disconnected"


class EndpointMismatch(HgcrError):
    code = "endpoint_mismatch"


class EmptyPool(HgcrError):
    code = "empty_pool"


class CannotDiffer(HgcrError):
    code = "cannot_differ"


# embeddings


class DimMismatch(HgcrError):
    code = "dim_mismatch"


class DuplicateId(HgcrError):
    code = "duplicate_id"


class ParseError(HgcrError):
    code = "parse_error"


class ZeroVector(HgcrError):
    code = "zero_vector"


class UnknownId(HgcrError, KeyError):
    code = "unknown_id"

    def __str__(self):
        return Exception.__str__(self)


# ranker


class ShapeMismatch(HgcrError):
    code = "shape_mismatch"


class EmptyNegatives(HgcrError):
    code = "empty_negatives"


class EmptyDataset(HgcrError):
    code = "empty_dataset"


# metrics


class DegenerateLabels(HgcrError):
    code = "degenerate_labels"


class NoPositives(HgcrError):
    code = "no_positives"


class AllDegenerate(HgcrError):
    code = "all_degenerate"


# explanations


class NoContext(HgcrError):
    code = "no_context"


class ClientError(HgcrError):
    code = "client_error"


class ClientTimeout(ClientError):
    code = "client_timeout"


class EmptyCompletion(ClientError):
    """The endpoint answered with an empty text, retrying will not help."""

    code = "empty_completion"


class OracleFailure(HgcrError):
    code = "oracle_failure"


class ExhaustedCandidates(HgcrError):
    code = "exhausted_candidates"
