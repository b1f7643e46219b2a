"""Exception hierarchy shared across the toolkit.

Every error raised on a documented contract boundary derives from
SampleProbeError so callers can catch the whole family at once.
"""


class SampleProbeError(Exception):
    """Base class for all toolkit errors."""


class LengthMismatchError(SampleProbeError):
    """Two aligned sequences (probs vs alphabet, p vs q) differ in length."""


class NotNormalizedError(SampleProbeError):
    """A probability vector does not sum to 1 within tolerance."""


class OutOfRangeError(SampleProbeError):
    """A probability or rate lies outside [0, 1]."""


class MissingDistributionError(SampleProbeError):
    """A prompt spec needs a distribution (or prompt body) it does not carry."""


class AllMissingError(SampleProbeError):
    """No alphabet token appears in a step's top-k entries; the restricted
    distribution is undefined for that step."""


class EmptyOutputError(SampleProbeError):
    """Generated text contained zero accepted alphabet labels."""


class EmptyStepsError(SampleProbeError):
    """A step-level aggregate was requested over zero sample steps."""


class EmptyListError(SampleProbeError):
    """A list-based metric was called with an empty list."""


class DegenerateVarianceError(SampleProbeError):
    """Pearson correlation is undefined: one of the series is constant."""


class PlanExhaustedError(SampleProbeError):
    """D-family generation stepped past the end of its fixed plan."""


class NetworkBackendError(SampleProbeError):
    """Transport-level HTTP failure after the retry budget was spent."""


class LogprobsUnavailableError(SampleProbeError):
    """The provider refused or omitted logprobs. Never retried."""


class StoreError(SampleProbeError):
    """Transcript store I/O failure or missing record."""


class SchemaVersionError(StoreError):
    """A stored record declares a schema version this build cannot read."""


class FormatError(SampleProbeError):
    """A structured input file is malformed; message carries the location."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class IncompleteGridError(SampleProbeError):
    """A layer dump is missing (layer, step) cells."""


class NonFiniteLogitError(SampleProbeError):
    """A layer dump contains NaN or infinite logits."""


class CorpusFormatError(SampleProbeError):
    """The first-token prompt corpus is empty or malformed."""


class InsufficientStepsError(SampleProbeError):
    """Quota analysis needs at least two consecutive sample steps."""


class AllTrialsFailedError(SampleProbeError):
    """Every trial in a cell failed; no aggregate can be computed."""


class ConfigError(SampleProbeError):
    """The experiment config file is invalid."""
