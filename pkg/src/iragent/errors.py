"""Exception hierarchy.

Every error raised by the library derives from :class:`IrAgentError`. The CLI
maps the three top-level families onto exit codes: user/config errors (1),
pipeline errors (2) and provider errors (3).
"""


class IrAgentError(Exception):
    """Base class for all library errors."""


class UserError(IrAgentError):
    """Bad input supplied by the caller (files, config, arguments)."""


class PipelineError(IrAgentError):
    """A numerical or protocol stage could not complete."""


# -- data ingestion -----------------------------------------------------------

class ParseError(UserError, ValueError):
    pass


class LengthMismatch(UserError, ValueError):
    pass


class MissingLabel(UserError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NonUniformGrid(PipelineError, ValueError):
    """Raised for non-monotone grids at load time, and for non-uniform grids
    when an operation needs a constant wavelength step."""


class TooFewSamples(PipelineError, ValueError):
    pass


class InsufficientReferenceSamples(PipelineError, ValueError):
    pass


# -- preprocessing --------------------------------------------------------------

class SingularSystem(PipelineError, ArithmeticError):
    pass


class WindowTooLarge(PipelineError, ValueError):
    pass


class ConstantSpectrum(PipelineError, ValueError):
    pass


class DegenerateRegression(PipelineError, ValueError):
    pass


class ChainError(PipelineError):
    """A step of a preprocessing chain failed; ``index`` is zero-based."""

    def __init__(self, index: int, kind: str, cause: Exception):
        self.index = index
        self.kind = kind
        self.cause = cause
        super().__init__(f"step {index} ({kind}) failed: {type(cause).__name__}: {cause}")


# -- features -------------------------------------------------------------------

class RankDeficientWarning(UserWarning):
    """Fewer components than requested could be extracted."""


class DimMismatch(PipelineError, ValueError):
    pass


class DegenerateResponse(PipelineError, ValueError):
    pass


class NonPositiveIntensity(PipelineError, ValueError):
    pass


class ConstantReference(PipelineError, ValueError):
    pass


class NegativeInput(PipelineError, ValueError):
    pass


# -- knowledge base ---------------------------------------------------------------

class EmptyCorpus(UserError, ValueError):
    pass


class NoResolvablePlan(PipelineError, ValueError):
    pass


# -- llm gateway ------------------------------------------------------------------

class LlmError(IrAgentError):
    """Provider-side failure."""


class LlmTimeout(LlmError):
    pass


class RateLimited(LlmError):
    pass


class TransportError(LlmError):
    """Connection-level failure; retried by the gateway."""


class ProviderError(LlmError):
    def __init__(self, status: int, body: str):
        self.status = status
        self.body = body
        super().__init__(f"provider returned HTTP {status}: {body[:200]}")


class BudgetExceeded(PipelineError):
    def __init__(self, estimated: int, budget: int):
        self.estimated = estimated
        self.budget = budget
        super().__init__(f"estimated {estimated} tokens exceeds budget of {budget}")


# -- response parsing / reasoning -----------------------------------------------

class UnparseableResponse(PipelineError, ValueError):
    pass


class UnknownTaskType(PipelineError, ValueError):
    pass


class MissingIds(UnparseableResponse):
    def __init__(self, ids):
        self.ids = list(ids)
        super().__init__(f"response is missing ids: {', '.join(self.ids)}")


class DuplicateIds(UnparseableResponse):
    def __init__(self, ids):
        self.ids = list(ids)
        super().__init__(f"response repeats ids: {', '.join(self.ids)}")


class UnexpectedIds(UnparseableResponse):
    def __init__(self, ids):
        self.ids = list(ids)
        super().__init__(f"response contains unknown ids: {', '.join(self.ids)}")


class IdMismatch(PipelineError, ValueError):
    pass


class SingleClass(PipelineError, ValueError):
    pass


class ConstantTruth(PipelineError, ValueError):
    pass


class SingularCovariance(PipelineError, ArithmeticError):
    pass


# -- cli ----------------------------------------------------------------------------

class ConfigError(UserError, ValueError):
    pass


class AbortedByUser(UserError):
    pass
