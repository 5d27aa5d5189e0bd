"""Custom exceptions for seed corpus generation."""


class SeedForgeError(Exception):
    """Base exception for all seed corpus generation errors."""
    pass


class ConfigError(SeedForgeError):
    """Raised when the pipeline configuration is invalid."""
    pass


class FileTypeSpecError(SeedForgeError, ValueError):
    """Raised when a file type spec violates its invariants."""
    pass


class SignatureTableError(SeedForgeError):
    """Raised when the bundled signature table is missing or malformed."""
    pass


class BudgetExhausted(SeedForgeError):
    """Raised when a module's wall-clock budget has run out."""
    pass


class OversizeResponse(SeedForgeError):
    """Raised when a download exceeds the maximum file size."""
    pass


class LlmClientError(SeedForgeError):
    """Raised when the language-model endpoint is unreachable or rejects the request."""
    pass


class MalformedResponse(SeedForgeError):
    """Raised when a language-model response cannot be parsed into queries."""
    pass


class RateLimited(SeedForgeError):
    """Raised when a search API keeps answering with rate-limit responses."""
    pass


class AuthError(SeedForgeError):
    """Raised when an API rejects the configured credentials."""
    pass


class CloneFailure(SeedForgeError):
    """Raised when a repository cannot be cloned (or exceeds the clone size cap)."""
    pass


class QuotaExceeded(SeedForgeError):
    """Raised when the search engine quota is used up."""
    pass


class TrackerError(SeedForgeError):
    """Raised when a bug tracker request fails."""
    pass


class IndexServiceError(SeedForgeError):
    """Raised when the crawl index service fails after retries."""
    pass


class CorruptRecord(SeedForgeError):
    """Raised when an archived record cannot be fetched or decoded."""
    pass


class TargetMissing(SeedForgeError):
    """Raised when the target program for crash filtering cannot be found."""
    pass


class MinimizerError(SeedForgeError):
    """Raised when corpus minimization fails."""
    pass


class StatsError(SeedForgeError):
    """Base exception for evaluation statistics errors."""
    pass


class DegenerateSample(StatsError):
    """Raised when every paired difference is zero."""
    pass


class InsufficientSamples(StatsError):
    """Raised when too few samples are given for an interval."""
    pass


class TrialSeriesError(StatsError):
    """Raised when a trial time series is not monotone or malformed."""
    pass
