"""Exception hierarchy shared by every module.

Errors carry enough structure (line/column, node path, offending name) for
callers to report precisely without string-parsing messages.
"""

from __future__ import annotations


class RewardForgeError(Exception):
    """Base class for every error raised by this package."""


# ---------------------------------------------------------------------------
# DSL


class DslError(RewardForgeError):
    pass


class LexError(DslError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class DslSyntaxError(DslError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class UnknownFeatureError(DslError):
    def __init__(self, name: str, line: int = 0, column: int = 0):
        super().__init__(f"unknown feature {name!r} (line {line}, column {column})")
        self.name = name
        self.line = line
        self.column = column


class UndeclaredHyperError(DslError):
    def __init__(self, name: str, term: str = ""):
        super().__init__(f"hyperparameter {name!r} referenced but not declared"
                         + (f" in term {term!r}" if term else ""))
        self.name = name
        self.term = term


class DuplicateTermError(DslError):
    def __init__(self, name: str):
        super().__init__(f"term {name!r} declared more than once")
        self.name = name


class MissingHyperError(DslError):
    def __init__(self, name: str, term: str = ""):
        super().__init__(f"no value supplied for hyperparameter {name!r}"
                         + (f" of term {term!r}" if term else ""))
        self.name = name
        self.term = term


class NumericalDomainError(DslError):
    """Raised instead of letting NaN or inf propagate out of evaluation."""

    def __init__(self, reason: str, node_path: str):
        super().__init__(f"{reason} at node {node_path}")
        self.reason = reason
        self.node_path = node_path


# ---------------------------------------------------------------------------
# similarity / embeddings


class DimensionMismatchError(RewardForgeError):
    pass


class ZeroVectorError(RewardForgeError):
    pass


# ---------------------------------------------------------------------------
# providers


class ProviderError(RewardForgeError):
    pass


class ProviderUnavailableError(ProviderError):
    pass


class GenerationError(ProviderError):
    pass


class DimensionDriftError(ProviderError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"embedding dimension drifted: expected {expected}, got {got}")
        self.expected = expected
        self.got = got


# ---------------------------------------------------------------------------
# component library


class StoreIOError(RewardForgeError):
    pass


# ---------------------------------------------------------------------------
# GP / Bayesian optimisation


class SingularKernelError(RewardForgeError):
    pass


class NonFiniteInputError(RewardForgeError):
    pass


class InsufficientBudgetError(RewardForgeError):
    pass


# ---------------------------------------------------------------------------
# environments


class NonFinitePolicyOutputError(RewardForgeError):
    pass


# ---------------------------------------------------------------------------
# pipeline


class ConfigError(RewardForgeError):
    pass


class PipelineError(RewardForgeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r} failed: {message}")
        self.stage = stage
