"""Exception types shared across the package."""


class EvonavError(Exception):
    """Base class for domain errors."""


class InvalidParams(EvonavError, ValueError):
    pass


class PackingFailure(EvonavError):
    pass


class Disconnected(EvonavError):
    pass


class SpawnFailure(EvonavError):
    pass


class ConfigError(EvonavError, ValueError):
    pass


class NoPath(EvonavError):
    pass


class EmptyPlan(EvonavError):
    pass


class NoCandidates(EvonavError):
    pass


class EmptyTrace(EvonavError, ValueError):
    pass


class BudgetTooSmall(EvonavError, ValueError):
    pass


class MissingVariable(EvonavError, KeyError):
    pass


class NonFiniteParams(EvonavError, ValueError):
    pass


class Divergence(EvonavError, ArithmeticError):
    pass
