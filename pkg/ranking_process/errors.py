"""
Exception hierarchy shared by the analytic engine, the simulator and the CLI.
"""


class RankingProcessError(Exception):
    """Base class for all errors raised by the package."""


class DomainError(RankingProcessError, ValueError):
    """An argument lies outside the domain of the requested operation."""


class DivergenceError(RankingProcessError, ArithmeticError):
    """A quantity requiring a finite mean jump rate was asked of an infinite-mean law."""


class BracketError(RankingProcessError, ValueError):
    """Root-finding endpoints do not bracket a sign change."""


class QuadratureError(RankingProcessError, ArithmeticError):
    """Adaptive quadrature met a NaN integrand or did not reach its tolerance."""


class SaturationError(RankingProcessError, ArithmeticError):
    """Bracket growth for an inverse function reached its cap."""


class ConfigError(RankingProcessError, ValueError):
    """The experiment configuration is invalid."""
