"""Exception types shared across the package."""


class StratnetError(Exception):
    """Base class for runtime failures raised by the toolkit."""


class ContractViolation(ValueError):
    """An argument falls outside the declared domain of an operation."""


class ConfigError(ValueError):
    """A model or run configuration is malformed."""


class NonConvergence(StratnetError):
    """No pairwise-stable network was found within the iteration budget."""


class NeighborhoodTooLarge(StratnetError):
    """Enumerating a strategic neighborhood would exceed the candidate cap."""


class TooLarge(StratnetError):
    """Brute-force enumeration was requested on too many nodes."""


class Separation(StratnetError):
    """The conditional likelihood is unbounded (perfect separation)."""


class Degenerate(StratnetError):
    """No informative observations, or the design is rank deficient."""


class ZeroDenominator(StratnetError):
    """A ratio estimator has no observations in its denominator."""


class InsufficientData(StratnetError):
    """Too few samples for the requested diagnostic."""


class QuadratureFailure(StratnetError):
    """A numerical integral did not converge."""


class SupercriticalSuspected(StratnetError):
    """Most branching replications hit the population cap."""


class TooFewNetworks(ValueError):
    """Inference across networks needs at least two of them."""
