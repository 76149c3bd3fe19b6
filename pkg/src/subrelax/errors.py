"""Exception types shared across the toolkit."""


class SubrelaxError(Exception):
    """Base class for all toolkit errors."""


class ElementAlreadyPresent(SubrelaxError):
    """Marginal gain requested for an element already in the base set."""


class GroundSetTooLarge(SubrelaxError):
    """Exhaustive enumeration refused because the ground set exceeds the limit."""


class InfeasibleStart(SubrelaxError):
    """The empty set is infeasible, so no search can begin."""


class DegenerateGroup(SubrelaxError):
    """A candidate group has zero mass, so its weights are undefined."""


class DimensionMismatch(SubrelaxError):
    """Vector dimensions disagree."""


class ShapeError(SubrelaxError):
    """Input shape incompatible with the model configuration."""


class NonFiniteObjective(SubrelaxError):
    """Objective or gradient became non-finite; carries the trace so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class UnknownToken(SubrelaxError):
    """Token not present in the vocabulary."""


class UnembeddedToken(SubrelaxError):
    """Token id has no embedding vector."""


class DegenerateDataset(SubrelaxError):
    """Dataset unusable for training (for example, a single class)."""


class EmptyResults(SubrelaxError):
    """Metrics requested for an empty result list."""


class IoFailure(SubrelaxError):
    """A report or artifact file could not be written or read."""
