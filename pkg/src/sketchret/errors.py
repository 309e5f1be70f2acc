"""Exception types shared across the package.

Validation problems (bad shapes, bad configs, bad files) derive from
ValueError; numerical failures (singular systems, divergence) derive from
ArithmeticError.  The CLI maps the two families to exit codes 1 and 2.
"""


class DimensionError(ValueError):
    """Operand shapes are inconsistent with the operation."""


class SymmetryError(ValueError):
    """A matrix required to be symmetric is not."""


class CardinalityError(ValueError):
    """Too few items for the requested operation (e.g. k-means with n < k)."""


class DegenerateInputError(ValueError):
    """Input is degenerate for the operation (e.g. zero-norm vector)."""


class ConfigurationError(ValueError):
    """A run configuration or dataset precondition is violated."""


class ConstraintError(ValueError):
    """A value constraint is violated (e.g. hash codes not in {-1, +1})."""


class FormatError(ValueError):
    """A file does not conform to its on-disk format."""


class ChecksumError(FormatError):
    """A file payload fails its checksum."""


class CheckpointKindError(FormatError):
    """A checkpoint holds a different model kind than requested."""


class DataConsistencyError(ValueError):
    """Rows, labels or dimensions of a dataset disagree."""


class SingularityError(ArithmeticError):
    """A linear system or spectral pencil is singular."""


class ConvergenceError(ArithmeticError):
    """An iterative routine failed to converge within its iteration cap."""


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss."""
