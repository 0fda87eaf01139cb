"""Exception types shared across the package."""


class PlantSneError(Exception):
    """Base class for all errors raised by plantsne."""


class InputError(PlantSneError, ValueError):
    """A caller violated a precondition (empty input, shape mismatch, bad value)."""


class FormatError(InputError):
    """A point-cloud file could not be parsed."""


class ConfigError(InputError):
    """A configuration file or override is malformed or names unknown keys."""


class DegenerateGeometryError(PlantSneError, ValueError):
    """Geometry too degenerate to process (e.g. collinear points for a hull)."""


class NumericalError(PlantSneError, ArithmeticError):
    """A numerical routine under- or overflowed, or failed to converge."""


class TrainingError(PlantSneError, RuntimeError):
    """Classifier training is impossible on the given data."""


class GenerationError(PlantSneError, RuntimeError):
    """The synthetic plant generator could not satisfy the requested spec."""
