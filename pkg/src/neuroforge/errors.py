"""Exception hierarchy shared by every neuroforge module."""


class NeuroforgeError(Exception):
    """Base class for all library errors."""


class ShapeError(NeuroforgeError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ArchitectureError(NeuroforgeError, ValueError):
    """A block graph or network description violates its structural invariants."""


class GrowthRejected(ArchitectureError):
    """A growth procedure cannot be applied to the selected edge."""


class FormatError(NeuroforgeError, ValueError):
    """A file on disk does not follow the expected binary or JSON layout."""


class TrainingDiverged(NeuroforgeError, RuntimeError):
    """The training loss became non-finite."""


class SearchError(NeuroforgeError, RuntimeError):
    """A search loop cannot make progress with the given inputs."""
