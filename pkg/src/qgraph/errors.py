"""Exception hierarchy shared by all modules."""


class QGraphError(Exception):
    """Base class for domain errors (mapped to CLI exit code 1)."""


class ParameterError(QGraphError, ValueError):
    pass


class GraphParseError(QGraphError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        loc = "" if line is None else f"line {line}" + ("" if column is None else f", column {column}") + ": "
        super().__init__(f"graph_model: {loc}{message}")


class GraphSemanticError(QGraphError):
    pass


class DiscretizationError(QGraphError):
    """Incompatible grids, or a grid too coarse for the requested operation."""


class ResolutionError(DiscretizationError):
    pass


class RangeError(QGraphError):
    """Evaluation would overflow."""


class CommensurabilityError(QGraphError):
    pass


class NearSingularError(QGraphError):
    def __init__(self, z, absdet, message=None):
        self.z = z
        self.absdet = absdet
        super().__init__(message or f"scattering: D(z) near-singular at z={z!r}, |d(z)|={absdet:.3e}")


class DomainError(QGraphError):
    pass


class PoleError(QGraphError):
    pass


class ConvergenceError(QGraphError):
    pass


class TruncationError(QGraphError):
    pass


class GeometryError(QGraphError):
    pass


class ConditioningError(QGraphError):
    pass


class PreconditionError(QGraphError):
    pass


class UnsupportedConfigurationError(QGraphError):
    pass
