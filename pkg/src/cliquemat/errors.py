"""Exception hierarchy shared across the package."""


class CliquematError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(CliquematError, ValueError):
    """Operands have incompatible lengths or shapes."""


class InvalidWitnessError(CliquematError, ValueError):
    """A witness index is out of range or duplicated."""


class InvalidMatrixError(CliquematError, ValueError):
    """A weight matrix violates symmetry / diagonal / sign requirements."""


class InvalidPlanError(CliquematError, ValueError):
    """Traversal, costs and clique size do not form a consistent plan."""


class MalformedSketchError(CliquematError, ValueError):
    """A sketch set is missing scales or has inconsistent widths."""


class CapacityError(CliquematError, ValueError):
    """A message payload exceeds the per-message bit budget."""


class PairConflictError(CliquematError, RuntimeError):
    """Two messages buffered for the same ordered node pair in one round."""


class PreconditionError(CliquematError, ValueError):
    """A routing batch violates the per-node send/receive bounds."""


class SchedulingError(CliquematError, RuntimeError):
    """A load-balancing rule exceeded its budget (planner bug guard)."""


class IsolationError(CliquematError, RuntimeError):
    """A node accessed another node's private storage."""


class MaxRoundsError(CliquematError, RuntimeError):
    """A protocol exceeded the configured round limit without finishing."""
