"""Exception hierarchy. The CLI maps these onto exit codes."""


class ElastowaveError(Exception):
    pass


class ParameterError(ElastowaveError, ValueError):
    """Invalid user parameter or configuration."""


class MeshError(ElastowaveError):
    """Malformed or degenerate mesh."""


class GeometricConditionError(ElastowaveError):
    """The boundary cannot be split into an observed part and an acoustic part."""


class RegionOverlapError(ElastowaveError):
    """Damping collar reaches the acoustic boundary."""


class AssumptionError(ElastowaveError):
    """A coefficient floor (damping or boundary coefficients) is violated."""


class StateError(ElastowaveError):
    pass


class SolverError(ElastowaveError):
    """Factorization, linear solve or eigen-iteration failure."""


class AuditError(ElastowaveError):
    """An enabled invariant check fell outside its tolerance."""
