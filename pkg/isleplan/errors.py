"""Exception hierarchy shared by every isleplan stage"""


class IslandingError(Exception):
    """Base error for islanding computations; the message is user facing"""
    pass


class CaseError(IslandingError):
    pass


class MeasurementError(IslandingError):
    pass


class LayerError(IslandingError):
    pass


class SpectralError(IslandingError):
    pass


class ManifoldError(IslandingError):
    pass


class HierarchyError(IslandingError):
    """Malformed dendrogram or plan file"""
    pass


class QualityError(IslandingError):
    pass


class SimulationError(IslandingError):
    pass


class ConfigError(IslandingError):
    pass


class InfeasibleRequest(IslandingError):
    """Requested island count cannot be produced (CLI exit code 2)"""
    pass
