"""Exception types shared across the simulator."""


class FlyKitesError(Exception):
    """Base class for all simulator errors."""


class ScenarioError(FlyKitesError):
    """Scenario or map file is malformed or unusable."""


class MapInconsistencyError(FlyKitesError):
    """Two maps disagree on a cell (Free vs Occupied); signals a sensing bug."""


class UnreachableError(FlyKitesError):
    """No collision-free path exists between the requested endpoints."""


class InfeasibleTaskError(FlyKitesError):
    """An assistance task cannot be served with the available fleet."""


class ContractViolation(FlyKitesError):
    """A caller broke a documented precondition."""


class ConfigError(FlyKitesError):
    """Bad configuration value or unknown option."""
