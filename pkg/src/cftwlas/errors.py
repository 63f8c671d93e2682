"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid scenario, estimator, or campaign parameters."""


class GeometryError(ValueError):
    """A geometric configuration makes the requested computation undefined."""


class DegenerateGeometryError(GeometryError):
    """The linearized measurement system lost full column rank."""
