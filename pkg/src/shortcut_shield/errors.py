class ShieldError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(ShieldError, ValueError):
    pass


class ParameterError(ShieldError, ValueError):
    pass


class FormatError(ShieldError, ValueError):
    pass


class ConfigError(ShieldError, ValueError):
    pass
