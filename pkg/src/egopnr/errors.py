"""Exception types raised across the package."""


class EgoPNRError(Exception):
    """Base class for all package errors."""


class ManifestError(EgoPNRError, ValueError):
    """A manifest could not be parsed or failed validation."""


class FeatureFormatError(EgoPNRError, ValueError):
    """A feature file has a bad header, shape or payload."""


class ConfigError(EgoPNRError, ValueError):
    pass


class SamplingError(EgoPNRError, ValueError):
    pass


class ContractError(EgoPNRError, ValueError):
    """Shapes or inputs do not match what an operation requires."""


class NumericError(EgoPNRError, ArithmeticError):
    pass


class CheckpointError(EgoPNRError, ValueError):
    pass
