"""Exception types raised across the package."""


class PdmotorError(Exception):
    """Base class for structured errors raised by this package."""


class ShapeError(PdmotorError):
    """Tensor extents incompatible with the requested operation."""


class DegenerateBatchError(PdmotorError):
    """Batch statistics requested on a batch of size < 2."""


class InsufficientDataError(PdmotorError):
    """Not enough samples/windows/patients for the operation."""


class ArchitectureError(PdmotorError):
    """Network configuration does not produce the required feature-map shape."""


class NoEligibleModelsError(PdmotorError):
    """No ensemble member excludes the test patient; fold cannot be evaluated."""


class CorruptWeightFileError(PdmotorError):
    """Weight file failed checksum or structural validation."""
