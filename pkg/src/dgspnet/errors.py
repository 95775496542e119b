"""Exception types raised across the package."""


class DGSPError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DGSPError, ValueError):
    pass


class InputShapeError(DGSPError, ValueError):
    pass


class StageIndexError(DGSPError, ValueError):
    pass


class PyramidShapeError(DGSPError, ValueError):
    pass


class PromptError(DGSPError, ValueError):
    pass


class EmptyPromptError(PromptError):
    pass


class UnsupportedVariantError(PromptError):
    pass


class PromptInjectionError(PromptError):
    pass


class TokenizationError(PromptError):
    pass


class LossShapeError(DGSPError, ValueError):
    pass


class EmptyBatchError(DGSPError, ValueError):
    pass


class DataError(DGSPError):
    pass


class IngestionError(DataError):
    pass


class CheckpointError(DGSPError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass
