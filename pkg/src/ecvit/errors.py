"""Exception types shared across the package."""


class EcvitError(Exception):
    """Base class for all package errors."""


class ShapeError(EcvitError):
    """Operand shapes are incompatible for the requested operation."""


class DivisibilityError(EcvitError):
    """A length must be divisible by a block/kernel size and is not."""


class ContractError(EcvitError):
    """An operation precondition was violated."""


class ConfigError(EcvitError):
    """A model configuration is invalid; carries every violation found."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class DataFormatError(EcvitError):
    """A dataset file does not match the expected binary layout."""


class CheckpointError(EcvitError):
    """Base class for checkpoint serialization errors."""


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointNameMismatchError(CheckpointError):
    pass


class CheckpointFormatError(CheckpointError):
    """Malformed record inside an otherwise readable checkpoint."""


class TrainingDivergedError(EcvitError):
    """Loss became non-finite; carries the offending global step index."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite loss at global step {step}")
