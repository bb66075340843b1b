"""Shared exception types, mapped to CLI exit codes in cli.py."""


class ConfigError(ValueError):
    """Invalid configuration: bad counts, ranges, unknown keys, conflicts."""


class DataFormatError(ValueError):
    """Malformed input file. Carries location context when known."""

    def __init__(self, message, *, path=None, byte_offset=None, line=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if line is not None:
            loc.append(f"line {line}")
        if byte_offset is not None:
            loc.append(f"byte offset {byte_offset}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.path = path
        self.byte_offset = byte_offset
        self.line = line


class ShapeError(ValueError):
    """Tensor op called with incompatible shapes."""


class NumericError(ArithmeticError):
    """Numerical failure: NaN loss, zero degree, non-symmetric input, ..."""


class TrainingDiverged(NumericError):
    """Loss became non-finite during training."""

    def __init__(self, epoch, last_finite_loss):
        super().__init__(
            f"non-finite loss at epoch {epoch}; "
            f"last finite loss was {last_finite_loss!r}"
        )
        self.epoch = epoch
        self.last_finite_loss = last_finite_loss
