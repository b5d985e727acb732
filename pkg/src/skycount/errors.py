"""Exception hierarchy shared by every skycount module."""


class SkycountError(Exception):
    """Base class for all library errors."""


class ShapeError(SkycountError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class SpecError(SkycountError, ValueError):
    """Invalid layer geometry (kernel, stride, padding, window)."""


class ContractError(SkycountError, RuntimeError):
    """A caller broke a documented precondition."""


class NumericError(SkycountError, ArithmeticError):
    """NaN or Inf reached a place where only finite values are allowed."""


class GradCheckError(SkycountError, RuntimeError):
    """The function under gradient check is not deterministic."""


class ResourceError(SkycountError, MemoryError):
    """An intermediate would exceed the configured memory budget."""


class FormatError(SkycountError, ValueError):
    """A binary container is malformed.

    ``offset`` is the byte position where decoding failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ValidationError(SkycountError, ValueError):
    """Loaded data does not agree with the configuration it is used with."""


class BackboneImportError(SkycountError, ValueError):
    """A backbone container lacks tensors or has them in the wrong shape."""


class AnnotationError(SkycountError, ValueError):
    """An annotation is malformed or lies outside its image."""


class ParseError(SkycountError, ValueError):
    """A text record could not be parsed. Carries the 1-based line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(SkycountError, ValueError):
    """A run configuration file is invalid."""
