"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand dimensions are inconsistent with an operation's contract."""


class ConfigError(ValueError):
    """A configuration value is out of range or otherwise unusable."""


class SplitError(ValueError):
    """A dataset cannot be split as requested."""


class FormatError(ValueError):
    """A file does not conform to its binary or text layout.

    `offset` is the byte position at which the file stopped making sense.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset
