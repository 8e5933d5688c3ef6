"""Exception types shared across the package.

The CLI maps these onto stable exit codes: decode/IO problems exit 2,
shape mismatches exit 3, numeric failures exit 4, and plain validation
errors (``ValueError``) exit 1.
"""


class ShapeMismatchError(ValueError):
    """Operands have incompatible dimensions or channel counts."""


class DecodeError(ValueError):
    """A file could not be decoded.

    ``offset`` is the byte position at which decoding failed, when it is
    known (None for failures that only surface after decompression).
    """

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        parts = [message]
        if offset is not None:
            parts.append(f"at byte offset {offset}")
        if path is not None:
            parts.append(f"in {path}")
        super().__init__(" ".join(parts))


class NumericError(ArithmeticError):
    """A computation produced or received non-finite values."""
