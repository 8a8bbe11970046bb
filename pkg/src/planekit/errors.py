class PlanekitError(Exception):
    """Base class for contract violations raised by planekit."""


class ShapeMismatchError(PlanekitError, ValueError):
    pass


class DegenerateInputError(PlanekitError, ValueError):
    """Too few points, colinear points, or no usable sample."""


class FormatError(PlanekitError, ValueError):
    """Malformed file.  ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class ValidationError(PlanekitError, ValueError):
    """Schema violation; ``field`` names the offending entry."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
