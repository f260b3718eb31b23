"""Exception types shared across the package."""


class ValidationError(ValueError):
    """An input violates a data contract (shape, range, finiteness)."""


class ShapeError(ValidationError):
    """Tensor shapes are incompatible for the requested operation."""
