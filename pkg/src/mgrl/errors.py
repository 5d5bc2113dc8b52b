class NonFiniteError(ArithmeticError):
    """A primitive produced NaN/Inf, or non-finite values reached an optimizer."""


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested primitive."""
