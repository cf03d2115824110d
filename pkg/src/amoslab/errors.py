"""Exception types shared across the library."""


class ShapeError(ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or infinity; values never propagate silently."""


class ConfigError(ValueError):
    """A run or layer configuration is invalid or unresolvable."""


class CheckpointError(RuntimeError):
    """A checkpoint file is truncated, corrupt, or of an unsupported version."""


class DivergenceError(NonFiniteError):
    """Training produced a non-finite quantity.

    Carries the parameter name and step where divergence was detected, when
    known, so a failed run points at the offending variable.
    """

    def __init__(self, message: str, *, param: str | None = None, step: int | None = None):
        super().__init__(message)
        self.param = param
        self.step = step

    def __str__(self) -> str:
        base = super().__str__()
        extra = []
        if self.param is not None:
            extra.append(f"param={self.param}")
        if self.step is not None:
            extra.append(f"step={self.step}")
        if extra:
            return f"{base} ({', '.join(extra)})"
        return base
