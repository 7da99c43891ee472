"""Exception types shared across the package."""


class DynstError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DynstError, ValueError):
    """Operands of a tensor op have incompatible shapes."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        pretty = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{op}: incompatible shapes {pretty}")


class DomainError(DynstError, ValueError):
    """An input value lies outside an op's mathematical domain."""


class ContractError(DynstError, ValueError):
    """A caller violated a documented precondition."""


class NonFiniteError(DynstError, FloatingPointError):
    """A forward op produced NaN or Inf, which is an error state."""


class ConfigError(DynstError, ValueError):
    """A configuration object violates one of its invariants."""


class DivergenceError(DynstError, RuntimeError):
    """Training produced a non-finite loss."""


class EstimationError(DynstError, ValueError):
    """An estimator received degenerate input (e.g. an empty treatment arm)."""
