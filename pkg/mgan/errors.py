"""Exception taxonomy shared by the library and the CLI."""


class MganError(Exception):
    """Base class for every error raised by the mgan package."""


class ConfigurationError(MganError, ValueError):
    """Invalid settings, configs or inputs detected before any computation."""

    def __init__(self, message: str, errors: list[str] | None = None):
        super().__init__(message)
        self.errors = list(errors or [])

    @classmethod
    def from_errors(cls, context: str, errors: list[str]) -> 'ConfigurationError':
        joined = '; '.join(errors)
        return cls(f'{context}: {joined}', errors)


class ShapeError(MganError, ValueError):
    """Array dimensions disagree with the object they are applied to."""


class ContractError(MganError, ValueError):
    """A caller broke a documented precondition (sizes, pairing, output arity)."""


class DomainError(MganError, ValueError):
    """Arguments fall outside the mathematical domain of an operation."""


class NumericalError(MganError, ArithmeticError):
    """Non-finite values or a solver that failed to reach its tolerance."""

    def __init__(
        self,
        message: str,
        *,
        layer: int | None = None,
        epoch: int | None = None,
        step: int | None = None,
        residual: float | None = None,
    ):
        details = []
        if epoch is not None:
            details.append(f'epoch={epoch}')
        if step is not None:
            details.append(f'step={step}')
        if layer is not None:
            details.append(f'layer={layer}')
        if residual is not None:
            details.append(f'residual={residual:.3e}')
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)
        self.layer = layer
        self.epoch = epoch
        self.step = step
        self.residual = residual
