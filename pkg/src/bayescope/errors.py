"""Exception hierarchy shared by every bayescope module."""


class BayescopeError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class DimensionError(BayescopeError, ValueError):
    """Operand shapes are incompatible."""

    exit_code = 2


class NumericDomainError(BayescopeError, ArithmeticError):
    """An op was evaluated outside its domain (log of <= 0, division by 0, NaN)."""

    exit_code = 3


class ContractError(BayescopeError, RuntimeError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""

    exit_code = 2


class ConfigError(BayescopeError, ValueError):
    """Invalid configuration value."""

    exit_code = 2


class DivergedError(BayescopeError, RuntimeError):
    """Training produced a non-finite loss."""

    exit_code = 3

    def __init__(self, epoch: int, batch: int, detail: str = ""):
        self.epoch = epoch
        self.batch = batch
        msg = f"training diverged at epoch {epoch}, batch {batch}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
