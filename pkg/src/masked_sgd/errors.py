"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class DegenerateMaskError(ContractError):
    """A mask zeroes out the entire quantity it is applied to."""


class DegenerateGradientError(ContractError):
    """A gradient norm required to be positive is zero."""


class TrainingAborted(NumericError):
    """A run hit a numeric error; carries the partial trajectory."""

    def __init__(self, message, trajectory, node=None):
        super().__init__(message, node=node)
        self.trajectory = trajectory


class ConfigError(ContractError):
    """An experiment config is missing or malformed; carries the field path."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
