"""Exception hierarchy shared by the pricing, simulation and CLI layers."""


class DomainError(ValueError):
    """Invalid model input: bad band, negative time, out-of-grid query."""


class SolverError(RuntimeError):
    """Numerical failure inside a PDE solve (stability, non-convergence)."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class PayoffSyntaxError(ValueError):
    def __init__(self, message, position):
        super().__init__(f"{message} at position {position}")
        self.position = position


class PayoffEvaluationError(ArithmeticError):
    def __init__(self, message, node):
        super().__init__(f"{message} in {node}")
        self.node = node


class UnsupportedPayoffError(ValueError):
    """Payoff uses fixings in a way the augmented-state chain cannot represent."""
