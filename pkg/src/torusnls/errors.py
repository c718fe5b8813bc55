"""Exception types shared across the package.

Exit-code mapping used by the CLI: ParameterError -> 2,
BudgetExceededError -> 3, IntegrationBlowupError -> 4.
"""


class ParameterError(ValueError):
    """Invalid configuration or argument (admissibility violation, bad dimension, ...)."""


class BudgetExceededError(RuntimeError):
    """A constrained enumeration would visit more tuples than the allowed budget."""

    def __init__(self, needed, budget):
        super().__init__(f"enumeration budget exceeded: needs ~{needed:.3g} visits, budget {budget:.3g}")
        self.needed = needed
        self.budget = budget


class IntegrationBlowupError(RuntimeError):
    """Time integration produced a non-finite state."""

    def __init__(self, time, message="non-finite state during time integration"):
        super().__init__(f"{message} at t={time}")
        self.time = time
