"""Exception hierarchy; the CLI maps each class to an exit code."""


class DPRiskError(Exception):
    exit_code = 1


class InputError(DPRiskError, ValueError):
    """Bad or inconsistent input data."""

    exit_code = 2


class SchemaError(InputError):
    """A CSV file is missing required columns or has the wrong header."""

    exit_code = 4


class NumericalError(DPRiskError, ArithmeticError):
    exit_code = 3


class RankDeficientError(NumericalError):
    def __init__(self, dependent_terms):
        self.dependent_terms = list(dependent_terms)
        super().__init__(
            "design matrix is rank deficient; linearly dependent columns: "
            + ", ".join(self.dependent_terms)
        )
