"""Exception types shared across the simulator."""


class ParameterError(ValueError):
    """An argument or configuration value violates its documented domain."""


class DegenerateSeriesError(ValueError):
    """The input series carries no usable fluctuation structure."""


class DegenerateReferenceError(ValueError):
    """A reference-server term in the load score is zero."""


class AssignmentRejectedError(RuntimeError):
    """Placing the request would exceed the server's RAM or link capacity."""


class ConsistencyError(RuntimeError):
    """Internal bookkeeping violated an invariant; indicates a simulator bug."""


class ScenarioError(ValueError):
    """A scenario or manifest file failed validation.

    ``problems`` lists (field_path, reason) pairs for every violation found.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        lines = [f"{path}: {reason}" for path, reason in self.problems]
        super().__init__("invalid scenario: " + "; ".join(lines))
