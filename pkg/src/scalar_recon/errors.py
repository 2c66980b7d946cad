"""Exception hierarchy shared by every module."""


class ReconError(Exception):
    """Base class for runtime/data errors raised by this package."""


class InvalidParameterError(ReconError, ValueError):
    pass


class EmptyInputError(ReconError, ValueError):
    pass


class DomainError(ReconError, ValueError):
    pass


class InsufficientSampleError(ReconError, ValueError):
    pass


class InsufficientVariationError(ReconError, ValueError):
    pass


class InsufficientDataError(ReconError, ValueError):
    pass


class DegenerateCodewordError(ReconError, ValueError):
    pass


class ConditionNotMetError(ReconError, ValueError):
    pass


class ConfigError(Exception):
    """Configuration could not be parsed or validated.

    ``violations`` holds every problem found, not just the first one.
    """

    def __init__(self, violations, kind="validation"):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        self.kind = kind
        super().__init__("; ".join(self.violations))


class InvalidInputError(ReconError, ValueError):
    pass
