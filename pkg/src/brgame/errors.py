"""Exception types shared across the package."""


class ContractError(ValueError):
    """Inputs violate a dimensional or structural precondition."""


class DomainError(ValueError):
    """An argument lies outside the domain of a mathematical map."""


class SingularityError(ArithmeticError):
    """The Frenet transformation is singular (1 - kappa * t <= 0)."""


class SamplingError(RuntimeError):
    """Rejection sampling exhausted its draw budget."""


class ConfigError(ValueError):
    """Invalid run configuration or missing artifact."""


class TrainingError(RuntimeError):
    """Surrogate training diverged."""
