"""Exception hierarchy shared by all wotkit modules."""


class WotkitError(Exception):
    """Base class for every error raised by wotkit."""


class DimensionError(WotkitError, ValueError):
    """Operation called on measures of an unsupported dimension."""


class DomainError(WotkitError, ValueError):
    """Argument outside the domain of a closed-form expression."""


class ZeroMassRow(WotkitError, ValueError):
    """Disintegration requested for a row carrying no mass."""


class MarginalMismatch(WotkitError, ValueError):
    """Coupling marginals disagree with the declared measures."""


class ShapeError(WotkitError, ValueError):
    """Inconsistent array shapes between problem components."""


class OverflowFlag(WotkitError, ArithmeticError):
    """Gibbs exponent too large to exponentiate safely."""


class StepTooLarge(WotkitError, RuntimeError):
    """The dual objective decreased across an outer iteration."""


class NotConverged(WotkitError, RuntimeError):
    """Iteration cap reached before the stopping criteria were met."""


class Diverged(WotkitError, RuntimeError):
    """Dual objective kept decreasing at the smallest admissible step."""


class Infeasible(WotkitError, ValueError):
    """Linear program has no feasible point."""


class SizeLimit(WotkitError, ValueError):
    """Instance exceeds the exact oracle's size cap."""


# The irreducibility probe surfaces the oracle cap under its own name.
OracleSizeLimit = SizeLimit


class IllConditioned(WotkitError, ValueError):
    """Regression design too narrow to separate intercept and slope."""


class ConfigError(WotkitError, ValueError):
    """Invalid experiment or problem configuration."""
