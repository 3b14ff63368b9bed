"""Typed failure modes shared across the package.

Structural errors (NotProductForm, BoundaryCase, DegenerateMode) mean the
input system falls outside the class this laboratory covers; callers are
expected to report and stop rather than guess.
"""


class PssLabError(Exception):
    """Base class for every package-specific error."""


class NotProductForm(PssLabError):
    """Service rates do not factor as mu[i, k] = alpha[i] * beta[k]."""


class NotCriticallyLoaded(PssLabError):
    """sum_i lam[i] / alpha[i] != 1: no multiplicity of optimal allocations."""


class BoundaryCase(PssLabError):
    """max_i lam[i]/alpha[i] == max_k beta[k]: switching type undefined."""


class DegenerateMode(PssLabError):
    """An extreme allocation has two vanishing entries; labels undefined."""


class NoBracket(PssLabError):
    """Sign-change bracket for the switching point was not found."""


class NonpositiveRate(PssLabError):
    """A second-order perturbation drove an accelerated rate to <= 0."""


class TailBoundExceeded(PssLabError):
    """Truncation tail of a discounted-cost estimate exceeds its budget."""


class PolicyCaseMismatch(PssLabError):
    """Requested policy does not match the one prescribed for this system."""


class ReplayMismatch(PssLabError):
    """Log-replay recomputation disagrees with a streaming statistic."""


class ConfigError(PssLabError):
    """Invalid configuration; ``path`` locates the offending key."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")
