"""Mean-one renewal primitive families with configurable variability.

Every family is parameterized so that the mean is exactly 1; the squared
coefficient of variation (SCV) is then the single shape knob.  Draws are
divided by the accelerated rate downstream, so these are the "check"
variates of the primitive streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Exponential:
    @property
    def c2(self) -> float:
        return 1.0

    @property
    def moment_bound(self) -> float:
        return math.inf

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.exponential(1.0, size)


@dataclass(frozen=True)
class ErlangK:
    """Sum of k exponential phases, rescaled to mean 1; SCV = 1/k."""

    k: int

    def __post_init__(self):
        if not (isinstance(self.k, int) and self.k >= 1):
            raise ValueError("k must be an integer >= 1")

    @property
    def c2(self) -> float:
        return 1.0 / self.k

    @property
    def moment_bound(self) -> float:
        return math.inf

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.gamma(self.k, 1.0 / self.k, size)


@dataclass(frozen=True)
class Hyperexp2Balanced:
    """Two-phase hyperexponential with balanced means; SCV = c2 >= 1.

    Phase probabilities p_i = (1 +- eta)/2 with eta = sqrt((c2-1)/(c2+1))
    and rates 2 p_i, which gives each phase the same contribution p_i/rate_i
    = 1/2 to the mean.
    """

    c2_value: float

    def __post_init__(self):
        if not (math.isfinite(self.c2_value) and self.c2_value >= 1.0):
            raise ValueError("balanced two-phase mixture needs c2 >= 1")

    @property
    def c2(self) -> float:
        return self.c2_value

    @property
    def moment_bound(self) -> float:
        return math.inf

    @property
    def phases(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """((p1, rate1), (p2, rate2))."""
        eta = math.sqrt((self.c2_value - 1.0) / (self.c2_value + 1.0))
        p1 = (1.0 + eta) / 2.0
        p2 = 1.0 - p1
        return (p1, 2.0 * p1), (p2, 2.0 * p2)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        (p1, r1), (_, r2) = self.phases
        u = rng.random(size)
        e = rng.exponential(1.0, size)
        return e / np.where(u < p1, r1, r2)


@dataclass(frozen=True)
class Lognormal:
    """Lognormal with mean 1; SCV = c2 > 0."""

    c2_value: float

    def __post_init__(self):
        if not (math.isfinite(self.c2_value) and self.c2_value > 0.0):
            raise ValueError("c2 must be > 0")

    @property
    def c2(self) -> float:
        return self.c2_value

    @property
    def moment_bound(self) -> float:
        return math.inf

    @property
    def log_params(self) -> tuple[float, float]:
        """(mu, sigma) of the underlying normal."""
        s2 = math.log1p(self.c2_value)
        return -0.5 * s2, math.sqrt(s2)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        mu, sigma = self.log_params
        return rng.lognormal(mu, sigma, size)


@dataclass(frozen=True)
class Pareto:
    """Pareto with mean 1; moments of order >= shape are infinite.

    Scale x_m = (shape-1)/shape; SCV = 1/(shape (shape-2)), so shape > 2 is
    required for a finite SCV.
    """

    shape: float

    def __post_init__(self):
        if not (math.isfinite(self.shape) and self.shape > 2.0):
            raise ValueError("shape must be > 2 for a finite second moment")

    @property
    def c2(self) -> float:
        return 1.0 / (self.shape * (self.shape - 2.0))

    @property
    def moment_bound(self) -> float:
        return self.shape

    @property
    def scale(self) -> float:
        return (self.shape - 1.0) / self.shape

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        # numpy's pareto draws X/x_m - 1 (Lomax)
        return self.scale * (rng.pareto(self.shape, size) + 1.0)


DistributionSpec = Exponential | ErlangK | Hyperexp2Balanced | Lognormal | Pareto

# JSON family tag -> (constructor, parameter keys)
FAMILIES = {
    "exponential": (Exponential, ()),
    "erlang": (ErlangK, ("k",)),
    "hyperexp2_balanced": (Hyperexp2Balanced, ("c2",)),
    "lognormal": (Lognormal, ("c2",)),
    "pareto": (Pareto, ("shape",)),
}
