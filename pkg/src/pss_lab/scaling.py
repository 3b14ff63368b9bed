"""Threshold scaling for the prelimit systems.

The queue-length thresholds grow like n^a_bar with a_bar strictly inside an
interval whose lower end depends on the assumed finite moment order m of
the primitives.  The interval shrinks discontinuously at m0 = (5+sqrt(17))/2,
where the binding constraint changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

M0 = (5.0 + math.sqrt(17.0)) / 2.0


def zeta_bar(m: float) -> float:
    if not m > 2.0:
        raise ValueError("moment order m must be > 2")
    if m <= M0:
        return (m - 2.0) / (4.0 * m)
    return (m * m - 5.0 * m + 2.0) / (2.0 * m * (3.0 * m - 2.0))


def a_bar_interval(m: float) -> tuple[float, float]:
    """Open interval of admissible threshold exponents for moment order m."""
    return 0.5 - zeta_bar(m), 0.5


def default_a_bar(m: float) -> float:
    """Midpoint of the admissible interval: equal margin on both constraints."""
    lo, hi = a_bar_interval(m)
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class ScalingPolicy:
    """Scale parameter n with the threshold exponent setup.

    theta_n = ceil(n^a_bar) is the raw threshold, theta_hat its diffusion
    scaling.  a_bar defaults to the interval midpoint for the given m.
    """

    n: int
    m_moment: float = 3.0
    a_bar: float | None = None

    def __post_init__(self):
        if not (isinstance(self.n, int) and self.n >= 1):
            raise ValueError("n must be an integer >= 1")
        lo, hi = a_bar_interval(self.m_moment)
        if self.a_bar is None:
            object.__setattr__(self, "a_bar", 0.5 * (lo + hi))
        if not (lo < self.a_bar < hi):
            raise ValueError(
                f"a_bar={self.a_bar} outside the open interval ({lo}, {hi}) for m={self.m_moment}"
            )

    @property
    def theta_n(self) -> int:
        return math.ceil(self.n**self.a_bar)

    @property
    def theta_hat(self) -> float:
        return self.theta_n / math.sqrt(self.n)
