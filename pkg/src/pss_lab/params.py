"""Problem data for the two-class, two-server system."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _as_vec2(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.shape != (2,):
        raise ValueError(f"{name} must have shape (2,), got {a.shape}")
    a.flags.writeable = False
    return a


def _as_mat22(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.shape != (2, 2):
        raise ValueError(f"{name} must have shape (2, 2), got {a.shape}")
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SystemParams:
    """Complete problem data.

    First-order rates (lam, mu) define the allocation LP.  The second-order
    perturbations (lam_hat, mu_hat) and the squared coefficients of variation
    enter only through the drift and diffusion coefficients of the workload
    limit and through the accelerated prelimit rates.  ``gamma`` discounts
    the holding cost, ``h`` holds the per-class cost weights.
    """

    lam: np.ndarray
    mu: np.ndarray
    lam_hat: np.ndarray = field(default=(0.0, 0.0))
    mu_hat: np.ndarray = field(default=((0.0, 0.0), (0.0, 0.0)))
    c2_arrival: np.ndarray = field(default=(1.0, 1.0))
    c2_service: np.ndarray = field(default=((1.0, 1.0), (1.0, 1.0)))
    gamma: float = 1.0
    h: np.ndarray = field(default=(1.0, 1.0))

    def __post_init__(self):
        obj = object.__setattr__
        obj(self, "lam", _as_vec2(self.lam, "lam"))
        obj(self, "mu", _as_mat22(self.mu, "mu"))
        obj(self, "lam_hat", _as_vec2(self.lam_hat, "lam_hat"))
        obj(self, "mu_hat", _as_mat22(self.mu_hat, "mu_hat"))
        obj(self, "c2_arrival", _as_vec2(self.c2_arrival, "c2_arrival"))
        obj(self, "c2_service", _as_mat22(self.c2_service, "c2_service"))
        obj(self, "gamma", float(self.gamma))
        obj(self, "h", _as_vec2(self.h, "h"))
        if not np.all(self.lam > 0):
            raise ValueError("lam entries must be > 0")
        if not np.all(self.mu > 0):
            raise ValueError("mu entries must be > 0")
        if not np.all(self.c2_arrival > 0):
            raise ValueError("c2_arrival entries must be > 0")
        if not np.all(self.c2_service > 0):
            raise ValueError("c2_service entries must be > 0")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if not np.all(self.h > 0):
            raise ValueError("h entries must be > 0")

    def data_scale(self) -> float:
        """Largest first-order magnitude; tolerances scale with this."""
        return max(1.0, float(self.lam.max()), float(self.mu.max()))
