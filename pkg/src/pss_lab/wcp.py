"""Workload control problem: coefficients, case classification, closed forms.

Sending all work through the allocation segment collapses the control problem
to one dimension: a reflected diffusion on [0, inf) whose drift b(xi) and
variance sigma(xi)^2 are affine in the allocation xi, minimizing discounted
expected workload.  Only the two extreme allocations ("modes") matter.  Two
regimes arise:

* single mode: one mode has both the smaller drift and the smaller variance;
  using it everywhere is optimal and the value function is explicit.
* dual mode: one mode (the "low" one) has the larger drift but the smaller
  variance; the other ("high") has the smaller drift and larger variance.
  The optimal policy uses the low mode on [0, z*] and the high mode above,
  where the switching point z* makes the value function C^2 (smooth fit).

The dual-case cost of an arbitrary switching point z is assembled from the
two-region ODE solution

    gamma J = b J' + (sigma^2/2) J'' + x,   J'(0) = 0,  linear growth,

with C^1 pasting at z; eliminating the linear system by hand gives the
overflow-safe expressions below (every exponential has a nonpositive
argument).  The switching-point equation is the jump of J'' at z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import NoBracket
from .lp import LpStructure, ProductForm, compute_modes
from .params import SystemParams

# near-ties in (b, sigma) collapse to the single-mode case; below this
# relative gap the dual-case machinery is numerically meaningless anyway
TIE_TOL = 1e-10


@dataclass(frozen=True)
class WcpCoefficients:
    """Per-mode drift and diffusivity of the workload limit.

    b[m] and sigma[m] belong to the m-th extreme allocation (same order as
    LpStructure.mode1/mode2).  sigma_A and sigma_S are the primitive
    scattering coefficients sqrt(rate) * coefficient-of-variation.
    """

    b: np.ndarray
    sigma: np.ndarray
    sigma_A: np.ndarray
    sigma_S: np.ndarray
    gamma: float


@dataclass(frozen=True)
class Single:
    """One mode dominates: b and sigma both no larger than the other's."""

    active: int


@dataclass(frozen=True)
class Dual:
    """Genuine tradeoff: low = larger-drift/smaller-sigma mode (used near 0),
    high = smaller-drift/larger-sigma mode (used above the switching point)."""

    low: int
    high: int


ModeCase = Union[Single, Dual]


@dataclass(frozen=True)
class HjbClosedForm:
    """Exponents and switching point of the dual-case value function.

    beta_r, nu_r are the roots for the low region, rho_r for the high
    region, all under the internal normalization (larger drift first).
    v0 is the value at zero scaled by the caller-supplied weight.
    """

    beta_r: float
    rho_r: float
    nu_r: float
    zstar: float
    v0: float


@dataclass(frozen=True)
class SymmetryReport:
    """Which structural symmetry conditions hold and what they force."""

    sy1: bool  # service perturbations proportional across classes
    sy2: bool  # service perturbations proportional across servers
    sy3: bool  # service variation coefficients equal across servers
    drift_gap: float
    sigma_gap: float
    case: ModeCase


def drift_diffusion(params: SystemParams, pf: ProductForm, xi) -> tuple[float, float]:
    """Drift b(xi) and variance sigma(xi)^2 of the workload diffusion.

    b(xi) = sum_i (lam_hat[i] - sum_k mu_hat[i,k] xi[i,k]) / alpha[i]
    sigma(xi)^2 = sum_i (sigma_A[i]^2 + sum_k sigma_S[i,k]^2 xi[i,k]) / alpha[i]^2

    Both are affine in xi, so values on the mode segment interpolate the
    endpoint values linearly.
    """
    xi = np.asarray(xi, dtype=float)
    a = pf.alpha
    b = float(np.sum((params.lam_hat - np.sum(params.mu_hat * xi, axis=1)) / a))
    s_a2 = params.lam * params.c2_arrival
    s_s2 = params.mu * params.c2_service
    sigma2 = float(np.sum((s_a2 + np.sum(s_s2 * xi, axis=1)) / a**2))
    return b, sigma2


def wcp_coefficients(params: SystemParams, lp: LpStructure) -> WcpCoefficients:
    """Evaluate the drift/variance pair at both extreme allocations."""
    pf = lp.product_form
    b1, s1 = drift_diffusion(params, pf, lp.mode1.xi)
    b2, s2 = drift_diffusion(params, pf, lp.mode2.xi)
    return WcpCoefficients(
        b=np.array([b1, b2]),
        sigma=np.sqrt([s1, s2]),
        sigma_A=np.sqrt(params.lam * params.c2_arrival),
        sigma_S=np.sqrt(params.mu * params.c2_service),
        gamma=params.gamma,
    )


def classify_mode_case(coeffs: WcpCoefficients) -> ModeCase:
    """Single vs dual mode; ties (within TIE_TOL relative) count as single."""
    b1, b2 = float(coeffs.b[0]), float(coeffs.b[1])
    s1, s2 = float(coeffs.sigma[0]), float(coeffs.sigma[1])
    b_tied = abs(b1 - b2) <= TIE_TOL * max(1.0, abs(b1), abs(b2))
    s_tied = abs(s1 - s2) <= TIE_TOL * max(1.0, s1, s2)
    if b_tied and s_tied:
        return Single(active=0)
    if b_tied:
        return Single(active=0 if s1 < s2 else 1)
    if s_tied:
        return Single(active=0 if b1 < b2 else 1)
    if (b1 < b2) == (s1 < s2):
        return Single(active=0 if b1 < b2 else 1)
    low = 0 if b1 > b2 else 1  # larger drift, smaller sigma
    return Dual(low=low, high=1 - low)


def _normalized(coeffs: WcpCoefficients):
    """(b1, s1sq, b2, s2sq) with b1 >= b2, sigma breaking drift ties."""
    b = coeffs.b
    s = coeffs.sigma
    if (b[0], s[0]) >= (b[1], s[1]):
        first = 0
    else:
        first = 1
    return (
        float(b[first]),
        float(s[first]) ** 2,
        float(b[1 - first]),
        float(s[1 - first]) ** 2,
    )


def _exponents(b1, s1sq, b2, s2sq, gamma):
    d1 = math.sqrt(b1 * b1 + 2.0 * gamma * s1sq)
    d2 = math.sqrt(b2 * b2 + 2.0 * gamma * s2sq)
    beta = (b1 + d1) / s1sq
    nu = (b1 - d1) / s1sq
    rho = (b2 + d2) / s2sq
    return beta, nu, rho


def value_single(x, coeffs: WcpCoefficients):
    """Value function when a single mode is used everywhere.

    With (b, sigma) the coefficients of the smaller-drift mode (index 2 in
    the internal normalization) and rho_r its decaying exponent,

        u(x) = x/gamma + b/gamma^2 + exp(-rho_r x)/(gamma rho_r).

    u'(0) = 0 and u grows linearly.  Accepts scalar or array x >= 0.
    """
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0):
        raise ValueError("workload x must be >= 0")
    b1, s1sq, b2, s2sq = _normalized(coeffs)
    g = coeffs.gamma
    _, _, rho = _exponents(b1, s1sq, b2, s2sq, g)
    u = x_arr / g + b2 / g**2 + np.exp(-rho * x_arr) / (g * rho)
    return float(u) if np.isscalar(x) or x_arr.ndim == 0 else u


def _dual_value(x_arr: np.ndarray, z: float, b1, s1sq, b2, s2sq, g):
    """Two-region cost; x_arr (any shape) is split by the threshold z."""
    beta, nu, rho = _exponents(b1, s1sq, b2, s2sq, g)
    w = math.exp((nu - beta) * z)
    ebz = math.exp(-beta * z)
    N = rho * beta * (b2 - b1) / g**2 - (rho - beta) * ebz / g
    Dt = beta * (rho - nu) - nu * (rho - beta) * w
    c = N / Dt

    out = np.empty_like(x_arr)
    lo = x_arr <= z
    if lo.any():
        xl = x_arr[lo]
        out[lo] = (
            xl / g
            + b1 / g**2
            + c * np.exp(nu * (z - xl))
            + (np.exp(-beta * xl) / g - nu * c * np.exp(nu * z - beta * xl)) / beta
        )
    hi = ~lo
    if hi.any():
        xh = x_arr[hi]
        bracket = nu * c + ebz / g - nu * c * w
        out[hi] = xh / g + b2 / g**2 + np.exp(-rho * (xh - z)) * bracket / rho
    return out


def cost_dual(x, z: float, coeffs: WcpCoefficients):
    """Cost J(x; z) of switching modes at threshold z in the dual case.

    The low mode (larger drift, smaller sigma after normalization) runs on
    [0, z], the high mode above.  Both branches are continuous and C^1 at z
    by construction; z = z* additionally makes J'' continuous.  Accepts
    scalar or array x >= 0.
    """
    if not z > 0:
        raise ValueError("threshold z must be > 0")
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0):
        raise ValueError("workload x must be >= 0")
    b1, s1sq, b2, s2sq = _normalized(coeffs)
    out = _dual_value(np.atleast_1d(x_arr), z, b1, s1sq, b2, s2sq, coeffs.gamma)
    return float(out[0]) if np.isscalar(x) or x_arr.ndim == 0 else out.reshape(x_arr.shape)


def _jump(z, b1, s1sq, b2, s2sq, g):
    """J''(z-) - J''(z+): the smooth-fit residual whose root is z*."""
    beta, nu, rho = _exponents(b1, s1sq, b2, s2sq, g)
    w = math.exp((nu - beta) * z)
    ebz = math.exp(-beta * z)
    N = rho * beta * (b2 - b1) / g**2 - (rho - beta) * ebz / g
    Dt = beta * (rho - nu) - nu * (rho - beta) * w
    phi = nu * N * ((nu - rho) - (beta - rho) * w) + (beta - rho) * ebz * Dt / g
    return phi / Dt


def switching_equation(z: float, coeffs: WcpCoefficients) -> float:
    """Residual of the smooth-fit condition at threshold z (see _jump)."""
    b1, s1sq, b2, s2sq = _normalized(coeffs)
    return _jump(z, b1, s1sq, b2, s2sq, coeffs.gamma)


def _solve_root(b1, s1sq, b2, s2sq, g):
    lo, hi = 1e-6, 1.0
    flo = _jump(lo, b1, s1sq, b2, s2sq, g)
    fhi = _jump(hi, b1, s1sq, b2, s2sq, g)
    while flo * fhi > 0.0:
        if hi >= 1e6:
            raise NoBracket(
                f"no sign change of the switching equation in [1e-6, {hi:g}]"
            )
        hi *= 4.0
        fhi = _jump(hi, b1, s1sq, b2, s2sq, g)
    # unique root; 200 halvings take the interval far below fp resolution
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        fmid = _jump(mid, b1, s1sq, b2, s2sq, g)
        if fmid == 0.0:
            return mid
        if flo * fmid < 0.0:
            hi = mid
        else:
            lo, flo = mid, fmid
    return 0.5 * (lo + hi)


def solve_zstar(coeffs: WcpCoefficients, hq_alpha_q: float = 1.0) -> HjbClosedForm:
    """Switching point z* and value data for the dual case.

    Bracketing starts at [1e-6, 1] and expands geometrically; bisection is
    safe because the smooth-fit equation has a single sign change.  When the
    drift gap equals gamma to within 1e-8 the problem is solved with
    (b, sigma) doubled and the root halved (the closed form scales exactly;
    this sidesteps any conditioning worry on that hairline).

    v0 is hq_alpha_q * J(0; z*); pass the priority weight h[q]*alpha[q] to
    get the workload-control lower bound, or leave 1.0 for the bare value.
    """
    case = classify_mode_case(coeffs)
    if not isinstance(case, Dual):
        raise ValueError("switching point is defined only for dual-mode systems")
    b1, s1sq, b2, s2sq = _normalized(coeffs)
    g = coeffs.gamma
    if abs((b1 - b2) - g) < 1e-8:
        zstar = _solve_root(2.0 * b1, 4.0 * s1sq, 2.0 * b2, 4.0 * s2sq, g) / 2.0
    else:
        zstar = _solve_root(b1, s1sq, b2, s2sq, g)
    beta, nu, rho = _exponents(b1, s1sq, b2, s2sq, g)
    value0 = float(_dual_value(np.array([0.0]), zstar, b1, s1sq, b2, s2sq, g)[0])
    return HjbClosedForm(
        beta_r=beta, rho_r=rho, nu_r=nu, zstar=zstar, v0=hq_alpha_q * value0
    )


def value_wcp(x, coeffs: WcpCoefficients):
    """Optimal value: single-mode closed form, or dual form at z*."""
    case = classify_mode_case(coeffs)
    if isinstance(case, Single):
        return value_single(x, coeffs)
    return cost_dual(x, solve_zstar(coeffs).zstar, coeffs)


def v0(params: SystemParams, lp: LpStructure, coeffs: WcpCoefficients) -> float:
    """Lower-bound constant: h[q] * alpha[q] * value at zero workload."""
    weight = float(params.h[lp.q] * lp.product_form.alpha[lp.q])
    return weight * float(value_wcp(0.0, coeffs))


@dataclass(frozen=True)
class WcpSolution:
    """Bundled answer: coefficients, case, closed-form data, weighted v0."""

    coeffs: WcpCoefficients
    case: ModeCase
    hjb: HjbClosedForm | None
    v0: float

    @property
    def zstar(self) -> float | None:
        return None if self.hjb is None else self.hjb.zstar

    def value(self, x):
        if isinstance(self.case, Single):
            return value_single(x, self.coeffs)
        return cost_dual(x, self.hjb.zstar, self.coeffs)


def solve_wcp(params: SystemParams, lp: LpStructure) -> WcpSolution:
    """Classify and solve the workload control problem for one system."""
    coeffs = wcp_coefficients(params, lp)
    case = classify_mode_case(coeffs)
    weight = float(params.h[lp.q] * lp.product_form.alpha[lp.q])
    if isinstance(case, Dual):
        hjb = solve_zstar(coeffs, hq_alpha_q=weight)
        return WcpSolution(coeffs=coeffs, case=case, hjb=hjb, v0=hjb.v0)
    val0 = float(value_single(0.0, coeffs))
    return WcpSolution(coeffs=coeffs, case=case, hjb=None, v0=weight * val0)


def symmetry_check(params: SystemParams, pf: ProductForm) -> SymmetryReport:
    """Detect structural symmetries that force the single-mode case.

    sy1: mu_hat rows proportional to alpha (drift contribution of every
         allocation identical across modes);
    sy2: mu_hat columns proportional to beta;
    sy3: service variation coefficients equal across servers (variance
         contribution collapses through the LP equality constraints).
    sy1 or sy2 force equal drifts; sy3 forces equal sigmas.
    """
    m1, m2 = compute_modes(params, pf)
    d1, v1 = drift_diffusion(params, pf, m1.xi)
    d2, v2 = drift_diffusion(params, pf, m2.xi)
    coeffs = WcpCoefficients(
        b=np.array([d1, d2]),
        sigma=np.sqrt([v1, v2]),
        sigma_A=np.sqrt(params.lam * params.c2_arrival),
        sigma_S=np.sqrt(params.mu * params.c2_service),
        gamma=params.gamma,
    )

    mh, a, be = params.mu_hat, pf.alpha, pf.beta
    scale = max(1.0, float(np.max(np.abs(mh))))
    sy1 = bool(np.all(np.abs(mh[0] / a[0] - mh[1] / a[1]) <= 1e-12 * scale))
    sy2 = bool(np.all(np.abs(mh[:, 0] / be[0] - mh[:, 1] / be[1]) <= 1e-12 * scale))
    c2s = params.c2_service
    sy3 = bool(np.all(np.abs(c2s[:, 0] - c2s[:, 1]) <= 1e-12 * np.max(c2s)))

    return SymmetryReport(
        sy1=sy1,
        sy2=sy2,
        sy3=sy3,
        drift_gap=float(abs(coeffs.b[0] - coeffs.b[1])),
        sigma_gap=float(abs(coeffs.sigma[0] - coeffs.sigma[1])),
        case=classify_mode_case(coeffs),
    )
