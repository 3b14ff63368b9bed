"""Static allocation LP for the 2x2 system: structure, modes, classification.

The allocation LP is

    minimize rho
    s.t.     sum_k xi[i,k] * mu[i,k] = lam[i]   (class i fully served)
             sum_i xi[i,k] <= rho               (server k capacity)
             xi >= 0

When mu has product form mu[i,k] = alpha[i]*beta[k] and the load is critical
(rho* = 1, equivalently sum_i lam[i]/alpha[i] = 1 after normalizing
beta[0]+beta[1] = 1), the optimal set is a segment between two extreme
allocations ("modes"), each leaving exactly one activity unused.  The
structure computed here drives everything downstream: workload control,
switching policies, and the experiment harness.

Indices are 0-based throughout (classes 0/1, servers 0/1).
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np

from .errors import (
    BoundaryCase,
    DegenerateMode,
    NotCriticallyLoaded,
    NotProductForm,
)
from .params import SystemParams

TOL = 1e-9

# Constraint rows for variables v = (xi00, xi01, xi10, xi11, rho):
# rows 0-1 equalities, 2-3 capacities (a.v <= 0), 4-7 nonnegativity (-v_j <= 0).
_CAPACITY_ROWS = np.array(
    [
        [1.0, 0.0, 1.0, 0.0, -1.0],
        [0.0, 1.0, 0.0, 1.0, -1.0],
    ]
)
_NONNEG_ROWS = -np.eye(4, 5)

# every way to pick 5 active constraints out of the 8
_ACTIVE_SETS = np.array(list(itertools.combinations(range(8), 5)))


@dataclass(frozen=True)
class ProductForm:
    """Factorization mu[i,k] = alpha[i]*beta[k], with beta[0]+beta[1] = 1."""

    alpha: np.ndarray
    beta: np.ndarray


@dataclass(frozen=True)
class Mode:
    """One extreme allocation.

    Exactly one entry of xi vanishes (the non-basic activity).  i1/k1 are the
    class and server with a single used activity, i2/k2 the dual-activity
    class and server; xi[i2, k1] == 1 always.
    """

    xi: np.ndarray
    nonbasic: tuple[int, int]
    i1: int
    i2: int
    k1: int
    k2: int


class Switching(enum.Enum):
    CLASS_SWITCHED = "class-switched"
    SERVER_SWITCHED = "server-switched"


@dataclass(frozen=True)
class LpStructure:
    """Full structural output of the allocation analysis."""

    rho_star: float
    product_form: ProductForm
    mode1: Mode
    mode2: Mode
    switching: Switching
    p: int  # high-priority class: h[p]*alpha[p] >= h[q]*alpha[q]
    q: int


def solve_lp_bruteforce(params: SystemParams, tol: float = TOL):
    """Solve the allocation LP by enumerating basic feasible points.

    All choices of 5 active constraints among the 8 are solved as 5x5 linear
    systems; feasible solutions are kept and the minimum rho taken.  Exact,
    solver-free, and small enough to serve as the oracle for every
    closed-form operation in this module.

    Returns (rho_star, vertices) where vertices is the list of distinct
    optimal 2x2 allocation matrices.
    """
    lam, mu = params.lam, params.mu
    scale = params.data_scale()
    ftol = tol * scale

    rows = np.vstack(
        [
            [mu[0, 0], mu[0, 1], 0.0, 0.0, 0.0],
            [0.0, 0.0, mu[1, 0], mu[1, 1], 0.0],
            _CAPACITY_ROWS,
            _NONNEG_ROWS,
        ]
    )
    rhs = np.array([lam[0], lam[1], 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])

    A = rows[_ACTIVE_SETS]  # (56, 5, 5)
    b = rhs[_ACTIVE_SETS]
    dets = np.linalg.det(A)
    solvable = np.abs(dets) > 1e-12 * scale**5
    v = np.full((len(A), 5), np.nan)
    if solvable.any():
        v[solvable] = np.linalg.solve(A[solvable], b[solvable][..., None])[..., 0]

    resid_eq = np.abs(v @ rows[:2].T - lam)  # (56, 2)
    slack = v @ rows[2:].T  # capacity + nonneg rows, must be <= 0
    feasible = (
        solvable
        & np.isfinite(v).all(axis=1)
        & (resid_eq <= ftol).all(axis=1)
        & (slack <= ftol).all(axis=1)
    )
    if not feasible.any():
        raise RuntimeError("allocation LP infeasible; positive data cannot do this")

    rho = v[feasible, 4]
    rho_star = float(rho.min())
    opt = v[feasible][rho <= rho_star + ftol, :4]

    vertices = []
    seen = set()
    for row in opt:
        key = tuple(np.round(row / scale, 9))
        if key not in seen:
            seen.add(key)
            vertices.append(row.reshape(2, 2).copy())
    return rho_star, vertices


def factor_product_form(mu: np.ndarray, tol: float = TOL) -> ProductForm:
    """Factor mu[i,k] = alpha[i]*beta[k] with beta summing to one.

    Raises NotProductForm when the rank-1 test |det mu| <= tol*||mu||^2
    fails; the LP then has a unique solution and the rest of the pipeline
    does not apply.
    """
    mu = np.asarray(mu, dtype=float)
    det = mu[0, 0] * mu[1, 1] - mu[0, 1] * mu[1, 0]
    if abs(det) > tol * float(np.sum(mu * mu)):
        raise NotProductForm(f"service rates are not rank one (det={det:.3g})")
    beta1 = mu[0, 0] / (mu[0, 0] + mu[0, 1])
    beta = np.array([beta1, 1.0 - beta1])  # sums to 1 exactly
    alpha = mu[:, 0] / beta1
    return ProductForm(alpha=alpha, beta=beta)


def check_ehtc(params: SystemParams, pf: ProductForm, tol: float = TOL) -> bool:
    """Critical-load test: sum_i lam[i]/alpha[i] == 1 within tolerance.

    Under product form this is equivalent to the LP optimum rho* being 1
    with a whole segment of optimal allocations.
    """
    return abs(float(np.sum(params.lam / pf.alpha)) - 1.0) <= tol


def check_nondegeneracy(params: SystemParams, tol: float = TOL) -> bool:
    """True iff lam[i] != mu[i,k] for all four pairs (tolerance-guarded)."""
    scale = params.data_scale()
    gaps = np.abs(params.lam[:, None] - params.mu)
    return bool(np.all(gaps > tol * scale))


def _snap01(x: float, tol: float) -> float:
    if abs(x) <= tol:
        return 0.0
    if abs(x - 1.0) <= tol:
        return 1.0
    if x < 0.0 or x > 1.0:
        raise ValueError(f"allocation entry {x} outside [0, 1]")
    return x


def _mode_from_x11(x11: float, lam1: float, alpha1: float, beta, tol: float) -> Mode:
    b1, b2 = beta
    x12 = lam1 / (alpha1 * b2) - (b1 / b2) * x11
    top = (_snap01(x11, tol), _snap01(x12, tol))
    xi = np.array([[top[0], top[1]], [1.0 - top[0], 1.0 - top[1]]])
    zeros = [(i, k) for i in range(2) for k in range(2) if xi[i, k] == 0.0]
    if len(zeros) != 1:
        raise DegenerateMode(
            f"extreme allocation has {len(zeros)} vanishing entries, expected 1"
        )
    ((i1, k1),) = zeros
    xi.flags.writeable = False
    return Mode(xi=xi, nonbasic=(i1, k1), i1=i1, i2=1 - i1, k1=k1, k2=1 - k1)


def compute_modes(params: SystemParams, pf: ProductForm, tol: float = TOL):
    """The two extreme optimal allocations, parameterized by xi[0,0].

    The optimal segment is a line in xi[0,0]; its endpoints are
    max(0, lam0/(alpha0*beta0) - beta1/beta0) and min(lam0/(alpha0*beta0), 1).
    Requires critical load and nondegeneracy; two vanishing entries in either
    endpoint raise DegenerateMode.
    """
    lam1, alpha1 = float(params.lam[0]), float(pf.alpha[0])
    b1, b2 = float(pf.beta[0]), float(pf.beta[1])
    r = lam1 / (alpha1 * b1)
    x_lo = max(0.0, r - b2 / b1)
    x_hi = min(r, 1.0)
    mode1 = _mode_from_x11(x_lo, lam1, alpha1, (b1, b2), tol)
    mode2 = _mode_from_x11(x_hi, lam1, alpha1, (b1, b2), tol)
    return mode1, mode2


def classify_switching(
    params: SystemParams, pf: ProductForm, tol: float = TOL
) -> Switching:
    """Class- vs server-switched pair, from max_i lam[i]/alpha[i] vs max_k beta[k].

    The two extreme modes always share either their non-basic row (the pair
    switches servers) or column (switches classes); equality of the two
    maxima is the excluded boundary and raises BoundaryCase.
    """
    r = float(np.max(params.lam / pf.alpha))
    s = float(np.max(pf.beta))
    if abs(r - s) <= tol:
        raise BoundaryCase(f"max lam/alpha == max beta == {s:.6g}")
    return Switching.SERVER_SWITCHED if r > s else Switching.CLASS_SWITCHED


def priority_classes(params: SystemParams, pf: ProductForm, tol: float = TOL):
    """(p, q) with h[p]*alpha[p] >= h[q]*alpha[q]; ties resolve to p=0."""
    a = params.h * pf.alpha
    if abs(a[0] - a[1]) <= tol * max(1.0, float(np.max(np.abs(a)))):
        return 0, 1
    return (0, 1) if a[0] > a[1] else (1, 0)


def canonical_relabeling(mode: Mode):
    """Permutations (class_perm, server_perm) making the first column (1, 0).

    perm[j] gives the original index placed at slot j; apply with
    xi[np.ix_(class_perm, server_perm)].  Unique for nondegenerate modes.
    """
    i0, k0 = mode.nonbasic
    class_perm = (1 - i0, i0)
    server_perm = (k0, 1 - k0)
    return class_perm, server_perm


def relabeled(mode: Mode) -> np.ndarray:
    """The mode's allocation matrix in canonical coordinates."""
    cp, sp = canonical_relabeling(mode)
    return mode.xi[np.ix_(cp, sp)]


def analyze_lp(params: SystemParams, tol: float = TOL) -> LpStructure:
    """Full structural analysis; the entry point used by the CLI.

    Raises NotProductForm, NotCriticallyLoaded, DegenerateMode or
    BoundaryCase when the input leaves the covered class.
    """
    pf = factor_product_form(params.mu, tol)
    if not check_ehtc(params, pf, tol):
        load = float(np.sum(params.lam / pf.alpha))
        raise NotCriticallyLoaded(f"sum lam/alpha = {load:.9f}, need 1")
    if not check_nondegeneracy(params, tol):
        raise DegenerateMode("lam[i] == mu[i,k] for some activity")
    switching = classify_switching(params, pf, tol)
    mode1, mode2 = compute_modes(params, pf, tol)

    same_row = mode1.nonbasic[0] == mode2.nonbasic[0]
    same_col = mode1.nonbasic[1] == mode2.nonbasic[1]
    geometric = Switching.SERVER_SWITCHED if same_row else Switching.CLASS_SWITCHED
    if same_row == same_col or geometric is not switching:
        raise RuntimeError(
            f"switching classification inconsistent: {switching} vs "
            f"nonbasic {mode1.nonbasic}/{mode2.nonbasic}"
        )

    p, q = priority_classes(params, pf, tol)
    return LpStructure(
        rho_star=1.0,
        product_form=pf,
        mode1=mode1,
        mode2=mode2,
        switching=switching,
        p=p,
        q=q,
    )
