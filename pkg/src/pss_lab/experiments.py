"""Convergence experiments along an n-ladder, with independent verification.

An experiment fixes a system, derives the prescribed policy from the mode
case, and simulates the n-th system at increasing n with common random
numbers across rungs (streams are keyed by replication, not by n).  Per
rung it reports the discounted-cost estimate against the diffusion value
at zero, the state-space-collapse excursion frequency, the scaled
band-idleness integral, mode fidelity, extreme primitive durations, and a
two-sample Kolmogorov-Smirnov distance between the scaled workload
snapshot and the limiting diffusion (diagnostic only; it carries
discretization and finite-n bias, so it is reported, not gated).

Every streaming statistic the engine produces can be recomputed here by a
linear scan of the raw event log (`replay_statistics`); the scan mirrors
the engine's accumulation order so agreement is exact, not approximate.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .des import PolicySpec, RunConfig, TrajectoryRecord, run, select_policy
from .diffusion import DiffusionSpec, Rbm, Switched, terminal_samples
from .distributions import ErlangK, Exponential, Hyperexp2Balanced, Lognormal
from .errors import ConfigError, PolicyCaseMismatch, ReplayMismatch, TailBoundExceeded
from .lp import LpStructure, analyze_lp, factor_product_form
from .params import SystemParams
from .scaling import ScalingPolicy
from .wcp import Dual, Single, WcpSolution, solve_wcp

__all__ = [
    "LadderConfig",
    "LevelResult",
    "ConvergenceReport",
    "ao_experiment",
    "default_distributions",
    "ks_statistic",
    "mode_fidelity",
    "rbar_statistic",
    "replay_statistics",
    "ssc_statistic",
    "verify_replay",
    "worker_count",
]


def worker_count() -> int:
    """Worker cap from the HTS_THREADS environment variable (default 1)."""
    raw = os.environ.get("HTS_THREADS")
    if raw is None or raw.strip() == "":
        return 1
    try:
        v = int(raw)
    except ValueError:
        raise ConfigError("HTS_THREADS", f"expected an integer, got {raw!r}") from None
    return max(1, v)


def _pmap(fn, items):
    items = list(items)
    workers = worker_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def ssc_statistic(records, scaling: ScalingPolicy, p: int) -> tuple[float, float]:
    """Fraction of replications whose priority-class count ever reached
    twice the threshold, with its binomial standard error.

    The comparison sup X_p >= 2 theta_n is exact integer arithmetic; the
    scaled form sup X̂_p >= 2 thetâ_n is the same event.
    """
    records = list(records)
    if not records:
        raise ValueError("need at least one record")
    if p not in (0, 1):
        raise ValueError("p must be 0 or 1")
    thr = 2 * scaling.theta_n
    hits = 0
    for r in records:
        if r.config.scaling.theta_n != scaling.theta_n:
            raise ValueError("records were run under a different threshold")
        if r.sup_X[p] >= thr:
            hits += 1
    m = len(records)
    frac = hits / m
    se = math.sqrt(frac * (1.0 - frac) / m)
    return frac, se


def rbar_statistic(record: TrajectoryRecord, lp: LpStructure) -> float:
    """Scaled idleness accumulated while the workload sat above the
    reneging band: sqrt(n) integral of beta_k over idle servers.

    The raw integral is exact (event-time increments, no discretization),
    so this is just the diffusion scaling applied once.
    """
    pf = factor_product_form(record.config.params.mu)
    if not np.allclose(pf.beta, lp.product_form.beta, rtol=0, atol=1e-12):
        raise ValueError("lp does not describe the record's system")
    return math.sqrt(record.config.n) * record.rbar_raw


def mode_fidelity(
    record: TrajectoryRecord,
    lp: LpStructure,
    wcp: WcpSolution,
    eps: float | None = None,
) -> tuple[float, float]:
    """Time the wrong-mode nonbasic activity was busy outside the eps-band.

    Returns (low, high): low is the busyness of the low mode's nonbasic
    activity while the unscaled workload was at or below (z*-eps) sqrt(n),
    high the analogue above (z*+eps) sqrt(n).  Asymptotic fidelity means
    both vanish relative to the horizon.  Only defined for dual-mode
    policies; single-mode records have no nonbasic excursions to measure.
    """
    pol = record.config.policy
    if not pol.dual:
        raise ValueError("mode fidelity is defined only for dual-mode policies")
    if not isinstance(wcp.case, Dual) or wcp.hjb is None:
        raise ValueError("wcp solution is single-mode; it cannot band a dual policy")
    if not math.isclose(wcp.hjb.zstar, pol.zstar, rel_tol=1e-9, abs_tol=0.0):
        raise ValueError(
            f"switching point mismatch: policy z*={pol.zstar}, wcp z*={wcp.hjb.zstar}"
        )
    pair = {pol.mode_low.nonbasic, pol.mode_high.nonbasic}
    if pair != {lp.mode1.nonbasic, lp.mode2.nonbasic}:
        raise ValueError("lp does not describe the record's mode pair")
    if eps is not None and not eps > 0:
        raise ValueError("eps must be > 0")
    if eps is None or eps == record.eps_fidelity:
        return record.fid_low_raw, record.fid_high_raw
    scan = _scan_events(record, eps)
    return scan["fid_low_raw"], scan["fid_high_raw"]


def _scan_events(record: TrajectoryRecord, eps: float | None) -> dict:
    """Linear scan of the event log reproducing every streaming statistic.

    Accumulation expressions and their order match the engine exactly, so
    results are bitwise equal, not merely close.  State entering each
    accumulation interval is the state after all log entries at the
    previous timestamp, which is what the engine used.
    """
    if record.events is None:
        raise ValueError("replay needs a record produced with log_events=True")
    cfg = record.config
    params = cfg.params
    pf = factor_product_form(params.mu)
    a0, a1 = float(pf.alpha[0]), float(pf.alpha[1])
    be0, be1 = float(pf.beta[0]), float(pf.beta[1])
    sqn = math.sqrt(cfg.n)
    pol = cfg.policy
    dual = pol.dual
    theta = cfg.scaling.theta_n
    gamma = float(params.gamma)
    exp = math.exp

    if dual:
        w_lo_band = (pol.zstar - eps) * sqn
        w_hi_band = (pol.zstar + eps) * sqn
        lo_i, lo_k = pol.mode_low.i1, pol.mode_low.k1
        hi_i, hi_k = pol.mode_high.i1, pol.mode_high.k1
    else:
        w_lo_band = w_hi_band = 0.0
        lo_i = lo_k = hi_i = hi_k = -1
    rbar_band = 3.0 / min(a0, a1) * theta

    X = [0, 0]
    A = [0, 0]
    D = [0, 0, 0, 0]
    Tacc = [0.0, 0.0, 0.0, 0.0]
    Iacc = [0.0, 0.0]
    busy_cls: list[int | None] = [None, None]
    busy_ts = [0.0, 0.0]
    W = 0.0
    cur = 0.0
    disc_prev = 1.0
    j_raw = [0.0, 0.0]
    rbar_raw = 0.0
    fid_lo = 0.0
    fid_hi = 0.0
    sup_X = [0, 0]
    e_svc = 0.0
    e_gap = 0.0
    prev_arr = [0.0, 0.0]
    switches = 0
    mode_flag = "L" if dual else "A"
    snap_t = cfg.snapshot_t if cfg.snapshot_t is not None else -1.0
    w_snap = None

    def _accumulate(te: float):
        nonlocal disc_prev, rbar_raw, fid_lo, fid_hi, w_snap
        dt = te - cur
        if dt > 0.0:
            if cur <= snap_t < te:
                w_snap = W / sqn
            disc_new = exp(-gamma * te)
            wgt = (disc_prev - disc_new) / gamma
            j_raw[0] += X[0] * wgt
            j_raw[1] += X[1] * wgt
            idle_beta = 0.0
            if busy_cls[0] is not None:
                Tacc[2 * busy_cls[0]] += dt
            else:
                Iacc[0] += dt
                idle_beta = be0
            if busy_cls[1] is not None:
                Tacc[2 * busy_cls[1] + 1] += dt
            else:
                Iacc[1] += dt
                idle_beta += be1
            if idle_beta > 0.0 and W >= rbar_band:
                rbar_raw += idle_beta * dt
            if dual:
                if W <= w_lo_band:
                    if busy_cls[lo_k] == lo_i:
                        fid_lo += dt
                elif W >= w_hi_band:
                    if busy_cls[hi_k] == hi_i:
                        fid_hi += dt
            disc_prev = disc_new

    for ev in record.events:
        kind = ev[0]
        et = ev[1]
        _accumulate(et)
        cur = et
        if kind == "arrival":
            i = ev[2]
            A[i] += 1
            X[i] += 1
            if X[i] > sup_X[i]:
                sup_X[i] = X[i]
            W = X[0] / a0 + X[1] / a1
            gap = et - prev_arr[i]
            if gap > e_gap:
                e_gap = gap
            prev_arr[i] = et
        elif kind == "completion":
            cls, k = ev[2], ev[3]
            D[2 * cls + k] += 1
            X[cls] -= 1
            W = X[0] / a0 + X[1] / a1
            d_obs = et - busy_ts[k]
            if d_obs > e_svc:
                e_svc = d_obs
            busy_cls[k] = None
        elif kind == "start":
            cls, k = ev[2], ev[3]
            busy_cls[k] = cls
            busy_ts[k] = et
        elif kind == "mode":
            switches += 1
            mode_flag = ev[2]
        else:
            raise ValueError(f"unknown event kind {kind!r}")

    _accumulate(record.t_end)
    cur = record.t_end
    if snap_t >= 0.0 and w_snap is None:
        w_snap = W / sqn
    e_live = 0.0
    for k in range(2):
        if busy_cls[k] is not None:
            e_live = max(e_live, record.t_end - busy_ts[k])

    return {
        "A": (A[0], A[1]),
        "D": ((D[0], D[1]), (D[2], D[3])),
        "X": (X[0], X[1]),
        "sup_X": (sup_X[0], sup_X[1]),
        "T": ((Tacc[0], Tacc[1]), (Tacc[2], Tacc[3])),
        "I": (Iacc[0], Iacc[1]),
        "j_raw": (j_raw[0], j_raw[1]),
        "rbar_raw": rbar_raw,
        "fid_low_raw": fid_lo,
        "fid_high_raw": fid_hi,
        "mode_switches": switches,
        "final_mode": mode_flag,
        "e_svc": e_svc,
        "e_gap": e_gap,
        "e_live": e_live,
        "w_hat_snapshot": w_snap,
    }


def replay_statistics(record: TrajectoryRecord) -> dict:
    """Recompute all streaming statistics from the raw event log."""
    return _scan_events(record, record.eps_fidelity)


def verify_replay(record: TrajectoryRecord) -> dict:
    """Replay the log and require exact equality with the streamed values.

    Raises ReplayMismatch naming the first field that differs.  Equality
    is ==, not approximate: the scan repeats the engine's floating-point
    operations in the same order.
    """
    scan = replay_statistics(record)
    for key, got in scan.items():
        want = getattr(record, key)
        if got != want:
            raise ReplayMismatch(f"{key}: replay {got!r} != streaming {want!r}")
    return scan


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov distance sup_x |F_a(x) - F_b(x)|."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("need non-empty samples")
    grid = np.concatenate([a, b])
    ca = np.searchsorted(a, grid, side="right") / a.size
    cb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.abs(ca - cb).max())


def default_distributions(params: SystemParams):
    """Primitive families matching the configured first two moments.

    SCV 1 picks exponential, an SCV below 1 an Erlang when 1/c2 is an
    integer (lognormal otherwise), and an SCV above 1 the balanced
    two-phase hyperexponential.
    """

    def pick(c2: float):
        if abs(c2 - 1.0) <= 1e-12:
            return Exponential()
        if c2 < 1.0:
            k = 1.0 / c2
            if abs(k - round(k)) <= 1e-9:
                return ErlangK(int(round(k)))
            return Lognormal(c2)
        return Hyperexp2Balanced(c2)

    arrivals = tuple(pick(float(params.c2_arrival[i])) for i in range(2))
    services = tuple(
        tuple(pick(float(params.c2_service[i, k])) for k in range(2)) for i in range(2)
    )
    return arrivals, services


@dataclass(frozen=True)
class LadderConfig:
    """Shape of an n-ladder experiment.

    horizon defaults to 40/gamma at run time and snapshot_t to half the
    horizon; eps_fidelity falls back to the engine default z*/4.
    verify_replays is the number of leading replications per rung whose
    event logs are kept and replayed through the independent slow path.
    """

    n_values: tuple[int, ...]
    replications: int = 30
    horizon: float | None = None
    eps_fidelity: float | None = None
    snapshot_t: float | None = None
    confidence: float = 0.95
    tail_tol: float = 1e-6
    ks_paths: int = 2000
    verify_replays: int = 1

    def __post_init__(self):
        ns = tuple(int(n) for n in self.n_values)
        object.__setattr__(self, "n_values", ns)
        if len(ns) == 0:
            raise ValueError("n_values must be non-empty")
        if any(n < 1 for n in ns):
            raise ValueError("n_values must be positive")
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError("n_values must be strictly increasing")
        if self.replications < 30:
            raise ValueError("need at least 30 replications per rung")
        if self.horizon is not None and not self.horizon > 0:
            raise ValueError("horizon must be > 0")
        if self.eps_fidelity is not None and not self.eps_fidelity > 0:
            raise ValueError("eps_fidelity must be > 0")
        if self.snapshot_t is not None and not self.snapshot_t >= 0:
            raise ValueError("snapshot_t must be >= 0")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")
        if not self.tail_tol > 0:
            raise ValueError("tail_tol must be > 0")
        if self.ks_paths < 2:
            raise ValueError("ks_paths must be >= 2")
        if not 0 <= self.verify_replays <= self.replications:
            raise ValueError("verify_replays must lie in [0, replications]")


@dataclass(frozen=True)
class LevelResult:
    """Statistics of one rung of the ladder.

    Standard errors use ddof=1 over `replications` values except ssc_se
    (binomial) and ks_stat (a distance, no SE attached).  cost_m2 is the
    plain second moment of the per-replication cost, reported to show the
    estimator's dispersion stays bounded along the ladder.
    """

    n: int
    theta_n: int
    replications: int
    cost: float
    cost_se: float
    cost_m2: float
    tail_bound: float
    ssc: float
    ssc_se: float
    rbar_mean: float
    rbar_se: float
    fid_low_mean: float | None
    fid_low_se: float | None
    fid_high_mean: float | None
    fid_high_se: float | None
    e_max_median: float
    e_max_q90: float
    mode_switches_mean: float
    ks_stat: float
    snapshot_count: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class ConvergenceReport:
    """Ladder results plus the diffusion benchmark they are judged against.

    v0 is the weighted value of the workload control problem at zero, the
    asymptotic lower bound the scaled costs should approach; zstar is None
    for single-mode cases.
    """

    policy: str
    case: str
    p: int
    q: int
    v0: float
    zstar: float | None
    gamma: float
    horizon: float
    snapshot_t: float
    eps_fidelity: float | None
    seed: int
    m_moment: float
    confidence: float
    levels: tuple[LevelResult, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "levels"}
        d["levels"] = [lv.to_dict() for lv in self.levels]
        return d

    def csv_rows(self):
        """Long-format rows (n, statistic, estimate, se); se empty when
        the statistic carries none."""
        rows = []
        for lv in self.levels:
            rows.append((lv.n, "cost", lv.cost, lv.cost_se))
            rows.append((lv.n, "cost_m2", lv.cost_m2, ""))
            rows.append((lv.n, "tail_bound", lv.tail_bound, ""))
            rows.append((lv.n, "ssc", lv.ssc, lv.ssc_se))
            rows.append((lv.n, "rbar", lv.rbar_mean, lv.rbar_se))
            if lv.fid_low_mean is not None:
                rows.append((lv.n, "fid_low", lv.fid_low_mean, lv.fid_low_se))
                rows.append((lv.n, "fid_high", lv.fid_high_mean, lv.fid_high_se))
            rows.append((lv.n, "e_max_median", lv.e_max_median, ""))
            rows.append((lv.n, "e_max_q90", lv.e_max_q90, ""))
            rows.append((lv.n, "mode_switches", lv.mode_switches_mean, ""))
            rows.append((lv.n, "ks", lv.ks_stat, ""))
        return rows


def _mean_se(vals: np.ndarray) -> tuple[float, float]:
    m = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return m, se


def _prescription_reason(lp: LpStructure, case, expected: PolicySpec) -> str:
    p = lp.p
    modes = (lp.mode1, lp.mode2)
    if isinstance(case, Single):
        active = modes[case.active]
        role = (
            "the single-activity class"
            if active.i1 == p
            else "the dual-activity class"
        )
        return (
            f"the mode case is single (no favorable drift/variance tradeoff) and "
            f"the priority class {p} is {role} of the active mode, which "
            f"prescribes {expected.name}"
        )
    lo, hi = modes[case.low], modes[case.high]
    lo_role = "single" if lo.i1 == p else "dual"
    hi_role = "single" if hi.i1 == p else "dual"
    return (
        f"the mode case is dual and the priority class {p} is the "
        f"{lo_role}-activity class in the low mode and the {hi_role}-activity "
        f"class in the high mode, which prescribes {expected.name}"
    )


def ao_experiment(
    ladder: LadderConfig,
    params: SystemParams,
    policy: str = "auto",
    *,
    arrival_dists=None,
    service_dists=None,
    seed: int = 0,
    m_moment: float | None = None,
    a_bar: float | None = None,
    lp_tol: float = 1e-9,
) -> ConvergenceReport:
    """Run the ladder under the prescribed policy and report convergence.

    The policy is derived from the instance's mode case; requesting any
    other policy raises PolicyCaseMismatch naming the condition that
    prescribes the correct one ("auto" accepts the derived policy).
    Structural refusals (non-product-form rates, no multiplicity,
    boundary or degenerate instances) propagate from the analysis step.
    Results are deterministic given the configuration and master seed;
    HTS_THREADS only caps the worker count, never reorders reductions.
    """
    lp = analyze_lp(params, tol=lp_tol)
    sol = solve_wcp(params, lp)

    if arrival_dists is None or service_dists is None:
        d_arr, d_svc = default_distributions(params)
        arrival_dists = arrival_dists if arrival_dists is not None else d_arr
        service_dists = service_dists if service_dists is not None else d_svc
    if m_moment is None:
        bounds = [d.moment_bound for d in arrival_dists]
        bounds += [service_dists[i][k].moment_bound for i in range(2) for k in range(2)]
        m_moment = min(6.0, *bounds)

    expected = select_policy(lp, sol.case, zstar=sol.zstar, m_moment=m_moment)
    if policy in ("auto", None, expected.name):
        spec = expected
    elif policy in ("P", "T2", "PP", "T2T2", "T1T2", "T2T1"):
        raise PolicyCaseMismatch(
            f"requested {policy!r} but {_prescription_reason(lp, sol.case, expected)}"
        )
    else:
        raise ValueError(f"unknown policy {policy!r}")

    gamma = float(params.gamma)
    t0 = ladder.horizon if ladder.horizon is not None else 40.0 / gamma
    snap_t = ladder.snapshot_t if ladder.snapshot_t is not None else t0 / 2.0
    if not snap_t < t0:
        raise ValueError("snapshot_t must be below the horizon")
    h = params.h

    if isinstance(sol.case, Dual):
        case_name = "dual"
        cf = sol.coeffs
        lo, hi = sol.case.low, sol.case.high
        kind = Switched(
            b_low=float(cf.b[lo]),
            sigma_low=float(cf.sigma[lo]),
            b_high=float(cf.b[hi]),
            sigma_high=float(cf.sigma[hi]),
            zstar=sol.hjb.zstar,
        )
    else:
        case_name = "single"
        cf = sol.coeffs
        kind = Rbm(b=float(cf.b[sol.case.active]), sigma=float(cf.sigma[sol.case.active]))
    dspec = DiffusionSpec(kind=kind, dt=1e-3, horizon=snap_t, gamma=gamma)
    dsamples = terminal_samples(dspec, ladder.ks_paths, seed=seed)

    levels = []
    for n in ladder.n_values:
        scaling = ScalingPolicy(n=n, m_moment=m_moment, a_bar=a_bar)

        def _one(rep: int) -> TrajectoryRecord:
            cfg = RunConfig(
                params=params,
                n=n,
                arrival_dists=arrival_dists,
                service_dists=service_dists,
                scaling=scaling,
                policy=spec,
                horizon=t0,
                seed=seed,
                rep=rep,
                eps_fidelity=ladder.eps_fidelity,
                snapshot_t=snap_t,
                log_events=rep < ladder.verify_replays,
            )
            return run(cfg)

        records = _pmap(_one, range(ladder.replications))
        for r in records[: ladder.verify_replays]:
            verify_replay(r)

        sqn = math.sqrt(n)
        vals = np.array([(h[0] * r.j_raw[0] + h[1] * r.j_raw[1]) / sqn for r in records])
        cost, cost_se = _mean_se(vals)
        cost_m2 = float((vals * vals).mean())
        tail = max(
            (h[0] * r.sup_X[0] + h[1] * r.sup_X[1]) / sqn * math.exp(-gamma * t0) / gamma
            for r in records
        )
        if tail > ladder.tail_tol:
            raise TailBoundExceeded(
                f"tail bound {tail:.3g} exceeds {ladder.tail_tol:.3g}; raise the horizon"
            )

        ssc, ssc_se = ssc_statistic(records, scaling, lp.p)
        rbar_vals = np.array([rbar_statistic(r, lp) for r in records])
        rbar_mean, rbar_se = _mean_se(rbar_vals)

        if spec.dual:
            fid = [mode_fidelity(r, lp, sol) for r in records]
            flo, flo_se = _mean_se(np.array([f[0] for f in fid]))
            fhi, fhi_se = _mean_se(np.array([f[1] for f in fid]))
        else:
            flo = flo_se = fhi = fhi_se = None

        emax_vals = np.array([r.e_max_value for r in records])
        snaps = np.array([r.w_hat_snapshot for r in records])
        levels.append(
            LevelResult(
                n=n,
                theta_n=scaling.theta_n,
                replications=len(records),
                cost=cost,
                cost_se=cost_se,
                cost_m2=cost_m2,
                tail_bound=tail,
                ssc=ssc,
                ssc_se=ssc_se,
                rbar_mean=rbar_mean,
                rbar_se=rbar_se,
                fid_low_mean=flo,
                fid_low_se=flo_se,
                fid_high_mean=fhi,
                fid_high_se=fhi_se,
                e_max_median=float(np.quantile(emax_vals, 0.5)),
                e_max_q90=float(np.quantile(emax_vals, 0.9)),
                mode_switches_mean=float(
                    np.mean([r.mode_switches for r in records])
                ),
                ks_stat=ks_statistic(snaps, dsamples),
                snapshot_count=len(snaps),
            )
        )

    eps_used = ladder.eps_fidelity
    if eps_used is None and spec.dual:
        eps_used = spec.zstar / 4.0
    return ConvergenceReport(
        policy=spec.name,
        case=case_name,
        p=lp.p,
        q=lp.q,
        v0=sol.v0,
        zstar=sol.zstar,
        gamma=gamma,
        horizon=t0,
        snapshot_t=snap_t,
        eps_fidelity=eps_used,
        seed=seed,
        m_moment=float(m_moment),
        confidence=ladder.confidence,
        levels=tuple(levels),
    )
