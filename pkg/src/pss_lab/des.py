"""Discrete-event simulation of the prelimit parallel-server system.

The n-th system runs accelerated renewal primitives (rates of order n) and
one of six non-preemptive scheduling policies built from three server rules:

* P  : the dual-activity server always prioritizes the single-activity class;
* T1 : it prioritizes the single-activity class only while that class's
       number in system is at or above the threshold theta_n;
* T2 : it prioritizes the dual-activity class only while that class's number
       in system is at or above theta_n.

In every mode the single-activity server is dedicated to the dual-activity
class, and the mode's nonbasic activity is never used.  Dual-mode policies
(PP, T2T2, T1T2, T2T1) switch between two modes by comparing the unscaled
workload sum_i X_i/alpha_i against sqrt(n) z* at sampling instants: PP and
T2T2 sample only at service completions of the current mode's
single-activity server, T1T2 and T2T1 at every arrival and completion.

Event handling order at equal timestamps: completions before arrivals,
lower server index first, then lower class index.  Dispatch after every
state change offers the dedicated server first, so a job both servers could
admit goes to the server dedicated to its class when that server is free.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np

from ._rng import philox_stream
from .diffusion import CostEstimate
from .errors import NonpositiveRate, PolicyCaseMismatch, TailBoundExceeded
from .lp import LpStructure, Mode, factor_product_form
from .params import SystemParams
from .scaling import M0, ScalingPolicy
from .wcp import Dual, ModeCase, Single

INF = math.inf

_SINGLE_RULES = {"P": ("P", None), "T2": ("T2", None)}
_DUAL_RULES = {
    "PP": ("P", "P"),
    "T2T2": ("T2", "T2"),
    "T1T2": ("T1", "T2"),
    "T2T1": ("T2", "T1"),
}
POLICY_NAMES = tuple(_SINGLE_RULES) + tuple(_DUAL_RULES)


def accelerated_rates(params: SystemParams, n: int) -> tuple[np.ndarray, np.ndarray]:
    """lam_n = n lam + sqrt(n) lam_hat and mu_n likewise; all must be > 0."""
    sqn = math.sqrt(n)
    lam_n = n * params.lam + sqn * params.lam_hat
    mu_n = n * params.mu + sqn * params.mu_hat
    if np.any(lam_n <= 0.0) or np.any(mu_n <= 0.0):
        raise NonpositiveRate(
            f"accelerated rates must be positive at n={n}: lam_n={lam_n}, mu_n={mu_n}"
        )
    return lam_n, mu_n


class _Buf:
    """Chunked draws from a mean-1 family, divided by the accelerated rate."""

    __slots__ = ("dist", "rate", "rng", "chunk", "buf", "pos")

    def __init__(self, dist, rate: float, rng, chunk: int = 4096):
        self.dist = dist
        self.rate = rate
        self.rng = rng
        self.chunk = chunk
        self.buf = None
        self.pos = 0

    def next(self) -> float:
        buf = self.buf
        if buf is None or self.pos == len(buf):
            buf = self.dist.sample(self.rng, self.chunk) / self.rate
            self.buf = buf
            self.pos = 0
        v = buf[self.pos]
        self.pos += 1
        return float(v)


class SequenceStream:
    """Fixed draw sequence for deterministic scenarios.

    After the listed values it returns `tail` forever (math.inf truncates an
    arrival stream); with tail=None exhaustion raises IndexError.
    """

    __slots__ = ("values", "pos", "tail")

    def __init__(self, values, tail: float | None = None):
        self.values = [float(v) for v in values]
        self.pos = 0
        self.tail = tail

    def next(self) -> float:
        if self.pos < len(self.values):
            v = self.values[self.pos]
            self.pos += 1
            return v
        if self.tail is None:
            raise IndexError("stream exhausted")
        return self.tail


@dataclass
class Primitives:
    """Arrival streams (per class) and service streams (index 2*i + k)."""

    arr: tuple
    svc: tuple
    lam_n: np.ndarray
    mu_n: np.ndarray


def build_primitives(
    params: SystemParams,
    n: int,
    arrival_dists,
    service_dists,
    seed: int,
    rep: int = 0,
    chunk: int = 4096,
) -> Primitives:
    """Six mutually independent streams keyed by (seed, rep, role, index)."""
    lam_n, mu_n = accelerated_rates(params, n)
    arr = tuple(
        _Buf(arrival_dists[i], float(lam_n[i]), philox_stream(seed, rep, "arr", i), chunk)
        for i in range(2)
    )
    svc = tuple(
        _Buf(
            service_dists[i][k],
            float(mu_n[i, k]),
            philox_stream(seed, rep, "svc", i, k),
            chunk,
        )
        for i in range(2)
        for k in range(2)
    )
    return Primitives(arr=arr, svc=svc, lam_n=lam_n, mu_n=mu_n)


@dataclass(frozen=True)
class PolicySpec:
    """One of the six policies with its mode data.

    Single-mode policies carry the active mode in mode_low; dual-mode
    policies carry the low/high pair plus the switching level z*.
    """

    name: str
    mode_low: Mode
    mode_high: Mode | None = None
    zstar: float | None = None

    def __post_init__(self):
        if self.name in _SINGLE_RULES:
            if self.mode_high is not None or self.zstar is not None:
                raise PolicyCaseMismatch(
                    f"{self.name} is single-mode; mode_high and zstar must be unset"
                )
            return
        if self.name not in _DUAL_RULES:
            raise ValueError(f"unknown policy {self.name!r}; expected one of {POLICY_NAMES}")
        if self.mode_high is None or self.zstar is None or not self.zstar > 0:
            raise PolicyCaseMismatch(f"{self.name} is dual-mode; needs mode_high and zstar > 0")
        lo, hi = self.mode_low, self.mode_high
        if self.name in ("PP", "T2T2"):
            # same class roles, server roles swap between the modes
            if not (lo.i1 == hi.i1 and lo.k1 != hi.k1):
                raise PolicyCaseMismatch(
                    f"{self.name} requires a server-switched mode pair; "
                    f"got nonbasic {lo.nonbasic} / {hi.nonbasic}"
                )
        else:
            if not (lo.k1 == hi.k1 and lo.i1 != hi.i1):
                raise PolicyCaseMismatch(
                    f"{self.name} requires a class-switched mode pair; "
                    f"got nonbasic {lo.nonbasic} / {hi.nonbasic}"
                )

    @property
    def dual(self) -> bool:
        return self.name in _DUAL_RULES

    @property
    def rules(self) -> tuple[str, str | None]:
        return _DUAL_RULES[self.name] if self.dual else _SINGLE_RULES[self.name]

    @property
    def samples_every_event(self) -> bool:
        return self.name in ("T1T2", "T2T1")


def select_policy(
    lp: LpStructure,
    case: ModeCase,
    zstar: float | None = None,
    m_moment: float | None = None,
) -> PolicySpec:
    """Pick the asymptotically optimal policy for the instance's case.

    Single mode: P when the active mode's single-activity class is the
    priority class p, else T2.  Dual mode: PP/T2T2 when p keeps its role in
    both modes (single-activity resp. dual-activity), T1T2/T2T1 when the
    roles swap.  T2, T2T2 and T1T2 carry moment requirements m > m0; a
    configured m at or below that triggers a warning but still runs.
    """
    modes = (lp.mode1, lp.mode2)
    p = lp.p
    if isinstance(case, Single):
        active = modes[case.active]
        name = "P" if active.i1 == p else "T2"
        spec = PolicySpec(name=name, mode_low=active)
    elif isinstance(case, Dual):
        lo, hi = modes[case.low], modes[case.high]
        if zstar is None or not zstar > 0:
            raise ValueError("dual-mode policies need zstar > 0")
        p_low_single = lo.i1 == p
        p_high_single = hi.i1 == p
        if p_low_single and p_high_single:
            name = "PP"
        elif not p_low_single and not p_high_single:
            name = "T2T2"
        elif p_low_single:
            name = "T1T2"
        else:
            name = "T2T1"
        spec = PolicySpec(name=name, mode_low=lo, mode_high=hi, zstar=zstar)
    else:
        raise TypeError(f"unsupported mode case {case!r}")
    if m_moment is not None and spec.name in ("T2", "T2T2", "T1T2") and m_moment <= M0:
        warnings.warn(
            f"policy {spec.name} assumes moment order m > m0 = {M0:.4f}, got m = {m_moment}",
            RuntimeWarning,
            stacklevel=2,
        )
    return spec


@dataclass(frozen=True)
class RunConfig:
    """One replication of the n-th system.

    eps_fidelity defaults to zstar/4 for dual-mode policies; arrival_cap
    truncates each arrival stream after that many arrivals (0 = no
    arrivals).  sample_period and snapshot_t control path output;
    log_events keeps the full event list in memory.
    """

    params: SystemParams
    n: int
    arrival_dists: tuple
    service_dists: tuple
    scaling: ScalingPolicy
    policy: PolicySpec
    horizon: float
    seed: int
    rep: int = 0
    eps_fidelity: float | None = None
    sample_period: float | None = None
    snapshot_t: float | None = None
    log_events: bool = False
    arrival_cap: int | None = None
    check_invariants: bool = False

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be > 0")
        if self.scaling.n != self.n:
            raise ValueError(f"scaling is for n={self.scaling.n}, run is n={self.n}")
        if self.sample_period is not None and not self.sample_period > 0:
            raise ValueError("sample_period must be > 0")
        if self.snapshot_t is not None and not 0 <= self.snapshot_t < self.horizon:
            raise ValueError("snapshot_t must lie in [0, horizon)")
        if self.arrival_cap is not None and self.arrival_cap < 0:
            raise ValueError("arrival_cap must be >= 0")
        if self.eps_fidelity is not None and not self.eps_fidelity > 0:
            raise ValueError("eps_fidelity must be > 0")


@dataclass
class TrajectoryRecord:
    """Counters, streaming statistics and optional paths of one replication.

    j_raw holds the per-class unscaled discounted integrals
    int_0^t0 exp(-gamma t) X_i(t) dt; rbar_raw the unscaled band-idleness
    integral (multiply by sqrt(n) for the scaled statistic); fid_low_raw /
    fid_high_raw the busyness of the low/high mode's nonbasic activity while
    the workload sits outside the eps band on the wrong side.
    """

    config: RunConfig
    t_end: float
    A: tuple[int, int]
    D: tuple[tuple[int, int], tuple[int, int]]
    X: tuple[int, int]
    sup_X: tuple[int, int]
    T: tuple[tuple[float, float], tuple[float, float]]
    I: tuple[float, float]
    j_raw: tuple[float, float]
    rbar_raw: float
    fid_low_raw: float
    fid_high_raw: float
    eps_fidelity: float | None
    mode_switches: int
    final_mode: str
    e_svc: float
    e_gap: float
    e_live: float
    w_hat_snapshot: float | None
    samples: dict | None
    events: list | None

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def e_max_value(self) -> float:
        return max(self.e_svc, self.e_gap, self.e_live)


def run(config: RunConfig, primitives: Primitives | None = None) -> TrajectoryRecord:
    """Simulate one replication from the empty state to the horizon."""
    params = config.params
    pf = factor_product_form(params.mu)
    a0, a1 = float(pf.alpha[0]), float(pf.alpha[1])
    be0, be1 = float(pf.beta[0]), float(pf.beta[1])
    n = config.n
    sqn = math.sqrt(n)
    pol = config.policy
    dual = pol.dual
    theta = config.scaling.theta_n
    gamma = float(params.gamma)
    t0 = config.horizon
    exp = math.exp

    if primitives is None:
        primitives = build_primitives(
            params, n, config.arrival_dists, config.service_dists, config.seed, config.rep
        )
    else:
        accelerated_rates(params, n)
    arr_bufs = primitives.arr
    svc_bufs = primitives.svc

    rule_low, rule_high = pol.rules
    _rule_id = {"P": 0, "T1": 1, "T2": 2}
    rule = _rule_id[rule_low]
    rule_hi_id = _rule_id[rule_high] if rule_high else rule
    mode = pol.mode_low
    mode_hi = pol.mode_high
    mode_flag = "L" if dual else "A"
    sample_all = pol.samples_every_event

    if dual:
        eps = config.eps_fidelity if config.eps_fidelity is not None else pol.zstar / 4.0
        snz = pol.zstar * sqn
        w_lo_band = (pol.zstar - eps) * sqn
        w_hi_band = (pol.zstar + eps) * sqn
        lo_i, lo_k = pol.mode_low.i1, pol.mode_low.k1
        hi_i, hi_k = pol.mode_high.i1, pol.mode_high.k1
    else:
        eps = None
        snz = w_lo_band = w_hi_band = 0.0
        lo_i = lo_k = hi_i = hi_k = -1
    rbar_band = 3.0 / min(a0, a1) * theta

    # state
    X = [0, 0]
    A = [0, 0]
    D = [0, 0, 0, 0]  # 2*i + k
    Tacc = [0.0, 0.0, 0.0, 0.0]
    Iacc = [0.0, 0.0]
    queues = (deque(), deque())
    busy = [None, None]  # (class, job, t_completion, t_start)
    W = 0.0
    t = 0.0
    disc_prev = 1.0
    j_raw = [0.0, 0.0]
    rbar_raw = 0.0
    fid_lo = 0.0
    fid_hi = 0.0
    sup_X = [0, 0]
    e_svc = 0.0
    e_gap = 0.0
    switches = 0
    events = [] if config.log_events else None
    check = config.check_invariants

    # arrival bookkeeping: next arrival time and previous arrival time per class
    cap = config.arrival_cap
    na = [INF, INF]
    prev_arr = [0.0, 0.0]
    for i in range(2):
        if cap == 0:
            continue
        g = arr_bufs[i].next()
        if g < INF:
            na[i] = g

    # path sampling
    period = config.sample_period
    next_s = 0.0 if period is not None else INF
    s_t = []
    s_x0 = []
    s_x1 = []
    s_i0 = []
    s_i1 = []
    s_mode = []
    snap_t = config.snapshot_t if config.snapshot_t is not None else -1.0
    w_snap = None

    def _stabilize():
        m_i1, m_i2, m_k1, m_k2 = mode.i1, mode.i2, mode.k1, mode.k2
        if busy[m_k1] is None and queues[m_i2]:
            job = queues[m_i2].popleft()
            dur = svc_bufs[2 * m_i2 + m_k1].next()
            busy[m_k1] = (m_i2, job, t + dur, t)
            if events is not None:
                events.append(("start", t, m_i2, m_k1, job))
        if busy[m_k2] is None:
            if rule == 0:
                prio = m_i1
            elif rule == 1:
                prio = m_i1 if X[m_i1] >= theta else m_i2
            else:
                prio = m_i2 if X[m_i2] >= theta else m_i1
            oth = m_i1 + m_i2 - prio
            if queues[prio]:
                cls = prio
            elif queues[oth]:
                cls = oth
            else:
                return
            job = queues[cls].popleft()
            dur = svc_bufs[2 * cls + m_k2].next()
            busy[m_k2] = (cls, job, t + dur, t)
            if events is not None:
                events.append(("start", t, cls, m_k2, job))

    while True:
        b0, b1 = busy[0], busy[1]
        c0 = b0[2] if b0 is not None else INF
        c1 = b1[2] if b1 is not None else INF
        te = c0
        if c1 < te:
            te = c1
        if na[0] < te:
            te = na[0]
        if na[1] < te:
            te = na[1]
        if te > t0:
            te = t0
            etype = -1
        elif c0 == te:
            etype = 0
        elif c1 == te:
            etype = 1
        elif na[0] == te:
            etype = 2
        else:
            etype = 3

        dt = te - t
        if dt > 0.0:
            # samples use the state on [t, te)
            while next_s < te:
                s_t.append(next_s)
                s_x0.append(X[0])
                s_x1.append(X[1])
                s_i0.append(Iacc[0] + (next_s - t if b0 is None else 0.0))
                s_i1.append(Iacc[1] + (next_s - t if b1 is None else 0.0))
                s_mode.append(0 if mode_flag != "H" else 1)
                next_s += period
            if t <= snap_t < te:
                w_snap = W / sqn
            disc_new = exp(-gamma * te)
            wgt = (disc_prev - disc_new) / gamma
            j_raw[0] += X[0] * wgt
            j_raw[1] += X[1] * wgt
            idle_beta = 0.0
            if b0 is not None:
                Tacc[2 * b0[0]] += dt
            else:
                Iacc[0] += dt
                idle_beta = be0
            if b1 is not None:
                Tacc[2 * b1[0] + 1] += dt
            else:
                Iacc[1] += dt
                idle_beta += be1
            if idle_beta > 0.0 and W >= rbar_band:
                rbar_raw += idle_beta * dt
            if dual:
                if W <= w_lo_band:
                    blo = busy[lo_k]
                    if blo is not None and blo[0] == lo_i:
                        fid_lo += dt
                elif W >= w_hi_band:
                    bhi = busy[hi_k]
                    if bhi is not None and bhi[0] == hi_i:
                        fid_hi += dt
            disc_prev = disc_new
        t = te
        if etype == -1:
            break

        if etype <= 1:
            # service completion at server etype
            k = etype
            cls, job, _, ts = busy[k]
            busy[k] = None
            D[2 * cls + k] += 1
            X[cls] -= 1
            W = X[0] / a0 + X[1] / a1
            d_obs = t - ts
            if d_obs > e_svc:
                e_svc = d_obs
            if events is not None:
                events.append(("completion", t, cls, k, job))
            if dual and (sample_all or k == mode.k1):
                new_flag = "L" if W < snz else "H"
                if new_flag != mode_flag:
                    mode_flag = new_flag
                    if new_flag == "H":
                        mode, rule = mode_hi, rule_hi_id
                    else:
                        mode, rule = pol.mode_low, _rule_id[rule_low]
                    switches += 1
                    if events is not None:
                        events.append(("mode", t, new_flag))
        else:
            i = etype - 2
            A[i] += 1
            job = A[i]
            X[i] += 1
            if X[i] > sup_X[i]:
                sup_X[i] = X[i]
            W = X[0] / a0 + X[1] / a1
            gap = t - prev_arr[i]
            if gap > e_gap:
                e_gap = gap
            prev_arr[i] = t
            queues[i].append(job)
            if events is not None:
                events.append(("arrival", t, i, job))
            if cap is not None and A[i] >= cap:
                na[i] = INF
            else:
                g = arr_bufs[i].next()
                na[i] = t + g if g < INF else INF
            if dual and sample_all:
                new_flag = "L" if W < snz else "H"
                if new_flag != mode_flag:
                    mode_flag = new_flag
                    if new_flag == "H":
                        mode, rule = mode_hi, rule_hi_id
                    else:
                        mode, rule = pol.mode_low, _rule_id[rule_low]
                    switches += 1
                    if events is not None:
                        events.append(("mode", t, new_flag))
        _stabilize()

        if check:
            assert X[0] == A[0] - D[0] - D[1], "class-0 count identity"
            assert X[1] == A[1] - D[2] - D[3], "class-1 count identity"
            tol = 1e-9 * max(1.0, t)
            assert abs(Iacc[0] + Tacc[0] + Tacc[2] - t) <= tol, "server-0 time split"
            assert abs(Iacc[1] + Tacc[1] + Tacc[3] - t) <= tol, "server-1 time split"

    # trailing samples at the horizon (state after the last event)
    while next_s <= t0:
        s_t.append(next_s)
        s_x0.append(X[0])
        s_x1.append(X[1])
        s_i0.append(Iacc[0] + (next_s - t if busy[0] is None else 0.0))
        s_i1.append(Iacc[1] + (next_s - t if busy[1] is None else 0.0))
        s_mode.append(0 if mode_flag != "H" else 1)
        next_s += period
    if snap_t >= 0.0 and w_snap is None:
        w_snap = W / sqn

    e_live = 0.0
    for k in range(2):
        if busy[k] is not None:
            e_live = max(e_live, t0 - busy[k][3])

    samples = None
    if period is not None:
        ts = np.array(s_t)
        x0 = np.array(s_x0, dtype=float)
        x1 = np.array(s_x1, dtype=float)
        i0 = np.array(s_i0)
        i1 = np.array(s_i1)
        samples = {
            "t": ts,
            "x1_hat": x0 / sqn,
            "x2_hat": x1 / sqn,
            "w_hat": (x0 / a0 + x1 / a1) / sqn,
            "i1_hat": sqn * i0,
            "i2_hat": sqn * i1,
            "l_hat": sqn * (be0 * i0 + be1 * i1),
            "mode": np.array(s_mode, dtype=np.int8),
        }

    return TrajectoryRecord(
        config=config,
        t_end=t0,
        A=(A[0], A[1]),
        D=((D[0], D[1]), (D[2], D[3])),
        X=(X[0], X[1]),
        sup_X=(sup_X[0], sup_X[1]),
        T=((Tacc[0], Tacc[1]), (Tacc[2], Tacc[3])),
        I=(Iacc[0], Iacc[1]),
        j_raw=(j_raw[0], j_raw[1]),
        rbar_raw=rbar_raw,
        fid_low_raw=fid_lo,
        fid_high_raw=fid_hi,
        eps_fidelity=eps,
        mode_switches=switches,
        final_mode=mode_flag,
        e_svc=e_svc,
        e_gap=e_gap,
        e_live=e_live,
        w_hat_snapshot=w_snap,
        samples=samples,
        events=events,
    )


def cost_estimate(
    records, gamma: float, h, tail_tol: float = 1e-9
) -> CostEstimate:
    """Mean discounted holding cost over replications, with SE and tail bound.

    Each record carries exact per-class discounted integrals, so the cost is
    h1 J1 + h2 J2 scaled by sqrt(n).  The tail beyond the horizon is bounded
    through the running supremum of the scaled counts.
    """
    records = list(records)
    if not records:
        raise ValueError("need at least one record")
    h0, h1 = float(h[0]), float(h[1])
    vals = np.empty(len(records))
    tail = 0.0
    for idx, r in enumerate(records):
        if abs(float(r.config.params.gamma) - gamma) > 1e-12:
            raise ValueError("gamma does not match the recorded discounting")
        sqn = math.sqrt(r.config.n)
        vals[idx] = (h0 * r.j_raw[0] + h1 * r.j_raw[1]) / sqn
        sup_cost = (h0 * r.sup_X[0] + h1 * r.sup_X[1]) / sqn
        tail = max(tail, sup_cost * math.exp(-gamma * r.t_end) / gamma)
    if tail > tail_tol:
        raise TailBoundExceeded(f"tail bound {tail:.3g} exceeds {tail_tol:.3g}")
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return CostEstimate(est, se, tail)


def e_max(record: TrajectoryRecord, t: float | None = None) -> float:
    """Longest primitive duration observed by time t.

    Counts completed service durations, elapsed time of services in
    progress, and closed interarrival gaps (including the initial gap from
    time 0); the open gap since the last arrival is not a realized draw and
    is excluded.  t=None evaluates at the record's horizon from streaming
    values; earlier t requires the event log.
    """
    if t is None or t == record.t_end:
        return record.e_max_value
    if record.events is None:
        raise ValueError("evaluating e_max at an interior time needs log_events=True")
    if not 0 <= t <= record.t_end:
        raise ValueError("t outside the recorded horizon")
    best = 0.0
    last_arr = [0.0, 0.0]
    open_starts: dict[int, float] = {}
    for ev in record.events:
        kind = ev[0]
        et = ev[1]
        if et > t:
            break
        if kind == "arrival":
            gap = et - last_arr[ev[2]]
            if gap > best:
                best = gap
            last_arr[ev[2]] = et
        elif kind == "start":
            open_starts[ev[3]] = et
        elif kind == "completion":
            dur = et - open_starts.pop(ev[3])
            if dur > best:
                best = dur
    for ts in open_starts.values():
        if t - ts > best:
            best = t - ts
    return best
