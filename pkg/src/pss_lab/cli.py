"""Command-line driver.

Subcommands: analyze, simulate, diffusion, experiment, dump-value-grid.
All take one JSON config file (see docs/formats.md).  Outputs are
deterministic given the config and seed: rerunning a command with the
same inputs reproduces every output file byte for byte.  Exit codes:
0 success, 2 configuration error, 3 mathematical refusal (the instance
falls outside the class the laboratory covers, or the requested policy
contradicts the instance's case).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import platform
import sys

import numpy as np

from . import __version__
from .config import (
    CaseSpec,
    ConfigFile,
    case_distributions,
    config_hash,
    parse_config_file,
)
from .des import RunConfig, cost_estimate, run, select_policy
from .diffusion import (
    DiffusionSpec,
    Rbm,
    Switched,
    estimate_cost,
    estimate_terminal,
    simulate as simulate_diffusion,
)
from .errors import ConfigError, PssLabError
from .experiments import ao_experiment
from .lp import analyze_lp
from .scaling import ScalingPolicy
from .serialize import lp_to_dict, wcp_to_dict
from .wcp import Dual, Single, solve_wcp


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _manifest(cfg: ConfigFile, command: str, outputs) -> dict:
    return {
        "command": command,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "versions": {
            "pss_lab": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "outputs": sorted(outputs),
    }


def _ensure_outdir(cfg: ConfigFile) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg.output_dir


def _effective_m(cfg: ConfigFile, dists) -> float:
    if cfg.m_moment is not None:
        return cfg.m_moment
    arr, svc = dists
    bounds = [d.moment_bound for d in arr]
    bounds += [svc[i][k].moment_bound for i in range(2) for k in range(2)]
    return min(6.0, *bounds)


def _resolve_policy(case: CaseSpec, lp, sol, m_moment: float):
    """Policy spec for a case, honoring a configured z* override."""
    zstar = case.zstar
    if isinstance(sol.case, Single):
        if zstar is not None:
            raise ConfigError("policy.zstar", "instance is single-mode; zstar does not apply")
    elif zstar is None:
        zstar = sol.hjb.zstar
    spec = select_policy(lp, sol.case, zstar=zstar, m_moment=m_moment)
    if case.policy not in ("auto", spec.name):
        # same enforcement as the experiment path, phrased via the spec
        from .experiments import _prescription_reason
        from .errors import PolicyCaseMismatch

        raise PolicyCaseMismatch(
            f"requested {case.policy!r} but {_prescription_reason(lp, sol.case, spec)}"
        )
    return spec


def cmd_analyze(cfg: ConfigFile) -> int:
    out = {}
    for case in cfg.cases:
        lp = analyze_lp(case.system)
        sol = solve_wcp(case.system, lp)
        out[case.name] = {"lp": lp_to_dict(lp), "wcp": wcp_to_dict(sol)}
    if len(cfg.cases) == 1:
        out = out[cfg.cases[0].name]
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def _record_summary(rec, rep: int) -> dict:
    return {
        "rep": rep,
        "t_end": rec.t_end,
        "A": list(rec.A),
        "D": [list(row) for row in rec.D],
        "X": list(rec.X),
        "sup_X": list(rec.sup_X),
        "T": [list(row) for row in rec.T],
        "I": list(rec.I),
        "j_raw": list(rec.j_raw),
        "rbar_raw": rec.rbar_raw,
        "fid_low_raw": rec.fid_low_raw,
        "fid_high_raw": rec.fid_high_raw,
        "eps_fidelity": rec.eps_fidelity,
        "mode_switches": rec.mode_switches,
        "final_mode": rec.final_mode,
        "e_svc": rec.e_svc,
        "e_gap": rec.e_gap,
        "e_live": rec.e_live,
        "e_max": rec.e_max_value,
        "w_hat_snapshot": rec.w_hat_snapshot,
    }


def _event_line(ev) -> dict:
    kind = ev[0]
    if kind == "mode":
        return {"t": ev[1], "kind": "mode", "mode": ev[2]}
    return {"t": ev[1], "kind": kind, "class": ev[2],
            "server": None if kind == "arrival" else ev[3],
            "job": ev[3] if kind == "arrival" else ev[4]}


def cmd_simulate(cfg: ConfigFile) -> int:
    if cfg.simulate is None:
        raise ConfigError("simulate", "required section missing for this command")
    sim = cfg.simulate
    case = cfg.single_case
    lp = analyze_lp(case.system)
    sol = solve_wcp(case.system, lp)
    dists = case_distributions(case)
    m_moment = _effective_m(cfg, dists)
    pol = _resolve_policy(case, lp, sol, m_moment)
    scaling = ScalingPolicy(n=sim.n, m_moment=m_moment, a_bar=cfg.a_bar)

    out_dir = _ensure_outdir(cfg)
    outputs = []
    records = []
    for rep in range(sim.replications):
        rc = RunConfig(
            params=case.system,
            n=sim.n,
            arrival_dists=dists[0],
            service_dists=dists[1],
            scaling=scaling,
            policy=pol,
            horizon=sim.horizon,
            seed=cfg.seed,
            rep=rep,
            eps_fidelity=sim.eps_fidelity,
            sample_period=sim.sample_period,
            snapshot_t=sim.snapshot_t,
            log_events=sim.log_events,
            arrival_cap=sim.arrival_cap,
        )
        rec = run(rc)
        records.append(rec)
        if sim.log_events:
            name = f"events-rep{rep}.ndjson"
            with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
                for ev in rec.events:
                    fh.write(json.dumps(_event_line(ev), sort_keys=True))
                    fh.write("\n")
            outputs.append(name)
        if sim.sample_period is not None:
            name = f"samples-rep{rep}.csv"
            s = rec.samples
            cols = ("t", "x1_hat", "x2_hat", "w_hat", "i1_hat", "i2_hat", "l_hat", "mode")
            rows = zip(*(s[c].tolist() for c in cols))
            _write_csv(os.path.join(out_dir, name), cols, rows)
            outputs.append(name)

    cost = cost_estimate(records, case.system.gamma, case.system.h, tail_tol=math.inf)
    result = {
        "case": case.name,
        "policy": pol.name,
        "zstar": pol.zstar,
        "n": sim.n,
        "theta_n": scaling.theta_n,
        "m_moment": m_moment,
        "a_bar": scaling.a_bar,
        "cost": {"estimate": cost.estimate, "se": cost.std_error, "tail_bound": cost.tail_bound},
        "records": [_record_summary(r, i) for i, r in enumerate(records)],
    }
    _write_json(os.path.join(out_dir, "simulate.json"), result)
    outputs.append("simulate.json")
    _write_json(os.path.join(out_dir, "manifest.json"),
                _manifest(cfg, "simulate", outputs + ["manifest.json"]))
    print(f"simulate: {sim.replications} replication(s) at n={sim.n} under {pol.name}; "
          f"cost {cost.estimate:.6g} +- {cost.std_error:.3g} -> {out_dir}/simulate.json")
    return 0


def _diffusion_kind(sol, zstar_override):
    cf = sol.coeffs
    if isinstance(sol.case, Dual):
        zstar = zstar_override if zstar_override is not None else sol.hjb.zstar
        lo, hi = sol.case.low, sol.case.high
        return Switched(
            b_low=float(cf.b[lo]), sigma_low=float(cf.sigma[lo]),
            b_high=float(cf.b[hi]), sigma_high=float(cf.sigma[hi]),
            zstar=zstar,
        )
    a = sol.case.active
    return Rbm(b=float(cf.b[a]), sigma=float(cf.sigma[a]))


def cmd_diffusion(cfg: ConfigFile) -> int:
    case = cfg.single_case
    lp = analyze_lp(case.system)
    sol = solve_wcp(case.system, lp)
    if isinstance(sol.case, Single) and case.zstar is not None:
        raise ConfigError("policy.zstar", "instance is single-mode; zstar does not apply")
    dr = cfg.diffusion
    kind = _diffusion_kind(sol, case.zstar)
    spec = DiffusionSpec(kind=kind, z0=dr.z0, dt=dr.dt, horizon=dr.horizon,
                         gamma=case.system.gamma, scheme=dr.scheme)
    cost = estimate_cost(spec, dr.n_paths, cfg.seed, tail_tol=math.inf)
    term_mean, term_se = estimate_terminal(spec, dr.n_paths, cfg.seed)
    weight = float(case.system.h[lp.q] * lp.product_form.alpha[lp.q])
    value = float(sol.value(dr.z0)) if case.zstar is None else None

    out_dir = _ensure_outdir(cfg)
    outputs = ["diffusion.json"]
    if isinstance(kind, Switched):
        kind_d = {"kind": "switched", "b_low": kind.b_low, "sigma_low": kind.sigma_low,
                  "b_high": kind.b_high, "sigma_high": kind.sigma_high, "zstar": kind.zstar}
    else:
        kind_d = {"kind": "rbm", "b": kind.b, "sigma": kind.sigma}
    result = {
        "case": case.name,
        "coefficients": kind_d,
        "z0": dr.z0,
        "dt": dr.dt,
        "horizon": spec.horizon,
        "scheme": dr.scheme,
        "n_paths": dr.n_paths,
        "cost": {"estimate": cost.estimate, "se": cost.std_error, "tail_bound": cost.tail_bound},
        "cost_weighted": {"estimate": weight * cost.estimate, "se": weight * cost.std_error},
        "terminal": {"mean": term_mean, "se": term_se},
        "value_closed_form": value,
        "value_closed_form_weighted": None if value is None else weight * value,
    }
    _write_json(os.path.join(out_dir, "diffusion.json"), result)
    if dr.emit_path:
        path = simulate_diffusion(spec, cfg.seed)
        rows = zip(path.times.tolist(), path.z.tolist(), path.l.tolist())
        _write_csv(os.path.join(out_dir, "path.csv"), ("t", "z", "l"), rows)
        outputs.append("path.csv")
    _write_json(os.path.join(out_dir, "manifest.json"),
                _manifest(cfg, "diffusion", outputs + ["manifest.json"]))
    print(f"diffusion: cost {cost.estimate:.6g} +- {cost.std_error:.3g} "
          f"over {dr.n_paths} paths -> {out_dir}/diffusion.json")
    return 0


def cmd_experiment(cfg: ConfigFile) -> int:
    if cfg.ladder is None:
        raise ConfigError("ladder", "required section missing for this command")
    out_dir = _ensure_outdir(cfg)
    outputs = []
    for case in cfg.cases:
        if case.zstar is not None:
            raise ConfigError("policy.zstar", "experiment always uses the solved switching point")
        dists = case_distributions(case)
        report = ao_experiment(
            cfg.ladder,
            case.system,
            case.policy,
            arrival_dists=dists[0],
            service_dists=dists[1],
            seed=cfg.seed,
            m_moment=cfg.m_moment,
            a_bar=cfg.a_bar,
        )
        jname, cname = f"report-{case.name}.json", f"report-{case.name}.csv"
        _write_json(os.path.join(out_dir, jname), report.to_dict())
        _write_csv(os.path.join(out_dir, cname),
                   ("n", "statistic", "estimate", "se"), report.csv_rows())
        outputs += [jname, cname]
        last = report.levels[-1]
        print(f"case {case.name}: policy {report.policy}, v0 {report.v0:.6g}, "
              f"cost at n={last.n}: {last.cost:.6g} +- {last.cost_se:.3g}")
    _write_json(os.path.join(out_dir, "manifest.json"),
                _manifest(cfg, "experiment", outputs + ["manifest.json"]))
    return 0


def cmd_dump_value_grid(cfg: ConfigFile) -> int:
    if cfg.value_grid is None:
        raise ConfigError("value_grid", "required section missing for this command")
    case = cfg.single_case
    lp = analyze_lp(case.system)
    sol = solve_wcp(case.system, lp)
    g = cfg.value_grid
    if g.spacing == "log":
        xs = np.concatenate([[0.0], np.geomspace(g.x_max / 1000.0, g.x_max, g.points - 1)])
    else:
        xs = np.linspace(0.0, g.x_max, g.points)
    vals = np.array([float(sol.value(x)) for x in xs])
    weight = float(case.system.h[lp.q] * lp.product_form.alpha[lp.q])

    out_dir = _ensure_outdir(cfg)
    _write_csv(os.path.join(out_dir, "value_grid.csv"),
               ("x", "value", "value_weighted"),
               zip(xs.tolist(), vals.tolist(), (weight * vals).tolist()))
    _write_json(os.path.join(out_dir, "manifest.json"),
                _manifest(cfg, "dump-value-grid", ["value_grid.csv", "manifest.json"]))
    zs = "none" if sol.zstar is None else f"{sol.zstar:.12g}"
    print(f"value grid: {g.points} points to x={g.x_max} (zstar {zs}, v0 {sol.v0:.12g}) "
          f"-> {out_dir}/value_grid.csv")
    return 0


_COMMANDS = {
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "diffusion": cmd_diffusion,
    "experiment": cmd_experiment,
    "dump-value-grid": cmd_dump_value_grid,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pss-lab",
        description="Two-class two-server parallel system laboratory: "
                    "allocation analysis, workload control, simulation, experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "analyze": "print the allocation structure and workload control solution as JSON",
        "simulate": "run prelimit replications and write records",
        "diffusion": "Monte Carlo estimates for the limiting reflected diffusion",
        "experiment": "run the n-ladder convergence experiment (one report per case)",
        "dump-value-grid": "tabulate the workload value function to CSV",
    }
    for name in _COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("config", help="path to a JSON config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's master seed")
        p.add_argument("--output-dir", default=None,
                       help="override the config's output directory")
    args = parser.parse_args(argv)
    try:
        cfg = parse_config_file(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed", "must be >= 0")
            cfg = dataclasses.replace(cfg, seed=args.seed)
        if args.output_dir is not None:
            cfg = dataclasses.replace(cfg, output_dir=args.output_dir)
        return _COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except PssLabError as e:
        print(f"refused: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
