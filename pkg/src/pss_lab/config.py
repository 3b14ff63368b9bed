"""Configuration schema for the command-line surface.

Configs are JSON objects validated against a fixed schema: unknown keys
are rejected, every error names the offending path (ConfigError), and all
numeric constraints that do not depend on derived quantities are checked
here.  Constraints that need analysis (a_bar interval, dual-mode z*) are
enforced by the modules that consume the values.

Distribution entries must reproduce the system's configured squared
coefficients of variation; otherwise the simulated primitives would not
match the diffusion coefficients the system is judged against.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

from .des import POLICY_NAMES
from .distributions import FAMILIES
from .errors import ConfigError
from .experiments import LadderConfig, default_distributions
from .params import SystemParams
from .serialize import dist_from_dict

__all__ = [
    "CaseSpec",
    "ConfigFile",
    "DiffusionRunSpec",
    "GridSpec",
    "SimulateSpec",
    "case_distributions",
    "config_hash",
    "parse_config",
    "parse_config_file",
]

_SCHEMES = ("bridge", "projection")
_POLICIES = ("auto",) + POLICY_NAMES


def _err(path: str, msg: str):
    raise ConfigError(path, msg)


def _sub(path: str, key) -> str:
    if isinstance(key, int):
        return f"{path}[{key}]"
    return f"{path}.{key}" if path else str(key)


def _check_keys(d, path: str, allowed, required=()):
    if not isinstance(d, dict):
        _err(path or "<root>", f"expected an object, got {type(d).__name__}")
    for k in d:
        if k not in allowed:
            _err(_sub(path, k), "unknown key")
    for k in required:
        if k not in d:
            _err(_sub(path, k), "required key missing")


def _num(v, path: str, *, gt=None, ge=None, lt=None) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _err(path, f"expected a number, got {type(v).__name__}")
    if gt is not None and not v > gt:
        _err(path, f"must be > {gt}, got {v}")
    if ge is not None and not v >= ge:
        _err(path, f"must be >= {ge}, got {v}")
    if lt is not None and not v < lt:
        _err(path, f"must be < {lt}, got {v}")
    return float(v)


def _int(v, path: str, *, ge=None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        _err(path, f"expected an integer, got {type(v).__name__}")
    if ge is not None and v < ge:
        _err(path, f"must be >= {ge}, got {v}")
    return v


def _bool(v, path: str) -> bool:
    if not isinstance(v, bool):
        _err(path, f"expected a boolean, got {type(v).__name__}")
    return v


def _str(v, path: str, choices=None) -> str:
    if not isinstance(v, str):
        _err(path, f"expected a string, got {type(v).__name__}")
    if choices is not None and v not in choices:
        _err(path, f"expected one of {list(choices)}, got {v!r}")
    return v


def _vec2(v, path: str) -> list:
    if not isinstance(v, list) or len(v) != 2:
        _err(path, "expected a list of 2 numbers")
    return [_num(x, _sub(path, i)) for i, x in enumerate(v)]


def _mat22(v, path: str) -> list:
    if not isinstance(v, list) or len(v) != 2:
        _err(path, "expected a 2x2 matrix (list of 2 rows)")
    return [_vec2(row, _sub(path, i)) for i, row in enumerate(v)]


_SYSTEM_KEYS = ("lam", "mu", "lam_hat", "mu_hat", "c2_arrival", "c2_service", "gamma", "h")


def _system(d, path: str) -> SystemParams:
    _check_keys(d, path, _SYSTEM_KEYS, required=("lam", "mu"))
    kw = {}
    for key in ("lam", "lam_hat", "c2_arrival", "h"):
        if key in d:
            kw[key] = _vec2(d[key], _sub(path, key))
    for key in ("mu", "mu_hat", "c2_service"):
        if key in d:
            kw[key] = _mat22(d[key], _sub(path, key))
    if "gamma" in d:
        kw["gamma"] = _num(d["gamma"], _sub(path, "gamma"), gt=0)
    try:
        return SystemParams(**kw)
    except ValueError as e:
        _err(path, str(e))


def _dist(d, path: str):
    if not isinstance(d, dict):
        _err(path, f"expected an object, got {type(d).__name__}")
    family = d.get("family")
    if family is None:
        _err(_sub(path, "family"), "required key missing")
    if family not in FAMILIES:
        _err(_sub(path, "family"), f"expected one of {sorted(FAMILIES)}, got {family!r}")
    _, keys = FAMILIES[family]
    _check_keys(d, path, ("family",) + keys, required=("family",) + keys)
    for k in keys:
        _num(d[k], _sub(path, k), gt=0)
    try:
        return dist_from_dict(d)
    except ValueError as e:
        _err(path, str(e))


def _distributions(d, path: str, params: SystemParams):
    _check_keys(d, path, ("arrival", "service"), required=("arrival", "service"))
    arr_raw = d["arrival"]
    if not isinstance(arr_raw, list) or len(arr_raw) != 2:
        _err(_sub(path, "arrival"), "expected a list of 2 distribution objects")
    svc_raw = d["service"]
    if not isinstance(svc_raw, list) or len(svc_raw) != 2:
        _err(_sub(path, "service"), "expected a 2x2 nested list of distribution objects")
    arr = []
    for i, spec in enumerate(arr_raw):
        p = _sub(_sub(path, "arrival"), i)
        dist = _dist(spec, p)
        want = float(params.c2_arrival[i])
        if abs(dist.c2 - want) > 1e-9:
            _err(p, f"SCV {dist.c2} does not match system.c2_arrival[{i}] = {want}")
        arr.append(dist)
    svc = []
    for i, row in enumerate(svc_raw):
        if not isinstance(row, list) or len(row) != 2:
            _err(_sub(_sub(path, "service"), i), "expected a list of 2 distribution objects")
        out_row = []
        for k, spec in enumerate(row):
            p = _sub(_sub(_sub(path, "service"), i), k)
            dist = _dist(spec, p)
            want = float(params.c2_service[i, k])
            if abs(dist.c2 - want) > 1e-9:
                _err(p, f"SCV {dist.c2} does not match system.c2_service[{i}][{k}] = {want}")
            out_row.append(dist)
        svc.append(tuple(out_row))
    return tuple(arr), tuple(svc)


@dataclass(frozen=True)
class SimulateSpec:
    n: int
    horizon: float
    replications: int = 1
    sample_period: float | None = None
    snapshot_t: float | None = None
    log_events: bool = False
    arrival_cap: int | None = None
    eps_fidelity: float | None = None


def _simulate(d, path: str) -> SimulateSpec:
    _check_keys(
        d, path,
        ("n", "horizon", "replications", "sample_period", "snapshot_t",
         "log_events", "arrival_cap", "eps_fidelity"),
        required=("n", "horizon"),
    )
    kw = {
        "n": _int(d["n"], _sub(path, "n"), ge=1),
        "horizon": _num(d["horizon"], _sub(path, "horizon"), gt=0),
    }
    if "replications" in d:
        kw["replications"] = _int(d["replications"], _sub(path, "replications"), ge=1)
    if "sample_period" in d:
        kw["sample_period"] = _num(d["sample_period"], _sub(path, "sample_period"), gt=0)
    if "snapshot_t" in d:
        kw["snapshot_t"] = _num(d["snapshot_t"], _sub(path, "snapshot_t"), ge=0)
    if "log_events" in d:
        kw["log_events"] = _bool(d["log_events"], _sub(path, "log_events"))
    if "arrival_cap" in d:
        kw["arrival_cap"] = _int(d["arrival_cap"], _sub(path, "arrival_cap"), ge=0)
    if "eps_fidelity" in d:
        kw["eps_fidelity"] = _num(d["eps_fidelity"], _sub(path, "eps_fidelity"), gt=0)
    return SimulateSpec(**kw)


@dataclass(frozen=True)
class DiffusionRunSpec:
    z0: float = 0.0
    dt: float = 1e-3
    horizon: float | None = None
    scheme: str = "bridge"
    n_paths: int = 10000
    emit_path: bool = False


def _diffusion(d, path: str) -> DiffusionRunSpec:
    _check_keys(d, path, ("z0", "dt", "horizon", "scheme", "n_paths", "emit_path"))
    kw = {}
    if "z0" in d:
        kw["z0"] = _num(d["z0"], _sub(path, "z0"), ge=0)
    if "dt" in d:
        kw["dt"] = _num(d["dt"], _sub(path, "dt"), gt=0)
    if "horizon" in d:
        kw["horizon"] = _num(d["horizon"], _sub(path, "horizon"), gt=0)
    if "scheme" in d:
        kw["scheme"] = _str(d["scheme"], _sub(path, "scheme"), choices=_SCHEMES)
    if "n_paths" in d:
        kw["n_paths"] = _int(d["n_paths"], _sub(path, "n_paths"), ge=1)
    if "emit_path" in d:
        kw["emit_path"] = _bool(d["emit_path"], _sub(path, "emit_path"))
    return DiffusionRunSpec(**kw)


@dataclass(frozen=True)
class GridSpec:
    x_max: float
    points: int = 200
    spacing: str = "linear"


def _value_grid(d, path: str) -> GridSpec:
    _check_keys(d, path, ("x_max", "points", "spacing"), required=("x_max",))
    kw = {"x_max": _num(d["x_max"], _sub(path, "x_max"), gt=0)}
    if "points" in d:
        kw["points"] = _int(d["points"], _sub(path, "points"), ge=2)
    if "spacing" in d:
        kw["spacing"] = _str(d["spacing"], _sub(path, "spacing"), choices=("linear", "log"))
    return GridSpec(**kw)


def _ladder(d, path: str) -> LadderConfig:
    _check_keys(
        d, path,
        ("n_values", "replications", "horizon", "eps_fidelity", "snapshot_t",
         "confidence", "tail_tol", "ks_paths", "verify_replays"),
        required=("n_values",),
    )
    raw_ns = d["n_values"]
    if not isinstance(raw_ns, list) or not raw_ns:
        _err(_sub(path, "n_values"), "expected a non-empty list of integers")
    ns = tuple(
        _int(v, _sub(_sub(path, "n_values"), i), ge=1) for i, v in enumerate(raw_ns)
    )
    kw = {"n_values": ns}
    if "replications" in d:
        kw["replications"] = _int(d["replications"], _sub(path, "replications"), ge=1)
    for key in ("horizon", "eps_fidelity", "tail_tol"):
        if key in d:
            kw[key] = _num(d[key], _sub(path, key), gt=0)
    if "snapshot_t" in d:
        kw["snapshot_t"] = _num(d["snapshot_t"], _sub(path, "snapshot_t"), ge=0)
    if "confidence" in d:
        kw["confidence"] = _num(d["confidence"], _sub(path, "confidence"), gt=0, lt=1)
    if "ks_paths" in d:
        kw["ks_paths"] = _int(d["ks_paths"], _sub(path, "ks_paths"), ge=2)
    if "verify_replays" in d:
        kw["verify_replays"] = _int(d["verify_replays"], _sub(path, "verify_replays"), ge=0)
    try:
        return LadderConfig(**kw)
    except ValueError as e:
        _err(path, str(e))


@dataclass(frozen=True)
class CaseSpec:
    """One named instance of a multi-case experiment."""

    name: str
    system: SystemParams
    policy: str = "auto"
    zstar: float | None = None
    distributions: tuple | None = None


@dataclass(frozen=True)
class ConfigFile:
    """Parsed and validated configuration.

    `cases` always has at least one entry; single-system configs become
    one case named "default".  `raw` keeps the original JSON object so
    the manifest can hash exactly what the user wrote.
    """

    cases: tuple[CaseSpec, ...]
    m_moment: float | None
    a_bar: float | None
    ladder: LadderConfig | None
    simulate: SimulateSpec | None
    diffusion: DiffusionRunSpec
    value_grid: GridSpec | None
    seed: int
    output_dir: str
    raw: dict

    @property
    def single_case(self) -> CaseSpec:
        if len(self.cases) != 1:
            raise ConfigError("cases", "this command works on exactly one system")
        return self.cases[0]


_TOP_KEYS = (
    "system", "scaling", "policy", "distributions", "ladder",
    "simulate", "diffusion", "value_grid", "cases", "seed", "output_dir",
)


def _policy(d, path: str) -> tuple[str, float | None]:
    _check_keys(d, path, ("name", "zstar"))
    name = "auto"
    zstar = None
    if "name" in d:
        name = _str(d["name"], _sub(path, "name"), choices=_POLICIES)
    if "zstar" in d:
        zstar = _num(d["zstar"], _sub(path, "zstar"), gt=0)
    return name, zstar


def parse_config(d: dict) -> ConfigFile:
    _check_keys(d, "", _TOP_KEYS)

    top_system = _system(d["system"], "system") if "system" in d else None
    top_policy, top_zstar = _policy(d["policy"], "policy") if "policy" in d else ("auto", None)
    top_dists = None
    if "distributions" in d:
        if top_system is None:
            _err("distributions", "needs a top-level system to validate against")
        top_dists = _distributions(d["distributions"], "distributions", top_system)

    if "cases" in d:
        raw_cases = d["cases"]
        if not isinstance(raw_cases, list) or not raw_cases:
            _err("cases", "expected a non-empty list")
        cases = []
        seen = set()
        for idx, cd in enumerate(raw_cases):
            cpath = _sub("cases", idx)
            _check_keys(cd, cpath, ("name", "system", "policy", "distributions"),
                        required=("name",))
            name = _str(cd["name"], _sub(cpath, "name"))
            if name in seen:
                _err(_sub(cpath, "name"), f"duplicate case name {name!r}")
            seen.add(name)
            if "system" in cd:
                system = _system(cd["system"], _sub(cpath, "system"))
            elif top_system is not None:
                system = top_system
            else:
                _err(_sub(cpath, "system"), "required key missing (no top-level system)")
            policy, zstar = (
                _policy(cd["policy"], _sub(cpath, "policy"))
                if "policy" in cd
                else (top_policy, top_zstar)
            )
            if "distributions" in cd:
                dists = _distributions(cd["distributions"], _sub(cpath, "distributions"), system)
            elif "system" in cd:
                dists = None  # different system; top-level streams do not apply
            else:
                dists = top_dists
            cases.append(CaseSpec(name=name, system=system, policy=policy,
                                  zstar=zstar, distributions=dists))
        cases = tuple(cases)
    else:
        if top_system is None:
            _err("system", "required key missing")
        cases = (
            CaseSpec(name="default", system=top_system, policy=top_policy,
                     zstar=top_zstar, distributions=top_dists),
        )

    m_moment = a_bar = None
    if "scaling" in d:
        _check_keys(d["scaling"], "scaling", ("m_moment", "a_bar"))
        if "m_moment" in d["scaling"]:
            m_moment = _num(d["scaling"]["m_moment"], "scaling.m_moment", gt=2)
        if "a_bar" in d["scaling"]:
            a_bar = _num(d["scaling"]["a_bar"], "scaling.a_bar", gt=0, lt=0.5)

    ladder = _ladder(d["ladder"], "ladder") if "ladder" in d else None
    simulate = _simulate(d["simulate"], "simulate") if "simulate" in d else None
    diffusion = _diffusion(d["diffusion"], "diffusion") if "diffusion" in d else DiffusionRunSpec()
    value_grid = _value_grid(d["value_grid"], "value_grid") if "value_grid" in d else None
    seed = _int(d["seed"], "seed", ge=0) if "seed" in d else 0
    output_dir = _str(d["output_dir"], "output_dir") if "output_dir" in d else "out"

    return ConfigFile(
        cases=cases,
        m_moment=m_moment,
        a_bar=a_bar,
        ladder=ladder,
        simulate=simulate,
        diffusion=diffusion,
        value_grid=value_grid,
        seed=seed,
        output_dir=output_dir,
        raw=d,
    )


def parse_config_file(path: str) -> ConfigFile:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        _err(str(path), f"cannot read config: {e}")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        _err(str(path), f"invalid JSON: {e}")
    if not isinstance(d, dict):
        _err(str(path), "top-level JSON value must be an object")
    return parse_config(d)


def config_hash(cfg: ConfigFile) -> str:
    """Hash of the canonicalized raw config (key order independent)."""
    blob = json.dumps(cfg.raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def case_distributions(case: CaseSpec):
    """The case's primitive streams, defaulted from its SCVs when absent."""
    if case.distributions is not None:
        return case.distributions
    return default_distributions(case.system)
