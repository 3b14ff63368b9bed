"""JSON-friendly encodings of the package's result types.

Every to_dict here has a from_dict inverse and the pair round-trips with
exact equality (floats are emitted as-is, never formatted).  Arrays become
nested lists; enums their value strings; the mode case carries a "kind"
discriminator.
"""

from __future__ import annotations

import numpy as np

from .distributions import FAMILIES
from .experiments import ConvergenceReport, LevelResult
from .lp import LpStructure, Mode, ProductForm, Switching
from .params import SystemParams
from .wcp import Dual, HjbClosedForm, Single, WcpCoefficients, WcpSolution

__all__ = [
    "dist_from_dict",
    "dist_to_dict",
    "lp_from_dict",
    "lp_to_dict",
    "params_from_dict",
    "params_to_dict",
    "report_from_dict",
    "report_to_dict",
    "wcp_from_dict",
    "wcp_to_dict",
]


def params_to_dict(params: SystemParams) -> dict:
    return {
        "lam": params.lam.tolist(),
        "lam_hat": params.lam_hat.tolist(),
        "mu": params.mu.tolist(),
        "mu_hat": params.mu_hat.tolist(),
        "c2_arrival": params.c2_arrival.tolist(),
        "c2_service": params.c2_service.tolist(),
        "gamma": params.gamma,
        "h": params.h.tolist(),
    }


def params_from_dict(d: dict) -> SystemParams:
    return SystemParams(
        lam=d["lam"],
        mu=d["mu"],
        lam_hat=d["lam_hat"],
        mu_hat=d["mu_hat"],
        c2_arrival=d["c2_arrival"],
        c2_service=d["c2_service"],
        gamma=d["gamma"],
        h=d["h"],
    )


def _mode_to_dict(mode: Mode) -> dict:
    return {
        "xi": mode.xi.tolist(),
        "nonbasic": list(mode.nonbasic),
        "i1": mode.i1,
        "i2": mode.i2,
        "k1": mode.k1,
        "k2": mode.k2,
    }


def _mode_from_dict(d: dict) -> Mode:
    return Mode(
        xi=np.array(d["xi"], dtype=float),
        nonbasic=tuple(d["nonbasic"]),
        i1=d["i1"],
        i2=d["i2"],
        k1=d["k1"],
        k2=d["k2"],
    )


def lp_to_dict(lp: LpStructure) -> dict:
    return {
        "rho_star": lp.rho_star,
        "alpha": lp.product_form.alpha.tolist(),
        "beta": lp.product_form.beta.tolist(),
        "mode1": _mode_to_dict(lp.mode1),
        "mode2": _mode_to_dict(lp.mode2),
        "switching": lp.switching.value,
        "p": lp.p,
        "q": lp.q,
    }


def lp_from_dict(d: dict) -> LpStructure:
    return LpStructure(
        rho_star=d["rho_star"],
        product_form=ProductForm(
            alpha=np.array(d["alpha"], dtype=float),
            beta=np.array(d["beta"], dtype=float),
        ),
        mode1=_mode_from_dict(d["mode1"]),
        mode2=_mode_from_dict(d["mode2"]),
        switching=Switching(d["switching"]),
        p=d["p"],
        q=d["q"],
    )


def wcp_to_dict(sol: WcpSolution) -> dict:
    if isinstance(sol.case, Single):
        case = {"kind": "single", "active": sol.case.active}
    else:
        case = {"kind": "dual", "low": sol.case.low, "high": sol.case.high}
    hjb = None
    if sol.hjb is not None:
        hjb = {
            "beta_r": sol.hjb.beta_r,
            "rho_r": sol.hjb.rho_r,
            "nu_r": sol.hjb.nu_r,
            "zstar": sol.hjb.zstar,
            "v0": sol.hjb.v0,
        }
    return {
        "b": sol.coeffs.b.tolist(),
        "sigma": sol.coeffs.sigma.tolist(),
        "sigma_A": sol.coeffs.sigma_A.tolist(),
        "sigma_S": sol.coeffs.sigma_S.tolist(),
        "gamma": sol.coeffs.gamma,
        "case": case,
        "hjb": hjb,
        "zstar": sol.zstar,
        "v0": sol.v0,
    }


def wcp_from_dict(d: dict) -> WcpSolution:
    coeffs = WcpCoefficients(
        b=np.array(d["b"], dtype=float),
        sigma=np.array(d["sigma"], dtype=float),
        sigma_A=np.array(d["sigma_A"], dtype=float),
        sigma_S=np.array(d["sigma_S"], dtype=float),
        gamma=d["gamma"],
    )
    c = d["case"]
    if c["kind"] == "single":
        case = Single(active=c["active"])
    elif c["kind"] == "dual":
        case = Dual(low=c["low"], high=c["high"])
    else:
        raise ValueError(f"unknown case kind {c['kind']!r}")
    hjb = None
    if d["hjb"] is not None:
        hjb = HjbClosedForm(**d["hjb"])
    return WcpSolution(coeffs=coeffs, case=case, hjb=hjb, v0=d["v0"])


def report_to_dict(report: ConvergenceReport) -> dict:
    return report.to_dict()


def report_from_dict(d: dict) -> ConvergenceReport:
    levels = tuple(LevelResult(**lv) for lv in d["levels"])
    top = {k: v for k, v in d.items() if k != "levels"}
    return ConvergenceReport(levels=levels, **top)


# constructor parameter name -> dataclass attribute, where they differ
_DIST_ATTRS = {"c2": "c2_value"}


def dist_to_dict(dist) -> dict:
    for family, (cls, keys) in FAMILIES.items():
        if isinstance(dist, cls):
            out = {"family": family}
            for key in keys:
                out[key] = getattr(dist, _DIST_ATTRS.get(key, key))
            return out
    raise ValueError(f"unknown distribution {dist!r}")


def dist_from_dict(d: dict):
    family = d.get("family")
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    cls, keys = FAMILIES[family]
    return cls(*[d[k] for k in keys])
