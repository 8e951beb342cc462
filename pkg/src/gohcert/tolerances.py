"""Numerical tolerances used by the certification stages.

A profile is picked with the ``GOHCERT_TOL_PROFILE`` environment variable
(``default``, ``strict`` or ``loose``); individual values can be overridden
on the command line with ``--tol name=value``.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace

ENV_VAR = "GOHCERT_TOL_PROFILE"


@dataclass(frozen=True)
class Tolerances:
    tol_dyn: float = 1e-8        # relative one-step RK4 residual
    tol_g: float = 1e-7          # state-constraint activity on C
    dist_min_rel: float = 1e-3   # distance of u to the bounds on C/S, relative to u_max - u_min
    jump_min: float = 1e-6       # minimal |[u]| at CS/SC junctions
    fo_min: float = 1e-6         # first-order constraint margin |g' f1|
    stat_tol: float = 1e-6       # stationarity of H_u (scaled by |p|)
    jump_tol: float = 1e-7       # jump conditions at junctions
    sc_margin: float = 1e-6      # strict complementarity margin
    nec_tol: float = 1e-8        # negative curvature tolerated by the necessary test
    leg_tol: float = 1e-8        # Legendre margin
    suf_tol: float = 1e-8        # coercivity margin
    fit_tol: float = 1e-6        # multiplier fit residual
    max_iter: int = 100          # Gauss-Newton iterations

    def with_overrides(self, overrides: dict[str, float]) -> "Tolerances":
        known = {f.name: f.type for f in fields(self)}
        clean = {}
        for key, val in overrides.items():
            if key not in known:
                raise KeyError(f"unknown tolerance {key!r}; known: {sorted(known)}")
            clean[key] = int(val) if key == "max_iter" else float(val)
        return replace(self, **clean)

    def as_dict(self) -> dict:
        return asdict(self)


PROFILES = {
    "default": Tolerances(),
    "strict": Tolerances(stat_tol=1e-8, jump_tol=1e-9, fit_tol=1e-8, tol_g=1e-9),
    "loose": Tolerances(tol_dyn=1e-6, tol_g=1e-5, stat_tol=1e-4, jump_tol=1e-5, fit_tol=1e-4),
}


def default_tolerances() -> Tolerances:
    name = os.environ.get(ENV_VAR, "default").strip() or "default"
    if name not in PROFILES:
        raise KeyError(f"{ENV_VAR}={name!r} is not one of {sorted(PROFILES)}")
    return PROFILES[name]
