"""Certification pipeline and its JSON report.

Report schema (``schema_version`` 1), all keys sorted, two-space indent,
non-finite floats written as the strings ``"inf"``, ``"-inf"``, ``"nan"``::

    {
      "schema_version": 1,
      "order": "first" | "second" | "sufficient",
      "provenance": {tool, version, inputs: {path: sha256}, registry, grid, tolerances, profile, notes},
      "stages": {name: {...numeric evidence...}},
      "verdicts": {name: {"verdict": ..., "requested": bool, "evidence": {...}}},
      "exit_code": int
    }

The exit code is 0 iff every requested verdict is PASS or VACUOUS.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .io import file_digest, load_multiplier, load_problem, load_trajectory
from .multipliers import (Multiplier, MultiplierFitError, check_boundary, check_jumps, check_nontrivial,
                          check_stationarity, check_strict_complementarity, check_weak_complementarity,
                          fit_multiplier, integrate_costate)
from .problem import ProblemSpec
from .registry import DEFAULT_N, registry_get
from .second_order import (_mr_pointwise, assemble_M_R, build_cone, eval_Omega, eval_Q, goh_transform,
                           linearize, necessary_test, sufficient_test)
from .tolerances import ENV_VAR, Tolerances, default_tolerances
from .trajectory import Trajectory, check_first_order, control_limits, dynamics_residual, validate_arcs

__all__ = [
    "SCHEMA_VERSION",
    "VERDICTS",
    "ORDERS",
    "CertificationReport",
    "exit_code_for",
    "run_certify",
    "write_csv",
    "known_multiplier",
]

SCHEMA_VERSION = 1
VERDICTS = ("PASS", "FAIL", "VACUOUS", "NOT_CERTIFIED")
ORDERS = ("first", "second", "sufficient")
_OK = ("PASS", "VACUOUS")


def exit_code_for(verdicts: Mapping[str, str]) -> int:
    """0 iff every verdict is PASS or VACUOUS, else 1."""
    for v in verdicts.values():
        if v not in VERDICTS:
            raise ValueError(f"unknown verdict {v!r}")
    return 0 if all(v in _OK for v in verdicts.values()) else 1


def _clean(obj):
    """JSON-ready copy: numpy scalars and arrays to Python, non-finite floats to strings."""
    if isinstance(obj, Mapping):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    return obj


@dataclass
class CertificationReport:
    data: dict

    def to_json(self) -> str:
        return json.dumps(_clean(self.data), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CertificationReport":
        data = json.loads(text)
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema_version {data.get('schema_version')!r}")
        return cls(data)

    @property
    def verdicts(self) -> dict[str, str]:
        return {k: v["verdict"] for k, v in self.data["verdicts"].items()}

    @property
    def requested_verdicts(self) -> dict[str, str]:
        return {k: v["verdict"] for k, v in self.data["verdicts"].items() if v["requested"]}

    @property
    def exit_code(self) -> int:
        return exit_code_for(self.requested_verdicts)


class _Builder:
    def __init__(self):
        self.stages: dict = {}
        self.verdicts: dict = {}

    def verdict(self, name: str, verdict: str, requested: bool = True, **evidence):
        if verdict not in VERDICTS:
            raise ValueError(verdict)
        self.verdicts[name] = {"verdict": verdict, "requested": requested, "evidence": evidence}


def _finding_dict(f) -> dict:
    return {"kind": f.kind, "severity": f.severity, "message": f.message,
            "t": f.t if f.t is not None else "nan", "value": f.value if f.value is not None else "nan"}


def _resolve_inputs(problem, trajectory, registry, N):
    prov = {"inputs": {}, "registry": None, "notes": []}
    seed = None
    if registry is not None:
        entry = registry_get(registry, N)
        spec, traj, seed = entry.spec, entry.traj, entry.seed
        prov["registry"] = entry.name
    else:
        if problem is None or trajectory is None:
            raise ValueError("either a registry name or both a problem and a trajectory file are required")
        spec = load_problem(problem)
        traj = load_trajectory(trajectory)
        prov["inputs"][str(problem)] = file_digest(problem)
        prov["inputs"][str(trajectory)] = file_digest(trajectory)
        if N is not None and N != traj.N:
            prov["notes"].append(f"grid size {N} ignored: the trajectory file fixes N = {traj.N}")
    return spec, traj, seed, prov


def known_multiplier(spec: ProblemSpec, traj: Trajectory, seed, tol: Tolerances | None = None) -> Multiplier:
    """The known multiplier of a registry instance, refined on the discrete
    trajectory by a fit started from it (the closed-form values carry the
    O(step^2) error of the sampled trajectory); falls back to the closed form."""
    try:
        return fit_multiplier(spec, traj, seed=seed, tol=tol).multiplier
    except MultiplierFitError:
        return integrate_costate(spec, traj, seed.beta, np.array(seed.Psi), seed.atoms)


def _collect_multipliers(spec, traj, seed, paths, fit, tol, prov):
    lams: list[Multiplier] = []
    records = []
    for path in paths:
        lams.append(load_multiplier(path, traj))
        prov["inputs"][str(path)] = file_digest(path)
        records.append({"source": str(path)})
    if not paths and not fit and seed is not None:
        lams.append(known_multiplier(spec, traj, seed, tol))
        records.append({"source": "registry"})
    if fit or (not lams):
        try:
            res = fit_multiplier(spec, traj, tol=tol)
            lams.append(res.multiplier)
            records.append({"source": "fit", "fit_residual": res.residual, "fit_iterations": res.iterations})
        except MultiplierFitError as exc:
            rec = {"source": "fit", "error": str(exc)}
            if exc.result is not None:
                rec["fit_residual"] = exc.result.residual
            records.append(rec)
    return lams, records


def _multiplier_record(spec, traj, lam, tol) -> tuple[dict, bool]:
    bnd = check_boundary(spec, traj, lam)
    scale = max(1.0, float(np.max(np.abs(lam.p_plus))))
    ok = (check_nontrivial(lam) and bnd["beta_nonnegative"] and bnd["atoms_nonnegative"]
          and bnd["p0_residual"] <= tol.stat_tol * scale and bnd["pT_residual"] <= tol.stat_tol * scale
          and bnd["psi_sign_violation"] <= tol.stat_tol and bnd["psi_complementarity"] <= tol.stat_tol)
    rec = {"beta": lam.beta, "Psi": list(lam.Psi), "atoms": [{"t": t, "mass": m} for t, m in lam.atoms],
           "nontrivial": check_nontrivial(lam), **bnd, "valid": ok}
    return rec, ok


def _consistency_stage(spec, traj, lams, lin, n_dirs: int = 5) -> dict:
    """E, R and Q = Omega checks on a few fixed pseudo-random directions."""
    rng = np.random.default_rng(0)
    e_err = lin.bracket_error(spec)
    r_err = 0.0
    q_err = 0.0
    for lam in lams:
        fields = assemble_M_R(spec, traj, lam, lin)
        r_err = max(r_err, float(np.max(np.abs(fields.R - fields.R_cf) / np.maximum(1.0, np.abs(fields.R_cf)))))
        for _ in range(n_dirs):
            v = rng.standard_normal(traj.N)
            z0 = rng.standard_normal(spec.n)
            q = eval_Q(spec, traj, lam, v, z0, lin)
            om = eval_Omega(spec, traj, lam, goh_transform(spec, traj, v, z0, lin), fields, lin)
            q_err = max(q_err, abs(q - om) / max(1.0, abs(q)))
    return {"bracket_error": e_err, "R_closed_form_error": r_err, "Q_Omega_max_rel_error": q_err,
            "directions": n_dirs * len(lams)}


def run_certify(problem: str | Path | None = None, trajectory: str | Path | None = None,
                registry: str | None = None, multipliers: Sequence[str | Path] = (), fit: bool = False,
                order: str = "first", N: int | None = None, tol_overrides: Mapping[str, float] | None = None,
                csv_dir: str | Path | None = None) -> tuple[CertificationReport, int]:
    """Run the certification stages up to ``order`` and return the report and exit code.

    Without multiplier files, a registry instance uses its known multiplier
    and a file-based problem gets a fitted one; ``fit`` adds a fitted
    multiplier in any case.
    """
    if order not in ORDERS:
        raise ValueError(f"order must be one of {ORDERS}")
    tol: Tolerances = default_tolerances().with_overrides(dict(tol_overrides or {}))
    spec, traj, seed, prov = _resolve_inputs(problem, trajectory, registry,
                                             N if N is not None else (DEFAULT_N if registry else None))
    b = _Builder()
    lvl = ORDERS.index(order)

    # trajectory stages
    res = dynamics_residual(spec, traj)
    b.stages["dynamics"] = {"max_residual": float(res.max()), "tol": tol.tol_dyn}
    b.verdict("dynamics", "PASS" if res.max() <= tol.tol_dyn else "FAIL", value=float(res.max()), tol=tol.tol_dyn)
    findings = validate_arcs(spec, traj, tol)
    b.stages["arc_validation"] = {"findings": [_finding_dict(f) for f in findings],
                                  "arcs": [{"kind": a.kind, "t_start": a.t_start, "t_end": a.t_end} for a in traj.arcs]}
    errors = [f for f in findings if f.severity == "error"]
    b.verdict("feasibility", "FAIL" if errors else "PASS", errors=len(errors))
    fo = check_first_order(spec, traj, tol.fo_min)
    b.stages["first_order_constraint"] = {"margin": fo.margin, "tol": tol.fo_min, "note": fo.note}
    b.verdict("first_order_constraint", "VACUOUS" if fo.note else ("PASS" if fo.passed else "FAIL"),
              value=fo.margin, tol=tol.fo_min)

    # multipliers
    lams, sources = _collect_multipliers(spec, traj, seed, list(multipliers), fit, tol, prov)
    recs = []
    valid = bool(lams) and not any("error" in s for s in sources)
    for src, lam in zip([s for s in sources if "error" not in s], lams):
        rec, ok = _multiplier_record(spec, traj, lam, tol)
        recs.append({**src, **rec})
        valid &= ok
    recs += [s for s in sources if "error" in s]
    b.stages["multipliers"] = recs
    b.verdict("multiplier_validity", "PASS" if valid else "FAIL", count=len(lams))

    if lams:
        stat = [check_stationarity(spec, traj, lam, tol.stat_tol) for lam in lams]
        b.stages["stationarity"] = [{"worst": s.worst, "tol": s.tol, "per_arc": list(s.per_arc)} for s in stat]
        worst = max(s.worst for s in stat)
        b.verdict("stationarity", "PASS" if all(s.passed for s in stat) else "FAIL",
                  value=worst, tol=max(s.tol for s in stat))
        tables = [check_jumps(spec, traj, lam, tol) for lam in lams]
        b.stages["jump_conditions"] = [[vars(r) for r in tab] for tab in tables]
        rows = [r for tab in tables for r in tab]
        jv = "VACUOUS" if not rows else ("PASS" if all(r.passed for r in rows) else "FAIL")
        b.verdict("jump_conditions", jv, rows=len(rows),
                  max_p_jump_residual=max((r.p_jump_residual for r in rows), default=0.0),
                  max_uHu=max((abs(r.uHu) for r in rows), default=0.0), tol=tol.jump_tol)

    lin = None
    hyp = [f for f in findings if f.severity == "hypothesis"]
    if lvl >= 1 and lams and not errors:
        lin = linearize(spec, traj)
        cons = _consistency_stage(spec, traj, lams, lin)
        b.stages["consistency"] = cons
        ok = cons["bracket_error"] <= 1e-9 and cons["R_closed_form_error"] <= 1e-8 and cons["Q_Omega_max_rel_error"] <= 1e-7
        b.verdict("consistency", "PASS" if ok else "FAIL", **cons)
        cone = build_cone(spec, traj, lams, "PS2", lin)
        nec = necessary_test(spec, traj, lams, cone, tol.nec_tol, lin)
        b.stages["cone"] = {"which": cone.which, "dim": cone.dim, "n_vars": cone.n_vars,
                            "constraints": int(cone.constraints.shape[0]), "terminal_limit": cone.terminal_limit}
        st = {"mu_min": nec.value, "per_multiplier": list(nec.per_multiplier), "note": nec.note}
        if nec.witness is not None:
            st["witness"] = {"omega": nec.witness_omega, "gamma": nec.witness_gamma, "h": nec.witness.h,
                             "xi0": list(nec.witness.xi0), "y_max_abs": float(np.max(np.abs(nec.witness.y)))}
        b.stages["necessary"] = st
        b.verdict("second_order_necessary", nec.verdict, mu_min=nec.value, tol=tol.nec_tol, cone_dim=cone.dim,
                  note=nec.note)
        b.verdict("geometric_hypotheses", "FAIL" if hyp else "PASS", requested=cone.dim > 0,
                  findings=len(hyp), cone_dim=cone.dim)
    elif lvl >= 1:
        b.stages["second_order_skipped"] = "infeasible trajectory or no multiplier"
        b.verdict("second_order_necessary", "FAIL", note="not evaluated")

    if lvl >= 2 and lin is not None:
        sc = check_strict_complementarity(spec, traj, lams, tol.sc_margin)
        wc = check_weak_complementarity(spec, traj, lams, tol.sc_margin, tol.tol_g)
        b.stages["complementarity"] = {"strict": {"margin": sc.margin, "details": list(sc.details)},
                                       "weak": {"margin": wc.margin, "details": list(wc.details)}}
        b.verdict("strict_complementarity", "PASS" if sc.passed else "NOT_CERTIFIED", value=sc.margin, tol=tol.sc_margin)
        b.verdict("weak_complementarity", "PASS" if wc.passed else "NOT_CERTIFIED", value=wc.margin, tol=tol.sc_margin)
        ext = build_cone(spec, traj, lams, "Pstar2", lin)
        suf = sufficient_test(spec, traj, lams, ext, tol.leg_tol, tol.suf_tol, lin)
        b.stages["sufficient"] = {"extended_cone_dim": ext.dim, "alpha_min": suf.alpha_min, "rho_min": suf.rho_min,
                                  "legendre": list(suf.legendre), "coercivity": list(suf.coercivity), "note": suf.note}
        b.verdict("legendre", "PASS" if suf.alpha_min > tol.leg_tol else "NOT_CERTIFIED",
                  alpha_min=suf.alpha_min, tol=tol.leg_tol)
        cv = "VACUOUS" if ext.dim == 0 else ("PASS" if suf.rho_min > tol.suf_tol else "NOT_CERTIFIED")
        b.verdict("coercivity", cv, rho_min=suf.rho_min, tol=tol.suf_tol, cone_dim=ext.dim)
        overall = ("PASS" if suf.verdict == "PASS" and sc.passed and wc.passed and not (hyp and ext.dim > 0)
                   else "NOT_CERTIFIED")
        b.verdict("sufficient", overall, alpha_min=suf.alpha_min, rho_min=suf.rho_min)
    elif lvl >= 2:
        b.verdict("sufficient", "NOT_CERTIFIED", note="second-order stage not evaluated")

    prov.update({"tool": "gohcert", "version": __version__, "tolerances": tol.as_dict(),
                 "profile": os.environ.get(ENV_VAR, "default") or "default",
                 "grid": {"intervals": traj.N, "nodes": traj.N + 1}})
    data = {"schema_version": SCHEMA_VERSION, "order": order, "provenance": prov,
            "stages": b.stages, "verdicts": b.verdicts}
    report = CertificationReport(json.loads(CertificationReport(data).to_json()))
    code = report.exit_code
    report.data["exit_code"] = code
    if csv_dir is not None:
        write_csv(spec, traj, lams, csv_dir)
    return report, code


def _node_values(spec: ProblemSpec, traj: Trajectory, lam: Multiplier, tol: Tolerances | None = None):
    """Per-node one-sided values: right limits, left limits at T."""
    fo_min = (tol or Tolerances()).fo_min
    u_minus, u_plus = control_limits(spec, traj, fo_min)
    u = np.where(np.arange(traj.N + 1) < traj.N, u_plus, u_minus)
    p = lam.p_plus.copy()
    p[-1] = lam.p_minus[-1]
    return u, p


def write_csv(spec: ProblemSpec, traj: Trajectory, lams: Sequence[Multiplier], out_dir: str | Path) -> list[Path]:
    """``nodes.csv`` (and ``nodes_<j>.csv`` for further multipliers) with
    columns t, u, x_i, p_i, nu, g, H_u, R; plus ``fields.csv`` with A, E, M
    and R of the first multiplier."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = spec.n
    written = []
    gv = spec.gval(traj.x)
    f1 = spec.f1(traj.x)
    for j, lam in enumerate(lams):
        u, p = _node_values(spec, traj, lam)
        Hxx, Hux, M, R, R_cf = _mr_pointwise(spec, u, traj.x, p, lam.nu)
        path = out / ("nodes.csv" if j == 0 else f"nodes_{j}.csv")
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "u", *[f"x_{i + 1}" for i in range(n)], *[f"p_{i + 1}" for i in range(n)],
                        "nu", "g", "H_u", "R"])
            for k in range(traj.N + 1):
                w.writerow([repr(float(v)) for v in (traj.t[k], u[k], *traj.x[k], *p[k], lam.nu[k], gv[k],
                                                    p[k] @ f1[k], R[k])])
        written.append(path)
        if j == 0:
            A = spec.A(u, traj.x)
            E = spec.bracket_01(traj.x)
            fpath = out / "fields.csv"
            with fpath.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", *[f"A_{a + 1}{c + 1}" for a in range(n) for c in range(n)],
                            *[f"E_{i + 1}" for i in range(n)], *[f"M_{i + 1}" for i in range(n)], "R", "nu"])
                for k in range(traj.N + 1):
                    w.writerow([repr(float(v)) for v in (traj.t[k], *A[k].ravel(), *E[k], *M[k], R[k], lam.nu[k])])
            written.append(fpath)
    return written
