"""Property suites run by ``gohcert selftest``.

Each property returns its worst observed value and the threshold it is
compared with.  The seed only moves the random points, directions and
random problems; the text report is formatted with ``%.6e`` so that two
runs with the same seed are byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .multipliers import (Multiplier, MultiplierFitError, check_stationarity, costate_samples, fit_multiplier, integral_identity,
                          integrate_costate, lagrangian_function, simpson)
from .problem import ProblemSpec, eval_hamiltonian, lie_bracket
from .random_problems import random_instance, random_poly
from .registry import registry_get, registry_names
from .second_order import (LinearizedSystem, _mr_pointwise, _pencil, assemble_M_R, build_cone, eval_Omega,
                           eval_Omega_many, eval_Q, gamma, goh_transform, linearize, necessary_test,
                           propagate_xi, r_closed_form, sufficient_test)
from .tolerances import Tolerances
from .trajectory import Trajectory, constrained_control, integrate_state, validate_arcs

__all__ = ["PropertyResult", "Case", "run_selftest", "format_report", "PROPERTIES",
           "refinement_values", "refinement_ratios", "lagrangian_ratios"]


@dataclass(frozen=True)
class PropertyResult:
    name: str
    worst: float
    tol: float
    passed: bool
    sense: str = "max"       # "max": worst <= tol; "min": worst >= tol; "range": detail holds the bounds


@dataclass(frozen=True, eq=False)
class Case:
    name: str
    spec: ProblemSpec
    traj: Trajectory
    lam: Multiplier
    lin: LinearizedSystem


def _registry_cases(corrupt: bool) -> tuple[list[Case], dict]:
    """Registry cases with the multiplier fitted on the discrete trajectory
    where a fit exists (so boundary conditions hold to round-off), else the
    known multiplier; also returns the known multipliers."""
    out = []
    known = {}
    for name in registry_names():
        e = registry_get(name)
        traj = e.traj
        if corrupt:
            x = traj.x.copy()
            x[1:] += 1e-3
            traj = Trajectory(traj.t, traj.u, x, traj.arcs)
        s = e.seed
        lam = integrate_costate(e.spec, traj, s.beta, np.array(s.Psi), s.atoms)
        known[name] = lam
        if s.atoms or traj.kind_mask("C").any():
            try:
                lam = fit_multiplier(e.spec, traj).multiplier
            except MultiplierFitError:
                pass
        out.append(Case(name, e.spec, traj, lam, linearize(e.spec, traj)))
    return out, known


def _random_cases(rng: np.random.Generator, count: int) -> list[Case]:
    out = []
    for j in range(count):
        inst = random_instance(rng, N=120)
        out.append(Case(f"random{j}", inst.spec, inst.traj, inst.lam, linearize(inst.spec, inst.traj)))
    return out


def _rel(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b))))) if a.size else 0.0


# -- problem model -------------------------------------------------------------

def _fields(spec: ProblemSpec):
    yield spec.f0, spec.n
    yield spec.f1, spec.n
    yield spec.g, spec.n
    yield spec.phi, 2 * spec.n
    if spec.Phi is not None:
        yield spec.Phi, 2 * spec.n
    yield spec.bracket_01, spec.n
    yield spec.bracket_01_1, spec.n


def prop_jacobian_fd(ctx, rng) -> PropertyResult:
    worst = 0.0
    step = 1e-5
    for case in ctx.cases:
        for poly, nv in _fields(case.spec):
            X = rng.uniform(-2.0, 2.0, (100, nv))
            J = poly.jacobian(X)
            fd = np.empty_like(J)
            for j in range(nv):
                e = np.zeros(nv)
                e[j] = step
                fd[..., j] = (poly(X + e) - poly(X - e)) / (2 * step)
            worst = max(worst, _rel(fd, J))
    return PropertyResult("jacobian_central_differences", worst, 1e-6, worst < 1e-6)


def prop_bracket_exact(ctx, rng) -> PropertyResult:
    bad = 0
    for _ in range(6):
        n = int(rng.integers(1, 5))
        X, Y, Z = (random_poly(rng, n, n, max_deg=2, integer=True) for _ in range(3))
        a, b = (float(c) for c in rng.integers(-4, 5, 2))
        bad += lie_bracket(X, Y) != -lie_bracket(Y, X)
        bad += lie_bracket(a * X + b * Y, Z) != a * lie_bracket(X, Z) + b * lie_bracket(Y, Z)
        bad += lie_bracket(Z, a * X + b * Y) != a * lie_bracket(Z, X) + b * lie_bracket(Z, Y)
    return PropertyResult("lie_bracket_antisymmetry_bilinearity", float(bad), 0.0, bad == 0)


def prop_hamiltonian(ctx, rng) -> PropertyResult:
    worst = 0.0
    for case in ctx.cases:
        spec = case.spec
        for _ in range(10):
            x = rng.uniform(-2.0, 2.0, spec.n)
            p = rng.standard_normal(spec.n)
            u = float(rng.uniform(-2.0, 2.0))
            h, h0, h1 = (eval_hamiltonian(spec, w, x, p) for w in (u, 0.0, 1.0))
            scale = max(1.0, abs(h0.H), abs(h1.H), float(np.max(np.abs(h1.H_xx))), float(np.max(np.abs(h1.H_x))))
            errs = [h.H - (h0.H + u * h.H_u), h.H_u - (h1.H - h0.H),
                    np.max(np.abs(h.H_x - (h0.H_x + u * h.H_ux))), np.max(np.abs(h.H_ux - (h1.H_x - h0.H_x))),
                    np.max(np.abs(h.H_xx - h.H_xx.T)),
                    np.max(np.abs(h.H_xx - (h0.H_xx + u * (h1.H_xx - h0.H_xx)))),
                    h.H_u - float(p @ spec.f1(x))]
            worst = max(worst, max(abs(float(e)) for e in errs) / scale)
    return PropertyResult("hamiltonian_identities", worst, 1e-12, worst <= 1e-12)


# -- trajectory and arcs -------------------------------------------------------

def prop_reintegration(ctx, rng) -> PropertyResult:
    worst = 0.0
    for case in ctx.registry:
        t = case.traj
        x = integrate_state(case.spec, t.u, t.x[0], t.t, t.arcs).x
        worst = max(worst, float(np.max(np.abs(x - t.x) / (1.0 + np.abs(t.x)))))
    return PropertyResult("dynamics_residual_reintegration", worst, 1e-8, worst <= 1e-8)


def prop_feedback(ctx, rng) -> PropertyResult:
    tol = ctx.tol
    bound = 10.0 * tol.tol_g / tol.fo_min
    worst = 0.0
    for case in ctx.registry:
        t = case.traj
        for i in np.flatnonzero(t.kind_mask("C")):
            worst = max(worst, abs(t.u[i] - constrained_control(case.spec, t.x[i], tol.fo_min)))
    return PropertyResult("constraint_arc_feedback_consistency", worst, bound, worst <= bound)


def prop_validate_pure(ctx, rng) -> PropertyResult:
    bad = 0
    for case in ctx.registry:
        before = (case.traj.t.copy(), case.traj.u.copy(), case.traj.x.copy())
        a = validate_arcs(case.spec, case.traj, ctx.tol)
        b = validate_arcs(case.spec, case.traj, ctx.tol)
        same = all(np.array_equal(u, v) for u, v in zip(before, (case.traj.t, case.traj.u, case.traj.x)))
        bad += (a != b) + (not same)
    return PropertyResult("validate_arcs_idempotent_pure", float(bad), 0.0, bad == 0)


# -- multipliers ---------------------------------------------------------------

def prop_integral_identity(ctx, rng) -> PropertyResult:
    worst = 0.0
    for case in ctx.cases:
        V = rng.standard_normal((20, case.traj.N))
        Z0 = rng.standard_normal((20, case.spec.n))
        z, zm = _linstate(case, V, Z0)
        lhs, rhs = integral_identity(case.spec, case.traj, case.lam, V, z, zm)
        worst = max(worst, float(np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(rhs)))))
    return PropertyResult("integral_identity", worst, 1e-6, worst <= 1e-6)


def _linstate(case, V, Z0):
    from .second_order import linearized_state
    return linearized_state(case.spec, case.traj, V, Z0, case.lin)


def lagrangian_ratios(spec: ProblemSpec, traj: Trajectory, lam: Multiplier, v, z0,
                      eps=(1e-1, 1e-2, 1e-3), lin: LinearizedSystem | None = None) -> tuple[list[float], list[float]]:
    """Remainders ``|L(eps) - L(0) - eps int H_u v - eps^2 Q/2| / eps^2`` (largest
    over ``+eps`` and ``-eps``) and their successive ratios."""
    lin = lin or linearize(spec, traj)
    P, NU = costate_samples(spec, traj, lam)
    L0 = lagrangian_function(spec, traj, lam, NU)
    Q = eval_Q(spec, traj, lam, v, z0, lin)
    first = simpson(traj, np.einsum("nsi,nsi->ns", P, lin.f1) * np.asarray(v)[:, None])
    rem = []
    for e in eps:
        vals = []
        for s in (e, -e):
            tp = integrate_state(spec, traj.u + s * v, traj.x[0] + s * np.asarray(z0), traj.t, traj.arcs)
            vals.append(abs(lagrangian_function(spec, tp, lam, NU) - L0 - s * first - 0.5 * s * s * Q) / (s * s))
        rem.append(max(vals))
    return rem, [rem[k] / rem[k + 1] for k in range(len(rem) - 1)]


def prop_lagrangian(ctx, rng) -> PropertyResult:
    worst = np.inf
    for case in ctx.random[:5]:
        v = rng.standard_normal(case.traj.N)
        z0 = rng.standard_normal(case.spec.n)
        s = np.sqrt(np.mean(v ** 2) + z0 @ z0)
        _, ratios = lagrangian_ratios(case.spec, case.traj, case.lam, v / s, z0 / s, lin=case.lin)
        worst = min(worst, min(ratios))
    return PropertyResult("lagrangian_expansion_ratio_per_decade", worst, 3.0, worst >= 3.0, "min")


def prop_nu_nonnegative(ctx, rng) -> PropertyResult:
    worst = np.inf
    for case in ctx.registry:
        if not case.traj.kind_mask("C").any():
            continue
        for lam in (case.lam, ctx.known.get(case.name)):
            if lam is None or not check_stationarity(case.spec, case.traj, lam, ctx.tol.stat_tol).passed:
                continue
            _, NU = costate_samples(case.spec, case.traj, lam)
            worst = min(worst, float(NU[case.traj.kind_mask("C")].min()))
    return PropertyResult("density_nonnegative_on_C", worst, -1e-9, worst >= -1e-9, "min")


# -- second order --------------------------------------------------------------

def prop_goh_inverse(ctx, rng) -> PropertyResult:
    # the two integrations agree up to the RK4 truncation error, which vanishes
    # when f1 is constant (registry) and is O(h^4) otherwise; random problems
    # are therefore checked on a finer grid
    cases = ctx.registry + [Case(f"fine{j}", inst.spec, inst.traj, inst.lam, linearize(inst.spec, inst.traj))
                            for j, inst in enumerate(random_instance(rng, N=480) for _ in range(3))]
    worst = 0.0
    for case in cases:
        V = rng.standard_normal((5, case.traj.N))
        Z0 = rng.standard_normal((5, case.spec.n))
        dirs = goh_transform(case.spec, case.traj, V, Z0, case.lin)
        xi, xim = propagate_xi(case.spec, case.traj, np.stack([d.y for d in dirs]),
                               np.stack([d.xi0 for d in dirs]), case.lin)
        for k, d in enumerate(dirs):
            worst = max(worst, _rel(np.concatenate([xi[k], xim[k]]), np.concatenate([d.xi, d.xi_mid])))
    return PropertyResult("goh_inverse_identity", worst, 1e-9, worst <= 1e-9)


def prop_q_omega(ctx, rng) -> PropertyResult:
    worst = 0.0
    for case in ctx.cases:
        K = 50 if case in ctx.registry else 3
        V = rng.standard_normal((K, case.traj.N))
        Z0 = rng.standard_normal((K, case.spec.n))
        q = eval_Q(case.spec, case.traj, case.lam, V, Z0, case.lin)
        om = eval_Omega_many(case.spec, case.traj, case.lam, goh_transform(case.spec, case.traj, V, Z0, case.lin),
                             lin=case.lin)
        worst = max(worst, float(np.max(np.abs(q - om) / np.maximum(1.0, np.abs(q)))))
    return PropertyResult("Q_equals_Omega", worst, 1e-7, worst <= 1e-7)


def prop_bracket_E(ctx, rng) -> PropertyResult:
    worst = max(case.lin.bracket_error(case.spec) for case in ctx.cases)
    return PropertyResult("E_equals_bracket", worst, 1e-9, worst <= 1e-9)


def prop_R_closed_form(ctx, rng) -> PropertyResult:
    worst = 0.0
    changed = 0
    for case in ctx.cases:
        f = assemble_M_R(case.spec, case.traj, case.lam, case.lin)
        worst = max(worst, _rel(f.R, f.R_cf))
        # perturb u pointwise, keep x, p, nu fixed
        du = rng.standard_normal(f.nu.shape)
        u = np.broadcast_to(case.traj.u[:, None], f.nu.shape) + du
        *_, R2, Rcf2 = _mr_pointwise(case.spec, u, case.lin.x, f.p, f.nu)
        worst = max(worst, _rel(R2, Rcf2))
        changed += int(not np.array_equal(Rcf2, r_closed_form(case.spec, case.lin.x, f.p, f.nu)))
        changed += int(not np.array_equal(Rcf2, f.R_cf))
    return PropertyResult("R_assembly_equals_closed_form", worst + changed, 1e-8, worst <= 1e-8 and changed == 0)


def prop_witness(ctx, rng) -> PropertyResult:
    worst = 0.0
    for case in ctx.registry:
        cone = build_cone(case.spec, case.traj, [case.lam], "PS2", case.lin)
        if cone.dim == 0:
            continue
        Om, vals, vecs = _pencil(case.spec, case.traj, case.lam, cone, case.lin)
        for j in (0, int(rng.integers(cone.dim))):
            c = vecs[:, j]
            d = cone.direction(c)
            ray = float(c @ Om @ c) / float(c @ cone.gram @ c)
            direct = eval_Omega(case.spec, case.traj, case.lam, d, lin=case.lin) / gamma(case.traj, d)
            worst = max(worst, abs(ray - direct))
        nec = necessary_test(case.spec, case.traj, [case.lam], cone, ctx.tol.nec_tol, case.lin)
        if nec.witness is not None:
            direct = eval_Omega(case.spec, case.traj, case.lam, nec.witness, lin=case.lin) / gamma(case.traj, nec.witness)
            worst = max(worst, abs(nec.witness_omega / nec.witness_gamma - direct))
    return PropertyResult("witness_rayleigh_consistency", worst, 1e-9, worst <= 1e-9)


def refinement_values(levels=(20, 40, 80, 160, 320)) -> dict[str, list[float]]:
    """mu_min (SRN), rho_min (SR1) and the C-arc density integral (CBQ) on
    successively halved grids."""
    out: dict[str, list[float]] = {"mu_min": [], "rho_min": [], "nu_path": []}
    for N in levels:
        e = registry_get("SRN", N)
        lam = integrate_costate(e.spec, e.traj, e.seed.beta, np.array(e.seed.Psi), e.seed.atoms)
        cone = build_cone(e.spec, e.traj, [lam], "PS2")
        out["mu_min"].append(necessary_test(e.spec, e.traj, [lam], cone).value)
        e = registry_get("SR1", N)
        lam = integrate_costate(e.spec, e.traj, e.seed.beta, np.array(e.seed.Psi), e.seed.atoms)
        out["rho_min"].append(sufficient_test(e.spec, e.traj, [lam], build_cone(e.spec, e.traj, [lam], "Pstar2")).rho_min)
        e = registry_get("CBQ", 2 * N)
        lam = integrate_costate(e.spec, e.traj, e.seed.beta, np.array(e.seed.Psi), e.seed.atoms)
        _, NU = costate_samples(e.spec, e.traj, lam)
        out["nu_path"].append(simpson(e.traj, NU * e.traj.kind_mask("C")[:, None]))
    return out


def refinement_ratios(values) -> list[float]:
    d = np.abs(np.diff(np.asarray(values, dtype=float)))
    return [float(d[k] / d[k + 1]) for k in range(d.size - 1)]


def prop_refinement(ctx, rng) -> PropertyResult:
    vals = refinement_values()
    ratios = [r for v in vals.values() for r in refinement_ratios(v)]
    lo, hi = min(ratios), max(ratios)
    ok = 2.5 <= lo and hi <= 6.0
    # report the ratio farthest from the centre of [2.5, 6]
    worst = lo if abs(lo - 4.25) >= abs(hi - 4.25) else hi
    return PropertyResult("grid_refinement_ratio", worst, 2.5, ok, "range")


# -- report --------------------------------------------------------------------

def prop_report_roundtrip(ctx, rng) -> PropertyResult:
    from .report import CertificationReport, exit_code_for, run_certify
    bad = 0
    rep, code = run_certify(registry="REG1", order="second")
    text = rep.to_json()
    bad += CertificationReport.from_json(text).to_json() != text
    bad += code != exit_code_for(rep.requested_verdicts)
    return PropertyResult("report_roundtrip_and_exit_code", float(bad), 0.0, bad == 0)


PROPERTIES: list[Callable] = [
    prop_jacobian_fd, prop_bracket_exact, prop_hamiltonian,
    prop_reintegration, prop_feedback, prop_validate_pure,
    prop_integral_identity, prop_lagrangian, prop_nu_nonnegative,
    prop_goh_inverse, prop_q_omega, prop_bracket_E, prop_R_closed_form, prop_witness, prop_refinement,
    prop_report_roundtrip,
]


@dataclass(eq=False)
class _Context:
    registry: list[Case]
    random: list[Case]
    known: dict
    tol: Tolerances

    @property
    def cases(self) -> list[Case]:
        return self.registry + self.random


def run_selftest(seed: int = 0, corrupt: bool = False, n_random: int = 10) -> list[PropertyResult]:
    """Run every property suite; deterministic given ``seed``."""
    rng = np.random.default_rng(seed)
    registry, known = _registry_cases(corrupt)
    ctx = _Context(registry, _random_cases(rng, n_random), known, Tolerances())
    return [prop(ctx, rng) for prop in PROPERTIES]


def format_report(results: list[PropertyResult], seed: int) -> str:
    lines = [f"gohcert selftest seed={seed}",
             f"{'property':42s} {'worst':>14s} {'threshold':>14s}  verdict"]
    for r in results:
        op = {"max": "<=", "min": ">=", "range": "in"}[r.sense]
        thr = "[2.5, 6]" if r.sense == "range" else f"{op} {r.tol:.6e}"
        lines.append(f"{r.name:42s} {r.worst:14.6e} {thr:>17s}  {'PASS' if r.passed else 'FAIL'}")
    n_ok = sum(r.passed for r in results)
    lines.append(f"summary: {n_ok}/{len(results)} properties pass")
    return "\n".join(lines) + "\n"
