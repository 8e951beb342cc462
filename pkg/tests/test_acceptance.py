"""Acceptance criteria 1-11, each at its stated tolerance.

Every criterion prints one ``PASS``/``FAIL`` line (collected into the
pytest terminal summary by ``conftest.py``); ``python tests/test_acceptance.py``
prints the same lines without pytest.
"""

import subprocess
import sys

import numpy as np
import pytest

from gohcert.multipliers import (check_jumps, costate_samples, fit_multiplier, integral_identity)
from gohcert.random_problems import random_instance
from gohcert.registry import registry_get, registry_names
from gohcert.report import known_multiplier
from gohcert.second_order import (_mr_pointwise, assemble_M_R, build_cone, eval_Omega_many, eval_Q,
                                  goh_transform, linearize, linearized_state, necessary_test, r_closed_form)
from gohcert.selftest import lagrangian_ratios, refinement_ratios, refinement_values
from gohcert.trajectory import Arc, integrate_state, make_grid

RESULTS = {}


def _record(number, title, passed, detail):
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    RESULTS[number] = line
    print(line)
    return passed


def _registry(N=400):
    out = []
    for name in registry_names():
        e = registry_get(name, N)
        out.append((name, e.spec, e.traj, known_multiplier(e.spec, e.traj, e.seed)))
    return out


def _random(count=20, seed=2024):
    rng = np.random.default_rng(seed)
    return [(f"random{j}", inst.spec, inst.traj, inst.lam)
            for j, inst in enumerate(random_instance(rng, N=120) for _ in range(count))]


# -- criteria ------------------------------------------------------------------

def criterion_1():
    e = registry_get("REG1", 400)
    lam = fit_multiplier(e.spec, e.traj).multiplier
    t = e.traj.t
    p2 = max(np.max(np.abs(lam.p_plus[:, 1] - 1.0)), np.max(np.abs(lam.p_minus[:, 1] - 1.0)))
    inner = (t > 1.0) & (t < 2.0)
    p1 = max(np.max(np.abs(lam.p_plus[inner, 0])), np.max(np.abs(lam.p_minus[inner, 0])))
    atom = abs(lam.terminal_atom() - 1.0)
    err = max(p2, p1, atom)
    return _record(1, "REG1 fitted multiplier", err <= 1e-6,
                   f"|p2-1|={p2:.2e} |p1| on (1,2)={p1:.2e} |atom_T-1|={atom:.2e} (tol 1e-6)")


def criterion_2():
    e = registry_get("REG1", 400)
    lam = fit_multiplier(e.spec, e.traj).multiplier
    t = e.traj.t
    b = t <= 1.0
    # by hand: -p2' = H_x2 = 0 so p2 = 1; -p1' = H_x1 = p2 off C with p1(1) = 0, so p1 = 1 - t
    p1_err = float(np.max(np.abs(lam.p_plus[b, 0] - (1.0 - t[b]))))
    _, NU = costate_samples(e.spec, e.traj, lam)
    c = e.traj.kind_mask("C")
    nu_err = float(np.max(np.abs(NU[c] - 1.0)))
    node_nu = lam.nu[(t > 1.0) & (t < 2.0)]
    nu_err = max(nu_err, float(np.max(np.abs(node_nu - 1.0))))
    err = max(p1_err, nu_err)
    return _record(2, "REG1 derived p1 and nu", err <= 1e-6,
                   f"|p1-(1-t)|={p1_err:.2e} |nu-1|={nu_err:.2e} (tol 1e-6)")


def criterion_3():
    e = registry_get("CB1", 400)
    lam = known_multiplier(e.spec, e.traj, e.seed)
    cone = build_cone(e.spec, e.traj, [lam], "PS2")
    res = necessary_test(e.spec, e.traj, [lam], cone)
    ok = cone.dim == 0 and res.verdict == "VACUOUS"
    return _record(3, "CB1 critical cone", ok, f"dim={cone.dim} verdict={res.verdict}")


def criterion_4():
    e = registry_get("CB1", 400)
    N = 4000
    t = make_grid(2.0, [1.0, 1.5], N)
    mid = 0.5 * (t[:-1] + t[1:])
    u = np.where((mid > 1.0) & (mid < 1.5), -2.0 * (mid - 1.0), -1.0)
    arcs = [Arc("Bminus", 0.0, 1.0), Arc("C", 1.0, 1.5), Arc("Bminus", 1.5, 2.0)]
    traj = integrate_state(e.spec, u, [1.0, 0.0, 0.0], t, arcs)
    k = traj.node_index(1.5)
    x1_err = abs(traj.x[k, 0] + 0.25)
    cost_err = abs(traj.x[-1, 2] - 5.0 / 24.0)
    ok = max(x1_err, cost_err) <= 1e-7
    return _record(4, "CB1 trajectory", ok,
                   f"|x1(3/2)+1/4|={x1_err:.2e} |cost-5/24|={cost_err:.2e} (N={N}, tol 1e-7)")


def criterion_5(registry=None, randoms=None):
    rng = np.random.default_rng(5)
    worst, count = 0.0, 0
    for cases, K in ((registry or _registry(), 50), (randoms or _random(), 5)):
        for _, spec, traj, lam in cases:
            lin = linearize(spec, traj)
            V = rng.standard_normal((K, traj.N))
            Z0 = rng.standard_normal((K, spec.n))
            q = eval_Q(spec, traj, lam, V, Z0, lin)
            om = eval_Omega_many(spec, traj, lam, goh_transform(spec, traj, V, Z0, lin), lin=lin)
            worst = max(worst, float(np.max(np.abs(q - om) / np.maximum(1.0, np.abs(q)))))
            count += K
    return _record(5, "Q = Omega", worst <= 1e-7, f"max rel err {worst:.2e} over {count} directions (tol 1e-7)")


def criterion_6(registry=None, randoms=None):
    rng = np.random.default_rng(6)
    worst = 0.0
    cases = (registry or _registry()) + (randoms or _random())
    for _, spec, traj, lam in cases:
        V = rng.standard_normal((20, traj.N))
        Z0 = rng.standard_normal((20, spec.n))
        z, zm = linearized_state(spec, traj, V, Z0)
        lhs, rhs = integral_identity(spec, traj, lam, V, z, zm)
        worst = max(worst, float(np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(rhs)))))
    return _record(6, "integral identity", worst <= 1e-6,
                   f"max rel err {worst:.2e} over {len(cases)} problems x 20 directions (tol 1e-6)")


def criterion_7(registry=None, randoms=None):
    rng = np.random.default_rng(7)
    e_err = r_err = 0.0
    moved = 0
    for _, spec, traj, lam in (registry or _registry()) + (randoms or _random()):
        lin = linearize(spec, traj)
        e_err = max(e_err, lin.bracket_error(spec))
        f = assemble_M_R(spec, traj, lam, lin)
        scale = max(1.0, float(np.max(np.abs(f.R_cf))))
        r_err = max(r_err, float(np.max(np.abs(f.R - f.R_cf))) / scale)
        u = traj.u[:, None] + rng.standard_normal(f.nu.shape)
        *_, R2, Rcf2 = _mr_pointwise(spec, u, lin.x, f.p, f.nu)
        r_err = max(r_err, float(np.max(np.abs(R2 - Rcf2))) / scale)
        moved += int(not np.array_equal(Rcf2, f.R_cf))
        moved += int(not np.array_equal(r_closed_form(spec, lin.x, f.p, f.nu), f.R_cf))
    ok = e_err <= 1e-9 and r_err <= 1e-8 and moved == 0
    return _record(7, "structural identities", ok,
                   f"E err {e_err:.2e} (1e-9), R err {r_err:.2e} (1e-8), closed form changed {moved}x")


def criterion_8():
    worst, rows = 0.0, 0
    mu_at_1 = None
    for name in registry_names():
        e = registry_get(name, 400)
        lam = known_multiplier(e.spec, e.traj, e.seed)
        for rec in check_jumps(e.spec, e.traj, lam):
            if rec.kind == "endpoint":
                continue
            rows += 1
            worst = max(worst, abs(rec.uHu), rec.p_jump_residual)
            if name == "REG1" and abs(rec.t - 1.0) < 1e-12:
                mu_at_1 = abs(rec.mu_jump)
    ok = worst <= 1e-7 and mu_at_1 is not None and mu_at_1 <= 1e-7
    return _record(8, "jump conditions", ok,
                   f"max |[u][H_u]|, |[p]+[mu]g'| = {worst:.2e} over {rows} junctions; |[mu]| at REG1 t=1 = "
                   f"{mu_at_1 if mu_at_1 is None else f'{mu_at_1:.2e}'} (tol 1e-7)")


def criterion_9(randoms=None):
    rng = np.random.default_rng(9)
    cases = (randoms or _random())[:5]
    worst = np.inf
    for _, spec, traj, lam in cases:
        v = rng.standard_normal(traj.N)
        z0 = rng.standard_normal(spec.n)
        s = np.sqrt(np.mean(v ** 2) + z0 @ z0)
        _, ratios = lagrangian_ratios(spec, traj, lam, v / s, z0 / s)
        worst = min(worst, min(ratios))
    return _record(9, "Lagrangian expansion order", worst >= 3.0,
                   f"smallest per-decade remainder ratio {worst:.2f} over {len(cases)} problems (>= 3)")


def criterion_10():
    vals = refinement_values()
    parts, ok = [], True
    for key, v in vals.items():
        r = refinement_ratios(v)
        ok &= all(2.5 <= x <= 6.0 for x in r)
        parts.append(f"{key} " + "/".join(f"{x:.3f}" for x in r))
    return _record(10, "grid refinement", ok, "; ".join(parts) + " (in [2.5, 6])")


def criterion_11():
    cmd = [sys.executable, "-m", "gohcert.cli", "selftest", "--seed", "0"]
    a = subprocess.run(cmd, capture_output=True, check=False)
    b = subprocess.run(cmd, capture_output=True, check=False)
    ok = a.stdout == b.stdout and len(a.stdout) > 0
    return _record(11, "selftest determinism", ok,
                   f"{len(a.stdout)} bytes, identical={a.stdout == b.stdout}, exit codes {a.returncode}/{b.returncode}")


# -- pytest entry points ---------------------------------------------------------

@pytest.fixture(scope="module")
def registry_cases():
    return _registry()


@pytest.fixture(scope="module")
def random_cases():
    return _random()


def test_criterion_1_reg1_fitted_multiplier():
    assert criterion_1()


def test_criterion_2_reg1_derived_values():
    assert criterion_2()


def test_criterion_3_cb1_cone_degenerate():
    assert criterion_3()


def test_criterion_4_cb1_trajectory():
    assert criterion_4()


def test_criterion_5_q_equals_omega(registry_cases, random_cases):
    assert criterion_5(registry_cases, random_cases)


def test_criterion_6_integral_identity(registry_cases, random_cases):
    assert criterion_6(registry_cases, random_cases)


def test_criterion_7_structural_identities(registry_cases, random_cases):
    assert criterion_7(registry_cases, random_cases)


def test_criterion_8_jump_conditions():
    assert criterion_8()


def test_criterion_9_lagrangian_order(random_cases):
    assert criterion_9(random_cases)


def test_criterion_10_grid_refinement():
    assert criterion_10()


def test_criterion_11_selftest_determinism():
    assert criterion_11()


if __name__ == "__main__":
    reg, rnd = _registry(), _random()
    results = [criterion_1(), criterion_2(), criterion_3(), criterion_4(), criterion_5(reg, rnd),
               criterion_6(reg, rnd), criterion_7(reg, rnd), criterion_8(), criterion_9(rnd),
               criterion_10(), criterion_11()]
    print(f"{sum(results)}/{len(results)} criteria pass")
    sys.exit(0 if all(results) else 1)
