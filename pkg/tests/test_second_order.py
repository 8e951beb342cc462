import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gohcert.multipliers import integrate_costate
from gohcert.random_problems import random_instance
from gohcert.registry import registry_get, registry_names, singular_regulator, sr_rho
from gohcert.second_order import (_mr_pointwise, _pencil, assemble_M_R, build_cone, eval_Omega, eval_Omega_many,
                                  eval_Q, gamma, goh_transform, legendre_margin, linearize, linearized_state,
                                  necessary_test, propagate_xi, r_closed_form, sufficient_test)


def _reg1_direction(e):
    mid = 0.5 * (e.traj.t[:-1] + e.traj.t[1:])
    return (mid < 1.0).astype(float), np.zeros(2)


def test_zero_direction(registry):
    e, lam = registry["CBQ"]
    d = goh_transform(e.spec, e.traj, np.zeros(e.traj.N), np.zeros(3))
    assert not np.any(d.y) and not np.any(d.xi) and d.h == 0.0
    assert eval_Omega(e.spec, e.traj, lam, d) == 0.0
    assert eval_Q(e.spec, e.traj, lam, np.zeros(e.traj.N), np.zeros(3)) == 0.0


def test_reg1_goh_direction_by_hand():
    e = registry_get("REG1")
    v, z0 = _reg1_direction(e)
    d = goh_transform(e.spec, e.traj, v, z0)
    t = e.traj.t
    y_nodes = np.concatenate([d.y[:, 0], d.y[-1:, 2]])
    assert np.allclose(y_nodes, np.minimum(t, 1.0), atol=1e-13)
    assert d.h == pytest.approx(1.0)
    assert np.max(np.abs(d.xi[:, 0])) <= 1e-13
    xi2 = np.where(t <= 1.0, 0.5 * t ** 2, t - 0.5)
    assert np.allclose(d.xi[:, 1], xi2, atol=1e-12)


def test_reg1_q_matches_omega_on_hand_direction(registry):
    e, lam = registry["REG1"]
    v, z0 = _reg1_direction(e)
    q = eval_Q(e.spec, e.traj, lam, v, z0)
    om = eval_Omega(e.spec, e.traj, lam, goh_transform(e.spec, e.traj, v, z0))
    assert abs(q - om) <= 1e-7 * (1.0 + abs(q))


@pytest.mark.parametrize("name", registry_names())
def test_goh_inverse_identity(registry, name):
    e, _ = registry[name]
    rng = np.random.default_rng(1)
    V = rng.standard_normal((4, e.traj.N))
    Z0 = rng.standard_normal((4, e.spec.n))
    z, zm = linearized_state(e.spec, e.traj, V, Z0)
    dirs = goh_transform(e.spec, e.traj, V, Z0)
    xi, xim = propagate_xi(e.spec, e.traj, np.stack([d.y for d in dirs]), np.stack([d.xi0 for d in dirs]))
    f1 = e.spec.f1(e.traj.x)
    for k, d in enumerate(dirs):
        y_nodes = np.concatenate([d.y[:, 0], d.y[-1:, 2]])
        assert np.allclose(xi[k] + y_nodes[:, None] * f1, z[k], atol=1e-9)
        assert np.allclose(xim[k], d.xi_mid, atol=1e-9)


def test_homogeneity(registry):
    e, lam = registry["CBQ"]
    rng = np.random.default_rng(2)
    v, z0 = rng.standard_normal(e.traj.N), rng.standard_normal(3)
    q1, q2 = eval_Q(e.spec, e.traj, lam, v, z0), eval_Q(e.spec, e.traj, lam, 2 * v, 2 * z0)
    assert abs(q2 - 4 * q1) <= 1e-10 * max(1.0, abs(q2))
    d = goh_transform(e.spec, e.traj, v, z0)
    o1, o2 = eval_Omega(e.spec, e.traj, lam, d), eval_Omega(e.spec, e.traj, lam, d.scaled(2.0))
    assert abs(o2 - 4 * o1) <= 1e-10 * max(1.0, abs(o2))


@pytest.mark.parametrize("name", registry_names())
def test_q_equals_omega_registry(registry, name):
    e, lam = registry[name]
    rng = np.random.default_rng(3)
    V = rng.standard_normal((50, e.traj.N))
    Z0 = rng.standard_normal((50, e.spec.n))
    q = eval_Q(e.spec, e.traj, lam, V, Z0)
    om = eval_Omega_many(e.spec, e.traj, lam, goh_transform(e.spec, e.traj, V, Z0))
    assert np.all(np.abs(q - om) <= 1e-7 * (1.0 + np.abs(q)))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_q_equals_omega_random(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, N=60)
    V = rng.standard_normal((5, 60))
    Z0 = rng.standard_normal((5, inst.spec.n))
    q = eval_Q(inst.spec, inst.traj, inst.lam, V, Z0)
    om = eval_Omega_many(inst.spec, inst.traj, inst.lam, goh_transform(inst.spec, inst.traj, V, Z0))
    assert np.all(np.abs(q - om) <= 1e-7 * np.maximum(1.0, np.abs(q)))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_bracket_and_r_identities_random(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, N=40)
    lin = linearize(inst.spec, inst.traj)
    assert lin.bracket_error(inst.spec) <= 1e-9
    f = assemble_M_R(inst.spec, inst.traj, inst.lam, lin)
    assert np.max(np.abs(f.R - f.R_cf)) <= 1e-8 * max(1.0, np.max(np.abs(f.R_cf)))
    u = inst.traj.u[:, None] + rng.standard_normal(f.nu.shape)
    *_, R2, Rcf2 = _mr_pointwise(inst.spec, u, lin.x, f.p, f.nu)
    assert np.array_equal(Rcf2, f.R_cf)
    assert np.max(np.abs(R2 - Rcf2)) <= 1e-8 * max(1.0, np.max(np.abs(Rcf2)))


def test_reg1_r_vanishes(registry):
    e, lam = registry["REG1"]
    f = assemble_M_R(e.spec, e.traj, lam)
    assert np.max(np.abs(f.R)) <= 1e-12 and np.max(np.abs(f.R_cf)) <= 1e-12


def test_zero_multiplier_fields(registry):
    e, _ = registry["CBQ"]
    lin = linearize(e.spec, e.traj)
    P = np.zeros(lin.x.shape)
    NU = np.zeros(lin.x.shape[:-1])
    _, _, M, R, R_cf = _mr_pointwise(e.spec, e.traj.u[:, None] + 0 * NU, lin.x, P, NU)
    assert not np.any(M) and not np.any(R) and not np.any(R_cf)
    assert not np.any(r_closed_form(e.spec, lin.x, P, NU))


def test_sr_r_is_constant():
    e = singular_regulator(r=1.5, N=40)
    lam = integrate_costate(e.spec, e.traj, 1.0, [0.0, 0.0, -1.0], ())
    f = assemble_M_R(e.spec, e.traj, lam)
    assert np.allclose(f.R, 1.5, atol=1e-12)
    assert legendre_margin(e.spec, e.traj, lam) == pytest.approx(1.5, abs=1e-12)


def test_cone_cb1_is_zero(registry):
    e, lam = registry["CB1"]
    cone = build_cone(e.spec, e.traj, [lam], "PS2")
    assert cone.dim == 0
    res = necessary_test(e.spec, e.traj, [lam], cone)
    assert res.verdict == "VACUOUS"


@pytest.mark.parametrize("name", registry_names())
@pytest.mark.parametrize("which", ["PS2", "Phat2", "Pstar2"])
def test_cone_dimension_matches_dense_rank(registry, name, which):
    e, lam = registry[name]
    cone = build_cone(e.spec, e.traj, [lam], which)
    rank = np.linalg.matrix_rank(cone.constraints) if cone.constraints.size else 0
    assert cone.dim == cone.n_vars - rank
    if cone.dim:
        assert np.allclose(cone.constraints @ cone.basis, 0.0, atol=1e-10)


def test_reg1_cone_is_zero(registry):
    # initial bang arc forces y = 0, x0 is fixed and lim y = h at T; nothing is left
    e, lam = registry["REG1"]
    cone = build_cone(e.spec, e.traj, [lam], "PS2")
    assert cone.dim == 0
    assert necessary_test(e.spec, e.traj, [lam], cone).verdict == "VACUOUS"


def test_free_problem_cone_dimension():
    e = singular_regulator(N=30)
    spec = dataclasses.replace(e.spec, n1=0, Phi=None)
    lam = integrate_costate(spec, e.traj, 1.0, None, ())
    cone = build_cone(spec, e.traj, [lam], "PS2")
    assert cone.n_vars == e.traj.N + 1 + spec.n
    assert cone.dim == cone.n_vars - 1


def test_cone_matrices_symmetric_psd(registry):
    e, lam = registry["SR1"]
    cone = build_cone(e.spec, e.traj, [lam], "PS2")
    Om, _, _ = _pencil(e.spec, e.traj, lam, cone, linearize(e.spec, e.traj))
    assert np.max(np.abs(Om - Om.T)) <= 1e-12 * max(1.0, np.max(np.abs(Om)))
    assert np.linalg.eigvalsh(cone.gram).min() > 0


def test_sr1_coercive_against_rayleigh_sampling(registry):
    e, lam = registry["SR1"]
    cone = build_cone(e.spec, e.traj, [lam], "Pstar2")
    res = sufficient_test(e.spec, e.traj, [lam], cone)
    assert res.verdict == "PASS"
    assert res.rho_min == pytest.approx(sr_rho(), abs=1e-5)
    assert res.alpha_min == pytest.approx(1.0, abs=1e-12)
    Om, _, _ = _pencil(e.spec, e.traj, lam, cone, linearize(e.spec, e.traj))
    C = np.random.default_rng(4).standard_normal((cone.dim, 10_000))
    ray = np.einsum("ik,ij,jk->k", C, Om, C) / np.einsum("ik,ij,jk->k", C, cone.gram, C)
    assert ray.min() >= res.rho_min - 1e-9


def test_srn_fails_with_consistent_witness(registry):
    e, lam = registry["SRN"]
    cone = build_cone(e.spec, e.traj, [lam], "PS2")
    res = necessary_test(e.spec, e.traj, [lam], cone)
    assert res.verdict == "FAIL" and res.witness is not None
    assert res.value == pytest.approx(sr_rho(a=4.0), abs=1e-5)
    direct = eval_Omega(e.spec, e.traj, lam, res.witness) / gamma(e.traj, res.witness)
    assert abs(res.witness_omega / res.witness_gamma - direct) <= 1e-9
    assert res.witness_omega < 0


def test_cb1_sufficient_not_certified(registry):
    e, lam = registry["CB1"]
    cone = build_cone(e.spec, e.traj, [lam], "Pstar2")
    res = sufficient_test(e.spec, e.traj, [lam], cone)
    assert res.verdict == "NOT_CERTIFIED"
    assert abs(res.alpha_min) <= 1e-12
    assert cone.dim == 0


def test_empty_multiplier_list_rejected(registry):
    e, lam = registry["SR1"]
    cone = build_cone(e.spec, e.traj, [lam], "Pstar2")
    with pytest.raises(ValueError):
        sufficient_test(e.spec, e.traj, [], cone)
    with pytest.raises(ValueError):
        necessary_test(e.spec, e.traj, [], cone)


def test_unknown_cone_rejected(registry):
    e, lam = registry["SR1"]
    with pytest.raises(ValueError):
        build_cone(e.spec, e.traj, [lam], "P3")
