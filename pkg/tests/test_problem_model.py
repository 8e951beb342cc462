import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gohcert.polynomial import PolyMap, format_monomial, parse_monomial, poly_from_table, poly_to_table, state_names
from gohcert.problem import eval_dynamics, eval_hamiltonian, lie_bracket
from gohcert.random_problems import random_poly
from gohcert.registry import registry_get


def test_reg1_dynamics_substitution():
    spec = registry_get("REG1").spec
    assert np.array_equal(eval_dynamics(spec, -1.0, [1.0, 0.0]), [-1.0, 1.0])


def test_zero_control_gives_drift():
    spec = registry_get("CB1").spec
    x = np.array([0.3, -1.2, 2.0])
    assert np.array_equal(eval_dynamics(spec, 0.0, x), spec.f0(x))


def test_cb1_dynamics_on_constraint_arc():
    spec = registry_get("CB1").spec
    t = 1.25
    x = np.array([-(t - 1.0) ** 2, t, 0.0])
    assert np.allclose(eval_dynamics(spec, -2.0 * (t - 1.0), x), [-0.5, 1.0, -0.0625], atol=1e-15)


def test_dynamics_rejects_bad_shape():
    spec = registry_get("REG1").spec
    with pytest.raises(ValueError):
        eval_dynamics(spec, 0.0, [1.0, 2.0, 3.0])


def test_bracket_with_itself_is_zero():
    rng = np.random.default_rng(0)
    X = random_poly(rng, 3, 3)
    assert lie_bracket(X, X) == PolyMap.zero(3, 3)


def test_reg1_bracket_by_hand():
    spec = registry_get("REG1").spec
    x = np.array([0.7, -0.2])
    # f1' = 0, f0' = [[0, 0], [1, 0]]: [f1, f0] = f1'f0 - f0'f1 = -(0, 1)
    assert np.array_equal(spec.bracket_10(x), [0.0, -1.0])
    assert np.array_equal(spec.bracket_01(x), [0.0, 1.0])


def test_bracket_bilinear_at_points():
    rng = np.random.default_rng(1)
    X, Y, Z = (random_poly(rng, 3, 3) for _ in range(3))
    a, b = 1.7, -0.3
    pts = rng.uniform(-2, 2, (10, 3))
    lhs = lie_bracket(a * X + b * Z, Y)(pts)
    rhs = a * lie_bracket(X, Y)(pts) + b * lie_bracket(Z, Y)(pts)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(rhs)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2 ** 32 - 1))
def test_bracket_antisymmetric_exact(n, seed):
    rng = np.random.default_rng(seed)
    X, Y = (random_poly(rng, n, n, integer=True) for _ in range(2))
    assert lie_bracket(X, Y) == -lie_bracket(Y, X)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
def test_jacobian_matches_central_differences(nvars, nout, seed):
    rng = np.random.default_rng(seed)
    P = random_poly(rng, nvars, nout, max_deg=3)
    X = rng.uniform(-2, 2, (20, nvars))
    step = 1e-5
    J = P.jacobian(X)
    for j in range(nvars):
        e = np.zeros(nvars)
        e[j] = step
        fd = (P(X + e) - P(X - e)) / (2 * step)
        assert np.max(np.abs(fd - J[..., j])) <= 1e-6 * max(1.0, np.max(np.abs(J)))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
def test_hessian_symmetric_and_matches_jacobian_differences(nvars, seed):
    rng = np.random.default_rng(seed)
    P = random_poly(rng, nvars, 2, max_deg=3)
    x = rng.uniform(-2, 2, nvars)
    H = P.hessian(x)
    assert np.array_equal(H, np.swapaxes(H, -1, -2))
    step = 1e-5
    for j in range(nvars):
        e = np.zeros(nvars)
        e[j] = step
        fd = (P.jacobian(x + e) - P.jacobian(x - e)) / (2 * step)
        assert np.allclose(fd, H[..., j], atol=1e-6 * max(1.0, np.max(np.abs(H))))


def test_hamiltonian_reg1_values():
    spec = registry_get("REG1").spec
    h = eval_hamiltonian(spec, 0.4, [1.0, 0.0], [1.0, 1.0])
    assert h.H_u == 1.0
    # on the constraint arc p = (0, 1)
    assert eval_hamiltonian(spec, 0.0, [0.0, 0.5], [0.0, 1.0]).H_u == 0.0


def test_hamiltonian_zero_costate():
    spec = registry_get("CBQ").spec
    h = eval_hamiltonian(spec, 0.3, [0.2, 1.1, 0.0], np.zeros(3))
    assert h.H == 0.0 and h.H_u == 0.0
    for arr in (h.H_x, h.H_ux, h.H_xx):
        assert not np.any(arr)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.integers(0, 2 ** 32 - 1))
def test_hamiltonian_affine_in_control(u, seed):
    rng = np.random.default_rng(seed)
    spec = registry_get("CBQ", 20).spec
    x, p = rng.uniform(-2, 2, 3), rng.standard_normal(3)
    h, h0, h1 = (eval_hamiltonian(spec, w, x, p) for w in (u, 0.0, 1.0))
    scale = max(1.0, abs(h0.H), abs(h1.H))
    assert abs(h.H - (h0.H + u * h.H_u)) <= 1e-12 * scale * max(1.0, abs(u))
    assert abs(h.H_u - (h1.H - h0.H)) <= 1e-12 * scale
    assert np.allclose(h.H_x, h0.H_x + u * h.H_ux, atol=1e-12 * scale * max(1.0, abs(u)))


def test_registry_reg1_data():
    e = registry_get("REG1")
    s, traj = e.spec, e.traj
    assert (s.T, s.u_min, s.u_max) == (2.0, -1.0, 1.0)
    mid = 0.5 * (traj.t[:-1] + traj.t[1:])
    assert np.all(traj.u[mid < 1.0] == -1.0) and np.all(traj.u[mid > 1.0] == 0.0)
    assert np.allclose(traj.x[-1], [0.0, 0.5], atol=1e-12)
    assert abs(traj.x[-1].sum() - 0.5) <= 1e-12


def test_registry_cb1_control():
    traj = registry_get("CB1").traj
    mid = 0.5 * (traj.t[:-1] + traj.t[1:])
    on_c = (mid > 1.0) & (mid < 1.5)
    assert np.allclose(traj.u[on_c], -2.0 * (mid[on_c] - 1.0), atol=1e-15)
    assert np.all(traj.u[~on_c] == -1.0)


def test_registry_unknown_name():
    with pytest.raises(KeyError):
        registry_get("nope")


@pytest.mark.parametrize("text,exp", [("1", (0, 0, 0)), ("x2", (0, 1, 0)), ("x1^2*x3", (2, 0, 1)),
                                      ("x3*x1", (1, 0, 1))])
def test_parse_monomial(text, exp):
    assert parse_monomial(text, state_names(3)) == exp


def test_monomial_format_roundtrip():
    names = state_names(3)
    for exp in [(0, 0, 0), (1, 0, 0), (2, 1, 0), (0, 0, 3)]:
        assert parse_monomial(format_monomial(exp, names), names) == exp


def test_table_roundtrip_and_grlex_order():
    rng = np.random.default_rng(3)
    P = random_poly(rng, 2, 2)
    names = state_names(2)
    tab = poly_to_table(P, names)
    assert poly_from_table(tab, names, 2) == P
    degrees = [sum(parse_monomial(k, names)) for k in tab]
    assert degrees == sorted(degrees)
