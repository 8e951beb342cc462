"""Goh transform, the quadratic forms Q and Omega, critical cones and the
second-order tests.

Everything is sampled per interval at (left node, midpoint, right node) with
the interval's control value and integrated with the composite Simpson
rule.  Linear ODEs for directions are advanced with the same RK4 scheme as
the state, and midpoint values come from cubic Hermite interpolation.
Directions are carried as coefficient matrices with ``D`` columns, so a
single direction and a whole cone basis share one code path; the matrix of
Omega on a basis and ``eval_Omega`` on a single direction are produced by
the same bilinear assembly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import eigh, null_space

from .multipliers import Multiplier, SIMPSON, costate_samples
from .problem import ProblemSpec
from .trajectory import Trajectory, interval_states

__all__ = [
    "LinearizedSystem",
    "GohDirection",
    "ConeBasis",
    "MRFields",
    "TestResult",
    "linearize",
    "linearized_state",
    "goh_transform",
    "propagate_xi",
    "assemble_M_R",
    "r_closed_form",
    "eval_Q",
    "eval_Omega",
    "eval_Omega_many",
    "gamma",
    "build_cone",
    "necessary_test",
    "legendre_margin",
    "sufficient_test",
    "CONE_KINDS",
]

CONE_KINDS = ("PS2", "Phat2", "Pstar2")


# -- linearization -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LinearizedSystem:
    """Per-interval samples (N, 3, ...) of ``A``, ``E``, ``f1`` and ``x``."""

    x: np.ndarray
    A: np.ndarray
    E: np.ndarray
    f1: np.ndarray

    def bracket_error(self, spec: ProblemSpec) -> float:
        """Max deviation of ``E`` from ``[f0, f1](x)`` over all samples."""
        return float(np.max(np.abs(self.E - spec.bracket_01(self.x))))


def linearize(spec: ProblemSpec, traj: Trajectory) -> LinearizedSystem:
    """``A = f'(u, x)`` and ``E = A f1 - d/dt f1(x)`` with ``dx/dt = f(u, x)``."""
    xs = interval_states(spec, traj)
    u = traj.u[:, None]
    A = spec.A(u, xs)
    f1 = spec.f1(xs)
    xdot = spec.f(u, xs)
    E = np.einsum("nsij,nsj->nsi", A, f1) - np.einsum("nsij,nsj->nsi", spec.f1.jacobian(xs), xdot)
    return LinearizedSystem(xs, A, E, f1)


# -- directions ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class _Samples:
    """Direction samples with ``D`` coefficient columns."""

    Y: np.ndarray        # (N, 3, D)
    Xi: np.ndarray       # (N, 3, n, D)
    Hc: np.ndarray       # (D,)

    @property
    def D(self) -> int:
        return self.Hc.size

    def combine(self, coef: np.ndarray) -> "_Samples":
        coef = np.asarray(coef, dtype=float)
        return _Samples(self.Y @ coef, self.Xi @ coef, self.Hc @ coef)

    def column(self, j: int) -> "GohDirection":
        Xi = self.Xi[..., j]
        nodes = np.concatenate([Xi[:, 0], Xi[-1:, 2]], axis=0)
        return GohDirection(self.Y[..., j].copy(), float(self.Hc[j]), nodes, Xi[:, 1].copy())


@dataclass(frozen=True, eq=False)
class GohDirection:
    """``(y, h, xi)``: ``y`` as per-interval (left, mid, right) values,
    ``xi`` at the nodes plus interval midpoints."""

    y: np.ndarray        # (N, 3)
    h: float
    xi: np.ndarray       # (N+1, n)
    xi_mid: np.ndarray   # (N, n)

    @property
    def xi0(self) -> np.ndarray:
        return self.xi[0]

    def scaled(self, c: float) -> "GohDirection":
        return GohDirection(c * self.y, c * self.h, c * self.xi, c * self.xi_mid)

    def _samples(self) -> _Samples:
        Xi = np.stack([self.xi[:-1], self.xi_mid, self.xi[1:]], axis=1)
        return _Samples(self.y[..., None], Xi[..., None], np.array([self.h]))


def _rk4_linear(lin: LinearizedSystem, h: np.ndarray, X0: np.ndarray, forcing, feedback: np.ndarray, cfb):
    """Integrate ``X' = A X + y E`` (or ``(A - E c) X`` on feedback intervals).

    ``forcing[i]`` is the (3, D) array of y coefficients (left, mid, right)
    for non-feedback intervals; ``cfb`` holds (N, 3, n) feedback rows ``c``.
    Returns node values (N+1, n, D), midpoints (N, n, D) and y samples (N, 3, D).
    """
    N = h.size
    n, D = X0.shape
    nodes = np.empty((N + 1, n, D))
    mids = np.empty((N, n, D))
    Y = np.empty((N, 3, D))
    nodes[0] = X0
    for i in range(N):
        A, E, hi = lin.A[i], lin.E[i], h[i]
        X = nodes[i]
        if feedback[i]:
            B = [A[s] - np.outer(E[s], cfb[i, s]) for s in range(3)]
            k1 = B[0] @ X
            k2 = B[1] @ (X + 0.5 * hi * k1)
            k3 = B[1] @ (X + 0.5 * hi * k2)
            k4 = B[2] @ (X + hi * k3)
            Xr = X + (hi / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            dl, dr = k1, B[2] @ Xr
            Xm = 0.5 * (X + Xr) + (hi / 8.0) * (dl - dr)
            Y[i] = -np.stack([cfb[i, 0] @ X, cfb[i, 1] @ Xm, cfb[i, 2] @ Xr])
        else:
            y = forcing[i]
            k1 = A[0] @ X + np.outer(E[0], y[0])
            k2 = A[1] @ (X + 0.5 * hi * k1) + np.outer(E[1], y[1])
            k3 = A[1] @ (X + 0.5 * hi * k2) + np.outer(E[1], y[1])
            k4 = A[2] @ (X + hi * k3) + np.outer(E[2], y[2])
            Xr = X + (hi / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            dl, dr = k1, A[2] @ Xr + np.outer(E[2], y[2])
            Xm = 0.5 * (X + Xr) + (hi / 8.0) * (dl - dr)
            Y[i] = y
        nodes[i + 1] = Xr
        mids[i] = Xm
    return nodes, mids, Y


def _feedback_rows(spec: ProblemSpec, lin: LinearizedSystem) -> np.ndarray:
    """``c = g' / (g' f1)`` at every sample, so that ``y = -c xi`` on C."""
    gp = spec.gprime(lin.x)
    den = np.einsum("nsi,nsi->ns", gp, lin.f1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return gp / den[..., None]


def linearized_state(spec: ProblemSpec, traj: Trajectory, v, z0, lin: LinearizedSystem | None = None):
    """RK4 solution of ``z' = A z + v f1(x)``; returns (nodes, midpoints).

    ``v`` may carry a leading batch axis, ``(K, N)`` with ``z0`` of shape
    ``(K, n)``; the outputs then have shapes ``(K, N+1, n)`` and ``(K, N, n)``.
    """
    lin = lin or linearize(spec, traj)
    v = np.asarray(v, dtype=float)
    z0 = np.asarray(z0, dtype=float)
    single = v.ndim == 1
    V = v[None] if single else v
    Z0 = z0[None] if single else z0
    N, n = traj.N, spec.n
    K = V.shape[0]
    z = np.empty((N + 1, n, K))
    zm = np.empty((N, n, K))
    z[0] = Z0.T
    for i in range(N):
        A, f1, hi = lin.A[i], lin.f1[i], traj.h[i]
        vi = V[:, i]
        Z = z[i]
        k1 = A[0] @ Z + f1[0][:, None] * vi
        k2 = A[1] @ (Z + 0.5 * hi * k1) + f1[1][:, None] * vi
        k3 = A[1] @ (Z + 0.5 * hi * k2) + f1[1][:, None] * vi
        k4 = A[2] @ (Z + hi * k3) + f1[2][:, None] * vi
        z[i + 1] = Z + (hi / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        zm[i] = 0.5 * (Z + z[i + 1]) + (hi / 8.0) * (k1 - (A[2] @ z[i + 1] + f1[2][:, None] * vi))
    z = np.moveaxis(z, -1, 0)
    zm = np.moveaxis(zm, -1, 0)
    return (z[0], zm[0]) if single else (z, zm)


def _y_from_v(traj: Trajectory, v: np.ndarray) -> np.ndarray:
    y_nodes = np.concatenate([[0.0], np.cumsum(traj.h * v)])
    return np.stack([y_nodes[:-1], y_nodes[:-1] + 0.5 * traj.h * v, y_nodes[1:]], axis=1)


def goh_transform(spec: ProblemSpec, traj: Trajectory, v, z0, lin: LinearizedSystem | None = None):
    """``y = int v``, ``xi = z - y f1(x)``, ``h = y(T)``.

    With ``v`` of shape (K, N) and ``z0`` of shape (K, n), returns a list of K directions.
    """
    lin = lin or linearize(spec, traj)
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != traj.N:
        raise ValueError(f"v must have one value per interval ({traj.N})")
    if v.ndim == 2:
        z, zm = linearized_state(spec, traj, v, z0, lin)
        return [_goh_from_z(spec, traj, lin, v[k], z[k], zm[k]) for k in range(v.shape[0])]
    z, zm = linearized_state(spec, traj, v, z0, lin)
    return _goh_from_z(spec, traj, lin, v, z, zm)


def _goh_from_z(spec, traj, lin, v, z, zm) -> GohDirection:
    Y = _y_from_v(traj, v)
    f1_nodes = spec.f1(traj.x)
    y_nodes = np.concatenate([Y[:, 0], Y[-1:, 2]])
    xi = z - y_nodes[:, None] * f1_nodes
    xi_mid = zm - Y[:, 1, None] * lin.f1[:, 1]
    return GohDirection(Y, float(y_nodes[-1]), xi, xi_mid)


def propagate_xi(spec: ProblemSpec, traj: Trajectory, y: np.ndarray, xi0, lin: LinearizedSystem | None = None):
    """Integrate ``xi' = A xi + y E`` for given y samples (N, 3); returns (nodes, mids).

    A leading batch axis is allowed: ``y`` of shape (K, N, 3) with ``xi0`` of
    shape (K, n) gives outputs of shapes (K, N+1, n) and (K, N, n).
    """
    lin = lin or linearize(spec, traj)
    y = np.asarray(y, dtype=float)
    xi0 = np.asarray(xi0, dtype=float)
    single = y.ndim == 2
    Y = y[None] if single else y
    X0 = (xi0[None] if single else xi0).T
    nodes, mids, _ = _rk4_linear(lin, traj.h, X0, np.moveaxis(Y, 0, -1), np.zeros(traj.N, dtype=bool), None)
    nodes, mids = np.moveaxis(nodes, -1, 0), np.moveaxis(mids, -1, 0)
    return (nodes[0], mids[0]) if single else (nodes, mids)


# -- coefficient fields --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MRFields:
    """Per-sample (N, 3, ...) fields used by Omega."""

    Hxx: np.ndarray
    Hux: np.ndarray
    M: np.ndarray
    R: np.ndarray
    R_cf: np.ndarray
    nu: np.ndarray
    p: np.ndarray


def _mr_pointwise(spec: ProblemSpec, u: np.ndarray, xs: np.ndarray, P: np.ndarray, NU: np.ndarray):
    """Hxx, Hux, M, R and R_cf at arbitrary sample points ``(u, x, p, nu)``."""
    ue = u[..., None, None, None]
    A = spec.A(u, xs)
    Hxx = np.einsum("...i,...ijk->...jk", P, spec.f0.hessian(xs) + ue * spec.f1.hessian(xs))
    J1 = spec.f1.jacobian(xs)
    K1 = spec.f1.hessian(xs)
    gp = spec.gprime(xs)
    f1 = spec.f1(xs)
    xdot = spec.f(u, xs)
    E = np.einsum("...ij,...j->...i", A, f1) - np.einsum("...ij,...j->...i", J1, xdot)
    Hux = np.einsum("...i,...ij->...j", P, J1)
    pdot = -np.einsum("...i,...ij->...j", P, A) - NU[..., None] * gp
    Hux_dot = np.einsum("...i,...ij->...j", pdot, J1) + np.einsum("...i,...ijk,...k->...j", P, K1, xdot)
    M = np.einsum("...i,...ij->...j", f1, Hxx) - Hux_dot - np.einsum("...i,...ij->...j", Hux, A)
    d_Huxf1 = np.einsum("...i,...i->...", Hux_dot, f1) + np.einsum("...i,...ij,...j->...", Hux, J1, xdot)
    R = (np.einsum("...i,...ij,...j->...", f1, Hxx, f1) - 2.0 * np.einsum("...i,...i->...", Hux, E) - d_Huxf1)
    R_cf = r_closed_form(spec, xs, P, NU)
    return Hxx, Hux, M, R, R_cf


def r_closed_form(spec: ProblemSpec, x, p, nu) -> np.ndarray:
    """``p [[f0, f1], f1](x) + g'(x) f1'(x) f1(x) nu``; no control argument."""
    x = np.asarray(x, dtype=float)
    return (np.einsum("...i,...i->...", p, spec.bracket_01_1(x))
            + np.einsum("...i,...ij,...j->...", spec.gprime(x), spec.f1.jacobian(x), spec.f1(x)) * nu)


def assemble_M_R(spec: ProblemSpec, traj: Trajectory, lam: Multiplier,
                 lin: LinearizedSystem | None = None) -> MRFields:
    """``M = f1'H_xx - d/dt H_ux - H_ux A`` and
    ``R = f1'H_xx f1 - 2 H_ux E - d/dt(H_ux f1)``, time derivatives taken
    analytically from ``p' = -pA - nu g'`` and ``x' = f``; also the closed
    form ``R_cf = p [[f0, f1], f1] + g' f1' f1 nu``."""
    lin = lin or linearize(spec, traj)
    P, NU = costate_samples(spec, traj, lam)
    u = np.broadcast_to(traj.u[:, None], NU.shape)
    Hxx, Hux, M, R, R_cf = _mr_pointwise(spec, u, lin.x, P, NU)
    return MRFields(Hxx, Hux, M, R, R_cf, NU, P)


# -- quadratic forms -----------------------------------------------------------

def _weights(traj: Trajectory) -> np.ndarray:
    return traj.h[:, None] * SIMPSON[None, :]          # (N, 3)


def _atom_y(traj: Trajectory, Y: np.ndarray, k: int) -> np.ndarray:
    """Value of y at an interior node: the C side if any, else the average."""
    kinds = traj.interval_kind
    if kinds[k] == "C":
        return Y[k, 0]
    if kinds[k - 1] == "C":
        return Y[k - 1, 2]
    return 0.5 * (Y[k - 1, 2] + Y[k, 0])


def _omega_matrix(spec: ProblemSpec, traj: Trajectory, lam: Multiplier, S: _Samples,
                  fields: MRFields, lin: LinearizedSystem) -> np.ndarray:
    """Symmetric (D, D) matrix of Omega on the columns of ``S``."""
    W = _weights(traj)
    Y, Xi, Hc = S.Y, S.Xi, S.Hc
    N = traj.N
    D = S.D

    def gram(a, b):
        return a.reshape(-1, D).T @ b.reshape(-1, D)

    # Omega^0
    XW = Xi * W[:, :, None, None]
    YW = Y * W[..., None]
    XHX = gram(XW, np.einsum("nsij,nsje->nsie", fields.Hxx, Xi))
    YMX = gram(YW, np.einsum("nsj,nsje->nse", fields.M, Xi))
    out = XHX + YMX + YMX.T + gram(YW * fields.R[..., None], Y)
    # Omega^g, density part: z = xi + f1 y
    Zs = Xi + lin.f1[..., None] * Y[:, :, None, :]
    G2 = spec.ghess(lin.x)
    out += gram(Zs * (W * fields.nu)[:, :, None, None], np.einsum("nsij,nsje->nsie", G2, Zs))
    # atoms: Omega^g at every atom, plus the distributional M, R parts inside (0, T)
    xi_nodes = np.concatenate([Xi[:, 0], Xi[-1:, 2]], axis=0)       # (N+1, n, D)
    for k in np.flatnonzero(lam.atom_mass):
        m = lam.atom_mass[k]
        x = traj.x[k]
        f1 = spec.f1(x)
        if k == 0:
            yk = np.zeros(S.D)
        elif k == N:
            yk = Hc
        else:
            yk = _atom_y(traj, Y, k)
        zk = xi_nodes[k] + np.outer(f1, yk)
        out += m * (zk.T @ spec.ghess(x) @ zk)
        if 0 < k < N:
            gJ = spec.gprime(x) @ spec.f1.jacobian(x)
            cross = np.outer(yk, gJ @ xi_nodes[k])
            out += m * (cross + cross.T) + m * float(gJ @ f1) * np.outer(yk, yk)
    # Omega_T with p(T-)
    xT = traj.x[-1]
    HuxT = lam.p_minus[-1] @ spec.f1.jacobian(xT)
    cross = np.outer(Hc, HuxT @ xi_nodes[-1])
    out += cross + cross.T + float(HuxT @ spec.f1(xT)) * np.outer(Hc, Hc)
    # Omega^E
    end = np.concatenate([xi_nodes[0], xi_nodes[-1] + np.outer(spec.f1(xT), Hc)], axis=0)
    D2 = spec.lagrangian_hess(lam.beta, lam.Psi, traj.x[0], xT)
    out += end.T @ D2 @ end
    return 0.5 * (out + out.T)


def _gamma_matrix(traj: Trajectory, S: _Samples) -> np.ndarray:
    W = _weights(traj)
    D = S.D
    G = (S.Y * W[..., None]).reshape(-1, D).T @ S.Y.reshape(-1, D)
    G += np.outer(S.Hc, S.Hc)
    X0 = S.Xi[0, 0]
    G += X0.T @ X0
    return 0.5 * (G + G.T)


def eval_Omega(spec: ProblemSpec, traj: Trajectory, lam: Multiplier, d: GohDirection,
               fields: MRFields | None = None, lin: LinearizedSystem | None = None) -> float:
    """``Omega_T + Omega^0 + Omega^E + Omega^g`` at one direction."""
    lin = lin or linearize(spec, traj)
    fields = fields or assemble_M_R(spec, traj, lam, lin)
    return float(_omega_matrix(spec, traj, lam, d._samples(), fields, lin)[0, 0])


def gamma(traj: Trajectory, d: GohDirection) -> float:
    """``int y^2 + h^2 + |xi0|^2``."""
    return float(_gamma_matrix(traj, d._samples())[0, 0])


def eval_Q(spec: ProblemSpec, traj: Trajectory, lam: Multiplier, v, z0,
           lin: LinearizedSystem | None = None):
    """``int (z'H_xx z + 2 v H_ux z) + D^2 ell (z0, zT)^2 + int z'g''z dmu``.

    Accepts a leading batch axis (``v`` of shape (K, N)), returning K values.
    """
    lin = lin or linearize(spec, traj)
    v = np.asarray(v, dtype=float)
    z, zm = linearized_state(spec, traj, v, z0, lin)
    Z = np.stack([z[..., :-1, :], zm, z[..., 1:, :]], axis=-2)          # (..., N, 3, n)
    P, NU = costate_samples(spec, traj, lam)
    xs = lin.x
    u = traj.u[:, None]
    H2 = spec.f0.hessian(xs) + u[..., None, None, None] * spec.f1.hessian(xs)
    Hxx = np.einsum("nsi,nsijk->nsjk", P, H2) + NU[..., None, None] * spec.ghess(xs)
    Hux = np.einsum("nsi,nsij->nsj", P, spec.f1.jacobian(xs))
    W = _weights(traj)
    # two-operand einsums only: the BLAS path taken by optimize=True is not
    # bit-reproducible across processes, which the selftest report relies on
    HZ = np.einsum("nsij,...nsj->...nsi", Hxx, Z) + 2.0 * v[..., None, None] * Hux
    val = np.einsum("...nsi,...nsi,ns->...", Z, HZ, W)
    for k in np.flatnonzero(lam.atom_mass):
        val = val + lam.atom_mass[k] * np.einsum("...i,ij,...j->...", z[..., k, :], spec.ghess(traj.x[k]), z[..., k, :])
    end = np.concatenate([z[..., 0, :], z[..., -1, :]], axis=-1)
    val = val + np.einsum("...i,ij,...j->...", end, spec.lagrangian_hess(lam.beta, lam.Psi, traj.x[0], traj.x[-1]), end)
    return float(val) if v.ndim == 1 else np.asarray(val)


def eval_Omega_many(spec: ProblemSpec, traj: Trajectory, lam: Multiplier, dirs: Sequence[GohDirection],
                    fields: MRFields | None = None, lin: LinearizedSystem | None = None) -> np.ndarray:
    """``eval_Omega`` for several directions with one matrix assembly."""
    lin = lin or linearize(spec, traj)
    fields = fields or assemble_M_R(spec, traj, lam, lin)
    parts = [d._samples() for d in dirs]
    S = _Samples(np.concatenate([p.Y for p in parts], axis=-1), np.concatenate([p.Xi for p in parts], axis=-1),
                 np.concatenate([p.Hc for p in parts]))
    return np.diag(_omega_matrix(spec, traj, lam, S, fields, lin)).copy()


# -- cones ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConeBasis:
    """Orthonormal basis (in the raw variables) of a discretized cone."""

    which: str
    dim: int
    n_vars: int
    constraints: np.ndarray          # (rows, n_vars)
    basis: np.ndarray                # (n_vars, dim)
    gram: np.ndarray                 # (dim, dim)
    samples: _Samples = field(repr=False)
    terminal_limit: bool = False     # whether lim y = h at T was imposed
    omega: dict = field(default_factory=dict, repr=False)   # cache: id -> (multiplier, matrix)

    def direction(self, coef) -> GohDirection:
        """Direction with basis coefficients ``coef``."""
        coef = np.asarray(coef, dtype=float).reshape(self.dim, 1)
        return self.samples.combine(coef).column(0)


def _raw_samples(spec: ProblemSpec, traj: Trajectory, lin: LinearizedSystem):
    """Samples of the cone variables (y per non-C interval, h, xi0) as columns."""
    n, N = spec.n, traj.N
    cmask = traj.kind_mask("C")
    free = np.flatnonzero(~cmask)
    D = free.size + 1 + n
    forcing = np.zeros((N, 3, D))
    forcing[free, :, np.arange(free.size)] = 1.0
    X0 = np.zeros((n, D))
    X0[:, free.size + 1:] = np.eye(n)
    cfb = _feedback_rows(spec, lin)
    nodes, mids, Y = _rk4_linear(lin, traj.h, X0, forcing, cmask, cfb)
    Xi = np.stack([nodes[:-1], mids, nodes[1:]], axis=1)
    Hc = np.zeros(D)
    Hc[free.size] = 1.0
    return _Samples(Y, Xi, Hc), free


def build_cone(spec: ProblemSpec, traj: Trajectory, lams: Sequence[Multiplier] = (), which: str = "PS2",
               lin: LinearizedSystem | None = None, atom_tol: float = 1e-9, active_tol: float = 1e-7,
               rank_rtol: float = 1e-9) -> ConeBasis:
    """Discretized critical cone as a linear subspace.

    Variables are ``y`` on each non-C interval, ``h`` and ``xi0``; on C
    intervals ``y = -g'xi / g'f1``.  Imposed: ``y`` constant on B arcs, zero
    on an initial B arc and equal to ``h`` on a final B arc; linearized
    endpoint constraints (equality rows, active inequality rows and the cost
    row as equalities); for ``PS2`` continuity of ``y`` at BC, CB and BB
    junctions and ``lim y = h`` when T is in a C arc; for ``Pstar2`` the
    latter only when some multiplier has an atom at T.
    """
    if which not in CONE_KINDS:
        raise ValueError(f"unknown cone {which!r}; expected one of {CONE_KINDS}")
    lin = lin or linearize(spec, traj)
    S, free = _raw_samples(spec, traj, lin)
    D = S.D
    N = traj.N
    rows: list[np.ndarray] = []
    arcs = traj.arcs
    arc_of = traj.interval_arc
    kinds = traj.interval_kind

    for j, arc in enumerate(arcs):
        if arc.kind not in ("Bminus", "Bplus"):
            continue
        idx = np.flatnonzero(arc_of == j)
        for a, b in zip(idx[:-1], idx[1:]):
            rows.append(S.Y[a, 1] - S.Y[b, 1])
        if j == 0:
            rows.append(S.Y[idx[0], 1].copy())
        if j == len(arcs) - 1:
            rows.append(S.Y[idx[-1], 1] - S.Hc)
    if which == "PS2":
        for k, before, after in traj.junctions:
            pair = {before, after}
            if "S" in pair:
                continue
            rows.append(S.Y[k - 1, 2] - S.Y[k, 0])
    terminal_limit = False
    if kinds[N - 1] == "C":
        if which == "PS2":
            terminal_limit = True
        elif which == "Pstar2":
            terminal_limit = any(lam.atom_mass[-1] > atom_tol for lam in lams)
    if terminal_limit:
        rows.append(S.Y[N - 1, 2] - S.Hc)

    x0, xT = traj.x[0], traj.x[-1]
    end = np.concatenate([S.Xi[0, 0], S.Xi[-1, 2] + np.outer(spec.f1(xT), S.Hc)], axis=0)   # (2n, D)
    w = spec.endpoint(x0, xT)
    rows.append(spec.phi.jacobian(w)[0] @ end)
    if spec.Phi is not None:
        dPhi = spec.Phi.jacobian(w)
        for j in list(range(spec.n1)) + spec.active_inequalities(x0, xT, active_tol):
            rows.append(dPhi[j] @ end)

    C = np.array(rows).reshape(-1, D)
    norms = np.linalg.norm(C, axis=1)
    keep = norms > 1e-14 * max(1.0, norms.max(initial=0.0))
    C = C[keep] / norms[keep, None]
    Z = null_space(C, rcond=rank_rtol) if C.shape[0] else np.eye(D)
    Sb = S.combine(Z)
    G = _gamma_matrix(traj, Sb) if Z.shape[1] else np.zeros((0, 0))
    return ConeBasis(which, Z.shape[1], D, C, Z, G, Sb, terminal_limit)


def _cone_omega(spec, traj, lam, cone: ConeBasis, lin, fields=None) -> np.ndarray:
    hit = cone.omega.get(id(lam))
    if hit is None or hit[0] is not lam:
        fields = fields or assemble_M_R(spec, traj, lam, lin)
        hit = (lam, _omega_matrix(spec, traj, lam, cone.samples, fields, lin))
        cone.omega[id(lam)] = hit
    return hit[1]


# -- tests ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TestResult:
    verdict: str                    # PASS, FAIL, VACUOUS or NOT_CERTIFIED
    value: float                    # mu_min or rho_min (nan when vacuous)
    per_multiplier: tuple[float, ...]
    witness: GohDirection | None = None
    witness_omega: float = math.nan
    witness_gamma: float = math.nan
    note: str = ""

    __test__ = False


def _pencil(spec, traj, lam, cone, lin):
    Om = _cone_omega(spec, traj, lam, cone, lin)
    vals, vecs = eigh(Om, cone.gram)
    return Om, vals, vecs


def necessary_test(spec: ProblemSpec, traj: Trajectory, lams: Sequence[Multiplier], cone: ConeBasis,
                   nec_tol: float = 1e-8, lin: LinearizedSystem | None = None) -> TestResult:
    """Nonnegativity of Omega on the cone, for a finite multiplier list.

    A direction is reported as violating only when every listed multiplier
    gives ``Omega < -nec_tol * gamma`` on it.
    """
    if not lams:
        raise ValueError("empty multiplier list")
    if cone.dim == 0:
        return TestResult("VACUOUS", math.nan, (), note="critical cone is {0}")
    lin = lin or linearize(spec, traj)
    mats, mins = [], []
    worst = None
    for lam in lams:
        Om, vals, vecs = _pencil(spec, traj, lam, cone, lin)
        mats.append(Om)
        mins.append(float(vals[0]))
    certified_violation = None
    for li, lam in enumerate(lams):
        _, vals, vecs = _pencil(spec, traj, lam, cone, lin)
        for j in np.flatnonzero(vals < -nec_tol):
            c = vecs[:, j]
            g = float(c @ cone.gram @ c)
            best = max(float(c @ M @ c) / g for M in mats)
            if best < -nec_tol and (certified_violation is None or best < certified_violation[0]):
                certified_violation = (best, c)
        if worst is None or mins[li] < worst[0]:
            worst = (mins[li], vecs[:, 0], li)
    mu_min = min(mins)
    if certified_violation is None:
        return TestResult("PASS", mu_min, tuple(mins))
    best, c = certified_violation
    d = cone.direction(c)
    om = max(float(c @ M @ c) for M in mats)
    note = "" if len(lams) == 1 else "not certified by provided multipliers"
    return TestResult("FAIL", mu_min, tuple(mins), d, om, float(c @ cone.gram @ c), note)


def legendre_margin(spec: ProblemSpec, traj: Trajectory, lam: Multiplier,
                    fields: MRFields | None = None, lin: LinearizedSystem | None = None) -> float:
    """``min (R + f1'g''f1 nu)`` over all samples."""
    lin = lin or linearize(spec, traj)
    fields = fields or assemble_M_R(spec, traj, lam, lin)
    f1 = lin.f1
    curv = np.einsum("nsi,nsij,nsj->ns", f1, spec.ghess(lin.x), f1)
    return float(np.min(fields.R + curv * fields.nu))


@dataclass(frozen=True, eq=False)
class SufficientResult:
    verdict: str
    alpha_min: float
    rho_min: float
    legendre: tuple[float, ...]
    coercivity: tuple[float, ...]
    cone_dim: int
    note: str = ""


def sufficient_test(spec: ProblemSpec, traj: Trajectory, lams: Sequence[Multiplier], cone: ConeBasis,
                    leg_tol: float = 1e-8, suf_tol: float = 1e-8,
                    lin: LinearizedSystem | None = None) -> SufficientResult:
    """Legendre condition for every multiplier plus uniform positivity of
    Omega on the extended cone for the best multiplier.

    Returns PASS only when both hold; otherwise NOT_CERTIFIED (the
    conditions are sufficient, so failing them proves nothing).
    """
    if not lams:
        raise ValueError("empty multiplier list")
    lin = lin or linearize(spec, traj)
    alphas = tuple(legendre_margin(spec, traj, lam, lin=lin) for lam in lams)
    alpha = min(alphas)
    if cone.dim == 0:
        rhos: tuple[float, ...] = ()
        rho = math.inf
    else:
        rhos = tuple(float(_pencil(spec, traj, lam, cone, lin)[1][0]) for lam in lams)
        rho = max(rhos)
    notes = []
    if not alpha > leg_tol:
        notes.append(f"Legendre margin {alpha:.3e} <= {leg_tol:g}")
    if not rho > suf_tol:
        notes.append(f"coercivity constant {rho:.3e} <= {suf_tol:g}")
    verdict = "PASS" if not notes else "NOT_CERTIFIED"
    if cone.dim == 0:
        notes.append("extended cone is {0}; coercivity holds vacuously")
    return SufficientResult(verdict, alpha, rho, alphas, rhos, cone.dim, "; ".join(notes))
