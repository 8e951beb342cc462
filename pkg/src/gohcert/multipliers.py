"""Lagrange multipliers: costate, state-constraint measure and their checks.

A multiplier is ``(beta, Psi, p, dmu)``.  The measure is a density ``nu`` on
C arcs plus atoms at junction or end times.  The costate solves

    -dp = p A dt + g'(x) dmu,      (-p(0-), p(T+)) = D ell(x0, xT),

so an atom of mass ``m`` at ``tau`` gives ``p(tau-) = p(tau+) + m g'(x_tau)``.
Along C arcs ``nu`` is the explicit function of ``p`` that keeps ``H_u``
constant, and it is evaluated inside every RK4 stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import lsq_linear

from .problem import ProblemSpec
from .tolerances import Tolerances
from .trajectory import Trajectory, control_limits, interval_states

__all__ = [
    "Multiplier",
    "MultiplierSeed",
    "FitResult",
    "MultiplierFitError",
    "StationarityReport",
    "JumpRecord",
    "ComplementarityReport",
    "compute_nu",
    "integrate_costate",
    "costate_samples",
    "fit_multiplier",
    "candidate_atom_nodes",
    "check_nontrivial",
    "check_boundary",
    "check_stationarity",
    "check_jumps",
    "check_strict_complementarity",
    "check_weak_complementarity",
    "simpson",
    "integral_identity",
    "lagrangian_function",
]

SIMPSON = np.array([1.0, 4.0, 1.0]) / 6.0


def simpson(traj: Trajectory, samples: np.ndarray) -> float:
    """Composite Simpson rule from per-interval (left, mid, right) samples."""
    return float(np.sum(traj.h * (samples @ SIMPSON)))


# -- data ----------------------------------------------------------------------

@dataclass(frozen=True)
class MultiplierSeed:
    beta: float
    Psi: tuple[float, ...]
    atoms: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True, eq=False)
class Multiplier:
    """A multiplier sampled on a trajectory grid.

    ``p_minus[k]`` and ``p_plus[k]`` are the one-sided values at node ``k``;
    they differ only at atoms.  ``p_minus[0]`` is ``p(0-)`` and ``p_plus[-1]``
    is ``p(T+)``.  ``nu`` holds node values of the density (C-side values at
    junctions, zero off C).
    """

    beta: float
    Psi: np.ndarray
    atoms: tuple[tuple[float, float], ...]
    p_minus: np.ndarray
    p_plus: np.ndarray
    nu: np.ndarray
    atom_mass: np.ndarray = field(repr=False)

    @property
    def total_atom_mass(self) -> float:
        return float(sum(m for _, m in self.atoms))

    def terminal_atom(self) -> float:
        return float(self.atom_mass[-1])


class MultiplierFitError(RuntimeError):
    def __init__(self, message: str, result: "FitResult | None" = None):
        super().__init__(message)
        self.result = result


# -- density -------------------------------------------------------------------

def _nu_raw(spec: ProblemSpec, p: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``p [f1, f0](x) / g'(x) f1(x)`` without any guard (vectorized)."""
    num = np.einsum("...i,...i->...", p, spec.bracket_10(x))
    den = np.einsum("...i,...i->...", spec.gprime(x), spec.f1(x))
    return num / den


def compute_nu(spec: ProblemSpec, x, p, fo_min: float = 1e-6) -> float:
    """Density of the state-constraint measure on a C arc at ``(x, p)``."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    den = float(spec.gprime(x) @ spec.f1(x))
    if abs(den) < fo_min:
        raise ZeroDivisionError(f"|g'(x) f1(x)| = {abs(den):.3g} is below fo_min = {fo_min:g}")
    return float(p @ spec.bracket_10(x)) / den


# -- backward integration ------------------------------------------------------

def _node_atoms(traj: Trajectory, atoms: Sequence[tuple[float, float]]) -> np.ndarray:
    mass = np.zeros(traj.N + 1)
    for t, m in atoms:
        k = traj.node_index(float(t))
        if k is None:
            raise ValueError(f"atom at t={t:g} is not a grid node")
        mass[k] += float(m)
    return mass


def _integrate_batch(spec: ProblemSpec, traj: Trajectory, PT: np.ndarray, masses: np.ndarray):
    """Backward RK4 for K costates at once.

    ``PT`` is (K, n) terminal values ``p(T+)``, ``masses`` is (K, N+1).
    Returns ``(p_minus, p_plus)`` of shape (K, N+1, n).
    """
    K, n = PT.shape
    N = traj.N
    xs = interval_states(spec, traj)
    cmask = traj.kind_mask("C")
    # dp/dt = -p Mt with Mt = A on every interval and A + [f1, f0] g' / (g' f1) on C
    Mt = spec.A(np.broadcast_to(traj.u[:, None], (N, 3)), xs)
    if cmask.any():
        xc = xs[cmask]
        gpc = spec.gprime(xc)
        den = np.einsum("...i,...i->...", gpc, spec.f1(xc))
        Mt[cmask] += spec.bracket_10(xc)[..., :, None] * gpc[..., None, :] / den[..., None, None]
    gp = spec.gprime(traj.x)
    pm = np.empty((K, N + 1, n))
    pp = np.empty((K, N + 1, n))
    pp[:, N] = PT
    pm[:, N] = PT + masses[:, N, None] * gp[N]
    for i in range(N - 1, -1, -1):
        h = traj.h[i]
        ML, MM, MR = Mt[i]
        P = pm[:, i + 1]
        k1 = -P @ MR
        k2 = -(P - 0.5 * h * k1) @ MM
        k3 = -(P - 0.5 * h * k2) @ MM
        k4 = -(P - h * k3) @ ML
        pp[:, i] = P - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        pm[:, i] = pp[:, i] + masses[:, i, None] * gp[i]
    if not np.all(np.isfinite(pm)):
        i = int(np.max(np.flatnonzero(~np.all(np.isfinite(pm), axis=(0, 2)))))
        raise FloatingPointError(f"costate became non-finite at node {i} (t={traj.t[i]:g})")
    return pm, pp


def _node_nu(spec: ProblemSpec, traj: Trajectory, pm: np.ndarray, pp: np.ndarray) -> np.ndarray:
    """Node values of the density, taken from the C side at junctions."""
    cmask = traj.kind_mask("C")
    nu = np.zeros(traj.N + 1)
    right = np.zeros(traj.N + 1, dtype=bool)
    right[:-1] = cmask
    left = np.zeros(traj.N + 1, dtype=bool)
    left[1:] = cmask
    if right.any():
        nu[right] = _nu_raw(spec, pp[right], traj.x[right])
    only_left = left & ~right
    if only_left.any():
        nu[only_left] = _nu_raw(spec, pm[only_left], traj.x[only_left])
    return nu


def integrate_costate(spec: ProblemSpec, traj: Trajectory, beta: float, Psi=None,
                      atoms: Sequence[tuple[float, float]] = ()) -> Multiplier:
    """Costate by backward RK4 from ``p(T+) = D_xT ell``, with atoms as jumps."""
    Psi = np.zeros(spec.nc) if Psi is None else np.asarray(Psi, dtype=float)
    if Psi.shape != (spec.nc,):
        raise ValueError(f"Psi has shape {Psi.shape}, expected ({spec.nc},)")
    x0, xT = traj.x[0], traj.x[-1]
    PT = spec.lagrangian_grad(beta, Psi, x0, xT)[spec.n:]
    masses = _node_atoms(traj, atoms)
    pm, pp = _integrate_batch(spec, traj, PT[None, :], masses[None, :])
    pm, pp = pm[0], pp[0]
    atoms = tuple((float(t), float(m)) for t, m in atoms)
    return Multiplier(float(beta), Psi, atoms, pm, pp, _node_nu(spec, traj, pm, pp), masses)


def costate_samples(spec: ProblemSpec, traj: Trajectory, lam: Multiplier):
    """Per-interval (left, mid, right) samples of ``p`` and ``nu``.

    Returns ``(P, NU)`` with shapes (N, 3, n) and (N, 3).  Midpoint values of
    ``p`` use cubic Hermite interpolation with the costate right-hand side.
    """
    xs = interval_states(spec, traj)
    cmask = traj.kind_mask("C")
    pl = lam.p_plus[:-1]
    pr = lam.p_minus[1:]
    xl, xr = xs[:, 0], xs[:, 2]
    dl = -np.einsum("ki,kij->kj", pl, spec.A(traj.u, xl))
    dr = -np.einsum("ki,kij->kj", pr, spec.A(traj.u, xr))
    nul = np.where(cmask, _nu_raw(spec, pl, xl), 0.0)
    nur = np.where(cmask, _nu_raw(spec, pr, xr), 0.0)
    dl = dl - nul[:, None] * spec.gprime(xl)
    dr = dr - nur[:, None] * spec.gprime(xr)
    pmid = 0.5 * (pl + pr) + (traj.h / 8.0)[:, None] * (dl - dr)
    P = np.stack([pl, pmid, pr], axis=1)
    NU = np.where(cmask[:, None], _nu_raw(spec, P, xs), 0.0)
    return P, NU


# -- fitting -------------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    multiplier: Multiplier
    residual: float
    iterations: int
    converged: bool
    message: str = ""


def candidate_atom_nodes(spec: ProblemSpec, traj: Trajectory, tol_g: float = 1e-7) -> list[int]:
    """Nodes that may carry an atom: junctions touching a C arc, and the
    end times when the state constraint is active there."""
    nodes = set()
    for k, before, after in traj.junctions:
        if "C" in (before, after):
            nodes.add(k)
    gv = spec.gval(traj.x)
    for k in (0, traj.N):
        if abs(gv[k]) <= tol_g:
            nodes.add(k)
    return sorted(nodes)


def fit_multiplier(spec: ProblemSpec, traj: Trajectory, seed: MultiplierSeed | None = None,
                   tol: Tolerances | None = None) -> FitResult:
    """Fit ``(beta, Psi, atoms)`` so that the costate satisfies the first-order
    conditions on the declared arcs.

    The costate is linear in the parameters, so unit responses are computed
    once and the fit is a small bound-constrained least-squares problem,
    solved by damped Gauss-Newton, with residuals

    * ``H_u`` on S and C samples,
    * sign violations of ``H_u`` on B samples,
    * ``p(0-) + D_x0 ell``,
    * ``beta + sum(atoms) + int(nu) + |Psi|_1 - 1``.

    Raises :class:`MultiplierFitError` when the final residual exceeds
    ``fit_tol``.
    """
    tol = tol or Tolerances()
    n, nc = spec.n, spec.nc
    x0, xT = traj.x[0], traj.x[-1]
    active = list(range(spec.n1)) + spec.active_inequalities(x0, xT, max(tol.tol_g, 1e-9))
    atom_nodes = candidate_atom_nodes(spec, traj, tol.tol_g)
    K = 1 + len(active) + len(atom_nodes)
    is_ineq = np.array([False] + [j >= spec.n1 for j in active] + [True] * len(atom_nodes))
    is_atom = np.array([False] * (1 + len(active)) + [True] * len(atom_nodes))

    # unit responses
    w = spec.endpoint(x0, xT)
    dphi = spec.phi.jacobian(w)[0]
    dPhi = spec.Phi.jacobian(w) if spec.Phi is not None else np.zeros((0, 2 * n))
    grads = np.vstack([dphi[None, :]] + [dPhi[j][None, :] for j in active] + [np.zeros((len(atom_nodes), 2 * n))])
    masses = np.zeros((K, traj.N + 1))
    for r, k in enumerate(atom_nodes):
        masses[1 + len(active) + r, k] = 1.0
    pm, pp = _integrate_batch(spec, traj, grads[:, n:], masses)

    xs = interval_states(spec, traj)
    f1s = spec.f1(xs)
    kinds = traj.interval_kind
    P = np.empty((K, traj.N, 3, n))
    units = []
    for r in range(K):
        lam_r = Multiplier(0.0, np.zeros(nc), (), pm[r], pp[r], np.zeros(traj.N + 1), masses[r])
        Pr, NUr = costate_samples(spec, traj, lam_r)
        P[r] = Pr
        units.append(simpson(traj, NUr))
    Hu = np.einsum("knsi,nsi->nsk", P, f1s)
    int_nu = np.array(units)

    sc = np.isin(kinds.astype(str), ["S", "C"])
    bm = kinds == "Bminus"
    bp = kinds == "Bplus"
    Hu_sc = Hu[sc].reshape(-1, K)
    Hu_bm = Hu[bm].reshape(-1, K)
    Hu_bp = Hu[bp].reshape(-1, K)
    bnd = pm[:, 0, :].T + grads[:, :n].T          # (n, K)

    def residual(theta):
        r_sc = Hu_sc @ theta
        r_bm = np.maximum(0.0, -(Hu_bm @ theta))
        r_bp = np.maximum(0.0, Hu_bp @ theta)
        norm = theta[0] + theta[is_atom].sum() + int_nu @ theta + np.abs(theta[1:1 + len(active)]).sum() - 1.0
        return np.concatenate([r_sc, r_bm, r_bp, bnd @ theta, [norm]])

    def jac(theta):
        s_bm = (Hu_bm @ theta) < 0
        s_bp = (Hu_bp @ theta) > 0
        g = np.zeros(K)
        g[0] = 1.0
        g[is_atom] = 1.0
        g[1:1 + len(active)] = np.sign(theta[1:1 + len(active)])
        g = g + int_nu
        return np.vstack([Hu_sc, -Hu_bm * s_bm[:, None], Hu_bp * s_bp[:, None], bnd, g[None, :]])

    theta0 = np.zeros(K)
    if seed is not None:
        theta0[0] = max(0.0, seed.beta)
        for r, j in enumerate(active):
            if j < len(seed.Psi):
                theta0[1 + r] = seed.Psi[j]
        for t, m in seed.atoms:
            k = traj.node_index(float(t))
            if k in atom_nodes:
                theta0[1 + len(active) + atom_nodes.index(k)] = m
    lower = np.where(is_ineq, 0.0, -np.inf)
    lower[0] = 0.0
    theta0 = np.maximum(theta0, lower)
    upper = np.full(K, np.inf)
    # the residual is piecewise linear, so each Gauss-Newton step is an exact
    # bounded linear least-squares solve for the current hinge/sign pattern
    theta = theta0
    cost = float(np.sum(residual(theta) ** 2))
    iterations = 0
    message = "maximum number of iterations reached"
    for iterations in range(1, tol.max_iter + 1):
        J = jac(theta)
        rhs = J @ theta - residual(theta)
        target = lsq_linear(J, rhs, bounds=(lower, upper), method="bvls", tol=1e-15).x
        step = target - theta
        alpha = 1.0
        while alpha > 1e-8:
            trial = theta + alpha * step
            trial_cost = float(np.sum(residual(trial) ** 2))
            if trial_cost <= cost:
                break
            alpha *= 0.5
        else:
            message = "no descent along the Gauss-Newton step"
            break
        moved = float(np.max(np.abs(trial - theta)))
        theta, cost = trial, trial_cost
        if moved <= 1e-15 * (1.0 + float(np.max(np.abs(theta)))):
            message = "converged"
            break
    res = float(np.max(np.abs(residual(theta))))
    scale = theta[0] if theta[0] > 1e-12 else 1.0
    theta = theta / scale

    Psi = np.zeros(nc)
    for r, j in enumerate(active):
        Psi[j] = theta[1 + r]
    atoms = tuple((float(traj.t[k]), float(theta[1 + len(active) + r])) for r, k in enumerate(atom_nodes))
    lam = integrate_costate(spec, traj, float(theta[0]), Psi, atoms)
    converged = res <= tol.fit_tol
    result = FitResult(lam, res, iterations, converged, message)
    if not converged:
        raise MultiplierFitError(f"multiplier fit residual {res:.3e} exceeds fit_tol = {tol.fit_tol:g}", result)
    return result


# -- checks --------------------------------------------------------------------

def check_nontrivial(lam: Multiplier, eps: float = 1e-14) -> bool:
    """``(beta, Psi, dmu) != 0``."""
    return bool(lam.beta > eps or np.any(np.abs(lam.Psi) > eps) or np.any(lam.atom_mass > eps)
                or np.any(np.abs(lam.nu) > eps))


def check_boundary(spec: ProblemSpec, traj: Trajectory, lam: Multiplier) -> dict:
    """Residuals of ``(-p(0-), p(T+)) = D ell`` and of the sign conditions on Psi."""
    d = spec.lagrangian_grad(lam.beta, lam.Psi, traj.x[0], traj.x[-1])
    r0 = lam.p_minus[0] + d[:spec.n]
    rT = lam.p_plus[-1] - d[spec.n:]
    sign = 0.0
    compl = 0.0
    if spec.n2:
        vals = spec.Phi(spec.endpoint(traj.x[0], traj.x[-1]))
        psi_i = lam.Psi[spec.n1:]
        sign = float(np.max(np.maximum(0.0, -psi_i)))
        compl = float(np.max(np.abs(psi_i * vals[spec.n1:])))
    return {"p0_residual": float(np.max(np.abs(r0))), "pT_residual": float(np.max(np.abs(rT))),
            "psi_sign_violation": sign, "psi_complementarity": compl,
            "beta_nonnegative": lam.beta >= 0.0, "atoms_nonnegative": bool(np.all(lam.atom_mass >= 0.0))}


@dataclass(frozen=True)
class StationarityReport:
    passed: bool
    worst: float
    tol: float
    per_arc: tuple[dict, ...]


def _hu_samples(spec: ProblemSpec, traj: Trajectory, lam: Multiplier) -> np.ndarray:
    P, _ = costate_samples(spec, traj, lam)
    return np.einsum("nsi,nsi->ns", P, spec.f1(interval_states(spec, traj)))


def check_stationarity(spec: ProblemSpec, traj: Trajectory, lam: Multiplier, tol: float = 1e-6) -> StationarityReport:
    """Minimum condition of the pre-Hamiltonian on every arc.

    B- needs ``H_u >= -tol``, B+ needs ``H_u <= tol`` and S, C need
    ``|H_u| <= tol``; ``tol`` is scaled by ``max(1, max|p|)``.
    """
    scale = max(1.0, float(np.max(np.abs(lam.p_plus))), float(np.max(np.abs(lam.p_minus))))
    tol_s = tol * scale
    Hu = _hu_samples(spec, traj, lam)
    per_arc = []
    worst = 0.0
    for j, arc in enumerate(traj.arcs):
        sel = traj.interval_arc == j
        if not sel.any():
            continue
        vals = Hu[sel]
        if arc.kind == "Bminus":
            viol = np.maximum(0.0, -vals)
        elif arc.kind == "Bplus":
            viol = np.maximum(0.0, vals)
        else:
            viol = np.abs(vals)
        v = float(viol.max())
        worst = max(worst, v)
        per_arc.append({"arc": j, "kind": arc.kind, "t_start": arc.t_start, "t_end": arc.t_end,
                        "worst_violation": v, "passed": v <= tol_s})
    return StationarityReport(worst <= tol_s, worst, tol_s, tuple(per_arc))


@dataclass(frozen=True)
class JumpRecord:
    t: float
    kind: str               # junction label such as "BC", or "endpoint"
    u_jump: float
    mu_jump: float
    p_jump_residual: float  # |[p] + [mu] g'|
    uHu: float              # [u][H_u]
    mu_dg: float            # [mu][d/dt g]
    mu_continuity_ok: bool
    passed: bool


_SHORT = {"Bminus": "B", "Bplus": "B", "C": "C", "S": "S"}


def check_jumps(spec: ProblemSpec, traj: Trajectory, lam: Multiplier, tol: Tolerances | None = None) -> list[JumpRecord]:
    """Jump conditions at interior junctions and at atoms placed at 0 or T."""
    tol = tol or Tolerances()
    u_minus, u_plus = control_limits(spec, traj, tol.fo_min)
    gv = spec.gval(traj.x)
    out = []
    rows = [(k, _SHORT[a] + _SHORT[b]) for k, a, b in traj.junctions]
    rows += [(k, "endpoint") for k in (0, traj.N) if lam.atom_mass[k] != 0.0]
    for k, label in rows:
        x = traj.x[k]
        gp = spec.gprime(x)
        f1 = spec.f1(x)
        m = float(lam.atom_mass[k])
        dp = lam.p_plus[k] - lam.p_minus[k]
        pres = float(np.max(np.abs(dp + m * gp)))
        if label == "endpoint":
            out.append(JumpRecord(float(traj.t[k]), label, 0.0, m, pres, 0.0, 0.0, True, pres <= tol.jump_tol))
            continue
        du = float(u_plus[k] - u_minus[k])
        dHu = float(dp @ f1)
        uHu = du * dHu
        mu_dg = m * du * float(gp @ f1)
        mu_ok = not (abs(du) >= tol.jump_min and abs(gv[k]) <= tol.tol_g) or abs(m) <= tol.jump_tol
        ok = pres <= tol.jump_tol and abs(uHu) <= tol.jump_tol and abs(mu_dg) <= tol.jump_tol and mu_ok
        out.append(JumpRecord(float(traj.t[k]), label, du, m, pres, uHu, mu_dg, mu_ok, ok))
    return out


@dataclass(frozen=True)
class ComplementarityReport:
    passed: bool
    margin: float
    details: tuple[dict, ...]


def check_strict_complementarity(spec: ProblemSpec, traj: Trajectory, lams: Sequence[Multiplier],
                                 sc_margin: float = 1e-6) -> ComplementarityReport:
    """Strict complementarity for the control bounds over a finite multiplier list.

    On B- the best multiplier must give ``H_u > sc_margin`` (``< -sc_margin``
    on B+) at every node of the arc interior, excluding nodes within one grid
    step of an interior junction; end times in a B arc are checked with the
    boundary costate values.
    """
    if not lams:
        raise ValueError("empty multiplier list")
    details = []
    margin = math.inf
    junction_t = np.array([traj.t[k] for k, _, _ in traj.junctions])
    for j, arc in enumerate(traj.arcs):
        if arc.kind not in ("Bminus", "Bplus"):
            continue
        sign = 1.0 if arc.kind == "Bminus" else -1.0
        sel = np.flatnonzero(traj.interval_arc == j)
        nodes = np.unique(np.concatenate([sel, sel + 1]))
        keep = []
        for k in nodes:
            if k in (0, traj.N):
                continue
            step = max(traj.h[min(k, traj.N - 1)], traj.h[k - 1])
            if junction_t.size and np.min(np.abs(junction_t - traj.t[k])) <= step * (1 + 1e-9):
                continue
            keep.append(k)
        keep = np.array(keep, dtype=int)
        best = np.full(keep.size, -np.inf)
        for lam in lams:
            if keep.size:
                hu = np.einsum("ki,ki->k", lam.p_plus[keep], spec.f1(traj.x[keep]))
                best = np.maximum(best, sign * hu)
        interior = float(best.min()) if keep.size else math.inf
        ends = {}
        for k, p_key in ((0, "p_minus"), (traj.N, "p_plus")):
            if k in nodes:
                v = max(sign * float(getattr(lam, p_key)[k] @ spec.f1(traj.x[k])) for lam in lams)
                ends["t0" if k == 0 else "tT"] = v
        arc_margin = min([interior, *ends.values()])
        margin = min(margin, arc_margin)
        details.append({"arc": j, "kind": arc.kind, "interior_margin": interior, **{f"endpoint_{a}": b for a, b in ends.items()},
                        "passed": arc_margin > sc_margin})
    return ComplementarityReport(margin > sc_margin, margin, tuple(details))


def check_weak_complementarity(spec: ProblemSpec, traj: Trajectory, lams: Sequence[Multiplier],
                               sc_margin: float = 1e-6, tol_g: float = 1e-7) -> ComplementarityReport:
    """Support of the measure equals the contact set for some multiplier.

    Requires ``nu > sc_margin`` on every C sample and atoms only at nodes
    where the state constraint is active.
    """
    if not lams:
        raise ValueError("empty multiplier list")
    gv = spec.gval(traj.x)
    details = []
    best = -math.inf
    ok_any = False
    cmask = traj.kind_mask("C")
    for idx, lam in enumerate(lams):
        _, NU = costate_samples(spec, traj, lam)
        nu_min = float(NU[cmask].min()) if cmask.any() else math.inf
        bad_atoms = [float(traj.t[k]) for k in np.flatnonzero(lam.atom_mass > 0) if abs(gv[k]) > tol_g]
        ok = nu_min > sc_margin and not bad_atoms
        ok_any |= ok
        best = max(best, nu_min)
        details.append({"multiplier": idx, "nu_min": nu_min, "atoms_off_contact": bad_atoms, "passed": ok})
    return ComplementarityReport(ok_any, best, tuple(details))


def integral_identity(spec: ProblemSpec, traj: Trajectory, lam: Multiplier, v, z: np.ndarray,
                      z_mid: np.ndarray):
    """Both sides of ``int g'z dmu + D ell (z0, zT) = int H_u v dt``.

    ``z`` holds node values and ``z_mid`` interval midpoints of the
    linearized state.  With a leading batch axis (``v`` of shape (K, N))
    both sides are returned as arrays of length K.
    """
    v = np.asarray(v, dtype=float)
    xs = interval_states(spec, traj)
    P, NU = costate_samples(spec, traj, lam)
    Z = np.stack([z[..., :-1, :], z_mid, z[..., 1:, :]], axis=-2)          # (..., N, 3, n)
    W = traj.h[:, None] * SIMPSON[None, :]
    gz = np.einsum("nsi,...nsi->...ns", spec.gprime(xs), Z)
    lhs = np.einsum("ns,...ns->...", W * NU, gz)
    gp_nodes = spec.gprime(traj.x)
    lhs = lhs + np.einsum("k,ki,...ki->...", lam.atom_mass, gp_nodes, z)
    d = spec.lagrangian_grad(lam.beta, lam.Psi, traj.x[0], traj.x[-1])
    lhs = lhs + np.einsum("i,...i->...", d[:spec.n], z[..., 0, :]) + np.einsum("i,...i->...", d[spec.n:], z[..., -1, :])
    Hu = np.einsum("nsi,nsi->ns", P, spec.f1(xs))
    rhs = np.einsum("ns,...n->...", W * Hu, v)
    if v.ndim == 1:
        return float(lhs), float(rhs)
    return lhs, rhs


def lagrangian_function(spec: ProblemSpec, traj: Trajectory, lam: Multiplier, nu_samples: np.ndarray) -> float:
    """``ell(x0, xT) + int g(x) dmu`` for a trajectory satisfying the state
    equation, with the measure of ``lam`` (density samples ``nu_samples`` of
    shape (N, 3) plus atoms) held fixed."""
    xs = interval_states(spec, traj)
    val = spec.lagrangian_value(lam.beta, lam.Psi, traj.x[0], traj.x[-1])
    val += simpson(traj, spec.gval(xs) * nu_samples)
    return float(val + np.sum(lam.atom_mass * spec.gval(traj.x)))
