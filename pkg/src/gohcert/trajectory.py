"""Grid-sampled trajectories with a declared arc structure.

The control is piecewise constant on the grid (one value per interval), the
state is stored at the nodes.  Arc types are declared, never inferred, and
every junction time must be a grid node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .problem import ProblemSpec
from .tolerances import Tolerances

__all__ = [
    "ARC_KINDS",
    "Arc",
    "Trajectory",
    "Finding",
    "FirstOrderResult",
    "IntegrationError",
    "make_grid",
    "rk4_step",
    "integrate_state",
    "dynamics_residual",
    "validate_arcs",
    "check_first_order",
    "constrained_control",
    "control_limits",
    "interval_states",
]

ARC_KINDS = ("Bminus", "Bplus", "C", "S")


class IntegrationError(RuntimeError):
    def __init__(self, message: str, node: int):
        super().__init__(message)
        self.node = node


@dataclass(frozen=True)
class Arc:
    kind: str
    t_start: float
    t_end: float

    def __post_init__(self):
        if self.kind not in ARC_KINDS:
            raise ValueError(f"unknown arc kind {self.kind!r}; expected one of {ARC_KINDS}")
        if not self.t_end > self.t_start:
            raise ValueError(f"arc {self.kind} has empty interval [{self.t_start}, {self.t_end}]")


@dataclass(frozen=True, eq=False)
class Trajectory:
    t: np.ndarray                 # (N+1,) nodes
    u: np.ndarray                 # (N,) control per interval
    x: np.ndarray                 # (N+1, n) state per node
    arcs: tuple[Arc, ...] = field(default=())

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        u = np.asarray(self.u, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if t.ndim != 1 or t.size < 2 or not np.all(np.diff(t) > 0):
            raise ValueError("grid nodes must be strictly increasing with at least two nodes")
        if u.shape != (t.size - 1,):
            raise ValueError(f"expected {t.size - 1} control values, got shape {u.shape}")
        if x.ndim != 2 or x.shape[0] != t.size:
            raise ValueError(f"expected {t.size} state samples, got shape {x.shape}")
        for arr in (t, u, x):
            arr.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "arcs", tuple(self.arcs))

    @property
    def N(self) -> int:
        return self.u.size

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.t)

    @property
    def T(self) -> float:
        return float(self.t[-1])

    def with_arcs(self, arcs: Sequence[Arc]) -> "Trajectory":
        return Trajectory(self.t, self.u, self.x, tuple(arcs))

    def node_index(self, time: float) -> int | None:
        """Index of the node at ``time`` (relative tolerance 1e-12), or None."""
        k = int(np.argmin(np.abs(self.t - time)))
        return k if abs(self.t[k] - time) <= 1e-12 * max(1.0, abs(self.T)) else None

    @cached_property
    def interval_arc(self) -> np.ndarray:
        """Arc index of every interval (-1 where no arc covers it)."""
        mids = 0.5 * (self.t[:-1] + self.t[1:])
        out = np.full(self.N, -1, dtype=int)
        for j, arc in enumerate(self.arcs):
            out[(mids > arc.t_start) & (mids < arc.t_end)] = j
        return out

    @cached_property
    def interval_kind(self) -> np.ndarray:
        kinds = np.array([a.kind for a in self.arcs] + ["?"], dtype=object)
        return kinds[self.interval_arc]

    def kind_mask(self, *kinds: str) -> np.ndarray:
        return np.isin(self.interval_kind.astype(str), kinds)

    @cached_property
    def junctions(self) -> list[tuple[int, str, str]]:
        """Interior junctions as (node index, kind before, kind after)."""
        out = []
        for a, b in zip(self.arcs[:-1], self.arcs[1:]):
            k = self.node_index(a.t_end)
            if k is not None:
                out.append((k, a.kind, b.kind))
        return out


# -- integration ---------------------------------------------------------------

def make_grid(T: float, breakpoints: Sequence[float], N: int) -> np.ndarray:
    """About ``N`` intervals on [0, T] with every breakpoint as an exact node.

    Intervals are distributed over the pieces in proportion to their length
    (at least one per piece).
    """
    pts = sorted({0.0, float(T), *[float(b) for b in breakpoints if 0.0 < b < T]})
    lengths = np.diff(pts)
    counts = np.maximum(1, np.round(N * lengths / T).astype(int))
    nodes = [np.array([pts[0]])]
    for a, b, m in zip(pts[:-1], pts[1:], counts):
        seg = a + (b - a) * np.arange(1, m + 1) / m
        seg[-1] = b
        nodes.append(seg)
    return np.concatenate(nodes)


def rk4_step(rhs, t: float, y: np.ndarray, h: float) -> np.ndarray:
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_state(spec: ProblemSpec, u, x0, t, arcs: Sequence[Arc] = ()) -> Trajectory:
    """Classical RK4, one step per interval, control frozen on each interval."""
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (spec.n,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({spec.n},)")
    if u.shape != (t.size - 1,):
        raise ValueError("need one control value per grid interval")
    x = np.empty((t.size, spec.n))
    x[0] = x0
    for i in range(t.size - 1):
        ui = u[i]
        x[i + 1] = rk4_step(lambda _s, y: spec.f(ui, y), t[i], x[i], t[i + 1] - t[i])
        if not np.all(np.isfinite(x[i + 1])):
            raise IntegrationError(f"state became non-finite at node {i + 1} (t={t[i + 1]:g})", i + 1)
    return Trajectory(t, u, x, tuple(arcs))


def dynamics_residual(spec: ProblemSpec, traj: Trajectory) -> np.ndarray:
    """Per-interval ``|RK4(x_i) - x_{i+1}| / (1 + |x_{i+1}|)``, all steps at once."""
    u = traj.u
    step = rk4_step(lambda _s, y: spec.f(u, y), 0.0, traj.x[:-1], traj.h[:, None])
    return np.linalg.norm(step - traj.x[1:], axis=1) / (1.0 + np.linalg.norm(traj.x[1:], axis=1))


def interval_states(spec: ProblemSpec, traj: Trajectory) -> np.ndarray:
    """States at (left node, midpoint, right node) of every interval, (N, 3, n).

    The midpoint comes from cubic Hermite interpolation with one-sided
    derivatives ``f(u_i, x)``, which is fourth-order accurate.
    """
    xl, xr = traj.x[:-1], traj.x[1:]
    dl = spec.f(traj.u, xl)
    dr = spec.f(traj.u, xr)
    xm = 0.5 * (xl + xr) + (traj.h / 8.0)[:, None] * (dl - dr)
    return np.stack([xl, xm, xr], axis=1)


# -- constrained arcs ----------------------------------------------------------

def constrained_control(spec: ProblemSpec, x, fo_min: float = 1e-6) -> float:
    """Feedback control keeping ``d/dt g(x) = 0``: ``-g'f0 / g'f1``."""
    x = np.asarray(x, dtype=float)
    gp = spec.gprime(x)
    den = float(gp @ spec.f1(x))
    if abs(den) < fo_min:
        raise ZeroDivisionError(f"|g'(x) f1(x)| = {abs(den):.3g} is below fo_min = {fo_min:g}")
    return -float(gp @ spec.f0(x)) / den


def control_limits(spec: ProblemSpec, traj: Trajectory, fo_min: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """One-sided control limits ``(u(t_k-), u(t_k+))`` at every node.

    B arcs give the bound, C arcs the feedback law at the node, S arcs a
    linear extrapolation of the neighbouring interval values within the arc.
    Conventions ``u(0-) = u(0+)`` and ``u(T+) = u(T-)``.
    """
    N = traj.N
    mids = 0.5 * (traj.t[:-1] + traj.t[1:])
    kinds = traj.interval_kind
    arc_of = traj.interval_arc

    def limit(i: int, k: int) -> float:
        kind = kinds[i]
        if kind == "Bminus":
            return spec.u_min
        if kind == "Bplus":
            return spec.u_max
        if kind == "C":
            try:
                return constrained_control(spec, traj.x[k], fo_min)
            except ZeroDivisionError:
                return float(traj.u[i])
        j = i + 1 if k == i else i - 1   # neighbour on the far side from node k
        if 0 <= j < N and arc_of[j] == arc_of[i]:
            slope = (traj.u[j] - traj.u[i]) / (mids[j] - mids[i])
            return float(traj.u[i] + slope * (traj.t[k] - mids[i]))
        return float(traj.u[i])

    u_plus = np.empty(N + 1)
    u_minus = np.empty(N + 1)
    for k in range(N + 1):
        u_plus[k] = limit(k, k) if k < N else np.nan
        u_minus[k] = limit(k - 1, k) if k > 0 else np.nan
    u_minus[0] = u_plus[0]
    u_plus[N] = u_minus[N]
    return u_minus, u_plus


# -- validation ----------------------------------------------------------------

@dataclass(frozen=True)
class Finding:
    kind: str
    severity: str          # "error", "hypothesis" or "note"
    message: str
    t: float | None = None
    value: float | None = None


def validate_arcs(spec: ProblemSpec, traj: Trajectory, tol: Tolerances | None = None) -> list[Finding]:
    """Check the declared arc structure against the trajectory.

    Returns findings (never raises): structural problems and infeasibility
    have severity ``error``; violations of the geometric hypotheses
    (distance to the bounds on C/S arcs, control jump at CS/SC junctions)
    have severity ``hypothesis``; continuous BC/CB junctions are reported as
    ``note``.
    """
    tol = tol or Tolerances()
    out: list[Finding] = []
    arcs = traj.arcs
    T = traj.T
    eps_t = 1e-12 * max(1.0, T)

    # (i) finite partition
    if not arcs:
        return [Finding("Structure", "error", "no arcs declared")]
    if abs(arcs[0].t_start) > eps_t:
        out.append(Finding("Structure", "error", "first arc does not start at 0", arcs[0].t_start))
    if abs(arcs[-1].t_end - T) > eps_t:
        out.append(Finding("Structure", "error", "last arc does not end at T", arcs[-1].t_end))
    if abs(T - spec.T) > eps_t:
        out.append(Finding("Structure", "error", f"grid ends at {T:g} but the horizon is {spec.T:g}", T))
    for a, b in zip(arcs[:-1], arcs[1:]):
        if abs(a.t_end - b.t_start) > eps_t:
            out.append(Finding("Structure", "error", f"gap or overlap between arcs at {a.t_end:g}/{b.t_start:g}", a.t_end))
        if a.kind == b.kind:
            out.append(Finding("Structure", "error", f"consecutive arcs of the same kind {a.kind}", a.t_end))
        if traj.node_index(a.t_end) is None:
            out.append(Finding("Structure", "error", f"junction time {a.t_end:g} is not a grid node", a.t_end))
    for arc in arcs:
        if arc.kind == "Bminus" and not math.isfinite(spec.u_min):
            out.append(Finding("Structure", "error", "Bminus arc with u_min = -inf", arc.t_start))
        if arc.kind == "Bplus" and not math.isfinite(spec.u_max):
            out.append(Finding("Structure", "error", "Bplus arc with u_max = +inf", arc.t_start))
    if np.any(traj.interval_arc < 0):
        i = int(np.argmax(traj.interval_arc < 0))
        out.append(Finding("Structure", "error", "interval not covered by any arc", float(traj.t[i])))
    if traj.x.shape[1] != spec.n:
        out.append(Finding("Structure", "error", "state dimension does not match the problem"))
        return out

    # state equation
    res = dynamics_residual(spec, traj)
    worst = int(np.argmax(res))
    if res[worst] > tol.tol_dyn:
        out.append(Finding("DynamicsResidual", "error",
                           f"RK4 step misses the stored state by {res[worst]:.3e} (relative)",
                           float(traj.t[worst]), float(res[worst])))

    kinds = traj.interval_kind
    # bounds on B arcs (exact), and feasibility of u elsewhere
    for i in range(traj.N):
        ui = traj.u[i]
        if kinds[i] == "Bminus" and ui != spec.u_min:
            out.append(Finding("BoundArc", "error", f"u = {ui:g} on a Bminus interval", float(traj.t[i]), float(ui)))
        elif kinds[i] == "Bplus" and ui != spec.u_max:
            out.append(Finding("BoundArc", "error", f"u = {ui:g} on a Bplus interval", float(traj.t[i]), float(ui)))
        elif ui < spec.u_min or ui > spec.u_max:
            out.append(Finding("ControlBounds", "error", f"u = {ui:g} outside the bounds", float(traj.t[i]), float(ui)))

    # state constraint
    gv = spec.gval(traj.x)
    on_c = np.zeros(traj.N + 1, dtype=bool)
    cmask = traj.kind_mask("C")
    on_c[:-1] |= cmask
    on_c[1:] |= cmask
    bad_c = np.flatnonzero(on_c & (np.abs(gv) > tol.tol_g))
    if bad_c.size:
        k = bad_c[np.argmax(np.abs(gv[bad_c]))]
        out.append(Finding("ConstraintArc", "error", f"|g(x)| = {abs(gv[k]):.3e} on a C arc",
                           float(traj.t[k]), float(gv[k])))
    bad = np.flatnonzero(~on_c & (gv > tol.tol_g))
    if bad.size:
        k = bad[np.argmax(gv[bad])]
        out.append(Finding("StateConstraint", "error", f"g(x) = {gv[k]:.3e} > 0", float(traj.t[k]), float(gv[k])))

    # (ii) distance of the control to the bounds on C and S arcs
    span = spec.u_max - spec.u_min
    dist_min = tol.dist_min_rel * span if math.isfinite(span) else tol.dist_min_rel
    u_minus, u_plus = control_limits(spec, traj, tol.fo_min)
    cs = traj.kind_mask("C", "S")
    samples: list[tuple[float, float]] = [(float(traj.t[i]), float(traj.u[i])) for i in np.flatnonzero(cs)]
    for i in np.flatnonzero(traj.kind_mask("C")):
        samples.append((float(traj.t[i]), float(u_plus[i])))
        samples.append((float(traj.t[i + 1]), float(u_minus[i + 1])))
    if samples:
        dists = [(min(uv - spec.u_min, spec.u_max - uv), tt) for tt, uv in samples]
        dmin, tmin = min(dists)
        if dmin < dist_min:
            out.append(Finding("BoundsDistance", "hypothesis",
                               f"control within {dmin:.3e} of a bound on a C/S arc (need >= {dist_min:.3e})",
                               tmin, float(dmin)))

    # (iii) control discontinuity at CS / SC junctions; note continuous BC / CB junctions
    for k, before, after in traj.junctions:
        jump = float(u_plus[k] - u_minus[k])
        pair = {before, after}
        if pair == {"C", "S"} and abs(jump) < tol.jump_min:
            out.append(Finding("JunctionContinuity", "hypothesis",
                               f"control continuous at {before}->{after} junction", float(traj.t[k]), jump))
        elif "C" in pair and pair & {"Bminus", "Bplus"} and abs(jump) < tol.jump_min:
            out.append(Finding("ContinuousJunction", "note",
                               f"control continuous at the {before}->{after} junction; "
                               "the discontinuity hypothesis only concerns CS/SC junctions",
                               float(traj.t[k]), jump))
    return out


@dataclass(frozen=True)
class FirstOrderResult:
    margin: float
    passed: bool
    note: str = ""


def check_first_order(spec: ProblemSpec, traj: Trajectory, fo_min: float = 1e-6) -> FirstOrderResult:
    """Minimum of ``|g'(x) f1(x)|`` over the nodes of C arcs."""
    cmask = traj.kind_mask("C")
    if not cmask.any():
        return FirstOrderResult(math.inf, True, "no C arc")
    nodes = np.zeros(traj.N + 1, dtype=bool)
    nodes[:-1] |= cmask
    nodes[1:] |= cmask
    xs = traj.x[nodes]
    vals = np.abs(np.einsum("ki,ki->k", spec.gprime(xs), spec.f1(xs)))
    margin = float(vals.min())
    return FirstOrderResult(margin, margin >= fo_min)
