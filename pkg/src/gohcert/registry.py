"""Builtin instances with known optimal trajectories and multipliers.

``REG1``  two-state problem whose constraint arc ends with an atom at T.
``CB1``   three-state problem with a bang / constrained / bang structure
          (Lagrange cost in an augmented state), critical cone {0}.
``CBQ``   ``CB1`` with running cost ``x1 + x1^2/2``; same trajectory, the
          density on the constrained arc is ``1 + x1`` (non-constant).
``SR1``   singular regulator, fully singular control, ``R = 1``; coercive.
``SRN``   same family with a destabilizing running cost; Omega indefinite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .multipliers import MultiplierSeed
from .polynomial import endpoint_names, poly_from_table, state_names
from .problem import ProblemSpec
from .trajectory import Arc, Trajectory, integrate_state, make_grid

__all__ = ["RegistryEntry", "registry_names", "registry_get", "singular_regulator"]

DEFAULT_N = 400


@dataclass(frozen=True, eq=False)
class RegistryEntry:
    name: str
    spec: ProblemSpec
    traj: Trajectory
    seed: MultiplierSeed
    description: str


def _spec(name, n, n1, n2, f0, f1, g, phi, Phi, u_min, u_max, T) -> ProblemSpec:
    xs, ep = state_names(n), endpoint_names(n)
    return ProblemSpec(
        n=n, n1=n1, n2=n2,
        f0=poly_from_table(f0, xs, n),
        f1=poly_from_table(f1, xs, n),
        g=poly_from_table(g, xs, 1),
        phi=poly_from_table(phi, ep, 1),
        Phi=poly_from_table(Phi, ep, n1 + n2) if n1 + n2 else None,
        u_min=u_min, u_max=u_max, T=T, name=name,
    )


def _sample(spec: ProblemSpec, arcs: list[Arc], control: Callable[[float], float], x0, N: int) -> Trajectory:
    """Midpoint samples of the control on a grid that contains all junctions."""
    t = make_grid(spec.T, [a.t_end for a in arcs[:-1]], N)
    mids = 0.5 * (t[:-1] + t[1:])
    u = np.array([control(m) for m in mids])
    return integrate_state(spec, u, x0, t, arcs)


def _reg1(N: int) -> RegistryEntry:
    spec = _spec("REG1", 2, 2, 0,
                 f0={"x1": [0, 1]}, f1={"1": [1, 0]}, g={"x1": -1.0},
                 phi={"xT_1": 1.0, "xT_2": 1.0},
                 Phi={"x0_1": [1, 0], "x0_2": [0, 1], "1": [-1, 0]},
                 u_min=-1.0, u_max=1.0, T=2.0)
    arcs = [Arc("Bminus", 0.0, 1.0), Arc("C", 1.0, 2.0)]
    traj = _sample(spec, arcs, lambda t: -1.0 if t < 1.0 else 0.0, [1.0, 0.0], N)
    seed = MultiplierSeed(1.0, (-1.0, -1.0), ((2.0, 1.0),))
    return RegistryEntry("REG1", spec, traj, seed, "bang arc then constraint arc, terminal atom")


def _cb(name: str, running: dict, N: int, seed: MultiplierSeed, desc: str) -> RegistryEntry:
    spec = _spec(name, 3, 3, 0,
                 f0={"1": [0, 1, 0], "x1": [0, 0, running.get("x1", 0.0)],
                     "x1^2": [0, 0, running.get("x1^2", 0.0)]},
                 f1={"1": [1, 0, 0]},
                 g={"x2^2": -1.0, "x2": 2.0, "1": -1.0, "x1": -1.0},
                 phi={"xT_3": 1.0},
                 Phi={"x0_1": [1, 0, 0], "x0_2": [0, 1, 0], "x0_3": [0, 0, 1], "1": [-1, 0, 0]},
                 u_min=-1.0, u_max=1.0, T=2.0)
    arcs = [Arc("Bminus", 0.0, 1.0), Arc("C", 1.0, 1.5), Arc("Bminus", 1.5, 2.0)]

    def control(t: float) -> float:
        return -2.0 * (t - 1.0) if 1.0 < t < 1.5 else -1.0

    traj = _sample(spec, arcs, control, [1.0, 0.0, 0.0], N)
    return RegistryEntry(name, spec, traj, seed, desc)


def _cb1(N: int) -> RegistryEntry:
    return _cb("CB1", {"x1": 1.0}, N, MultiplierSeed(1.0, (-1.0, 0.75, -1.0), ((1.5, 0.5),)),
               "bang / constraint / bang, continuous control at the exit junction")


def _cbq(N: int) -> RegistryEntry:
    # p1 after the exit time is int_t^2 (1 + x1) ds = 1/4 at t = 3/2, hence the atom;
    # p(0) = (3/2, -15/32, 1)
    return _cb("CBQ", {"x1": 1.0, "x1^2": 0.5}, N, MultiplierSeed(1.0, (-1.5, 15.0 / 32.0, -1.0), ((1.5, 0.25),)),
               "CB1 trajectory with a quadratic running cost, non-constant density")


def singular_regulator(r: float = 1.0, a: float = 1.0, c: float = 2.0, T: float = 1.0,
                       N: int = DEFAULT_N, name: str = "SR") -> RegistryEntry:
    """``x1' = u, x2' = x1, x3' = (r x1^2 - a x2^2)/2``, cost ``x3(T) + c x1(T)^2/2``.

    With ``x0 = 0`` the control ``u = 0`` is singular on the whole horizon,
    ``p = (0, 0, 1)``, ``R = r`` and on the critical cone

        Omega = int (r y^2 - a xi2^2) dt + c h^2,   xi2' = y.

    For ``r = 1`` the coercivity constant is ``min(c, 1 - 4 a T^2 / pi^2)``.
    """
    spec = _spec(name, 3, 3, 0,
                 f0={"x1": [0, 1, 0], "x1^2": [0, 0, 0.5 * r], "x2^2": [0, 0, -0.5 * a]},
                 f1={"1": [1, 0, 0]},
                 g={"x1": 1.0, "1": -1.0},
                 phi={"xT_3": 1.0, "xT_1^2": 0.5 * c},
                 Phi={"x0_1": [1, 0, 0], "x0_2": [0, 1, 0], "x0_3": [0, 0, 1]},
                 u_min=-1.0, u_max=1.0, T=T)
    arcs = [Arc("S", 0.0, T)]
    traj = _sample(spec, arcs, lambda t: 0.0, [0.0, 0.0, 0.0], N)
    return RegistryEntry(name, spec, traj, MultiplierSeed(1.0, (0.0, 0.0, -1.0), ()),
                         f"singular regulator r={r:g}, a={a:g}, c={c:g}, T={T:g}")


def sr_rho(r: float = 1.0, a: float = 1.0, c: float = 2.0, T: float = 1.0) -> float:
    """Exact smallest ratio Omega / gamma on the SR critical cone (r = 1 scaling)."""
    return min(c, r - 4.0 * a * T ** 2 / math.pi ** 2)


_BUILDERS: dict[str, Callable[[int], RegistryEntry]] = {
    "REG1": _reg1,
    "CB1": _cb1,
    "CBQ": _cbq,
    "SR1": lambda N: singular_regulator(1.0, 1.0, 2.0, 1.0, N, "SR1"),
    "SRN": lambda N: singular_regulator(1.0, 4.0, 2.0, 1.0, N, "SRN"),
}


def registry_names() -> list[str]:
    return list(_BUILDERS)


def registry_get(name: str, N: int = DEFAULT_N) -> RegistryEntry:
    """Problem, sampled optimal trajectory and multiplier seed of a builtin."""
    key = name.upper()
    if key not in _BUILDERS:
        raise KeyError(f"unknown registry instance {name!r}; known: {registry_names()}")
    return _BUILDERS[key](int(N))
