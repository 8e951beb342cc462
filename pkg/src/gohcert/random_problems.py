"""Random polynomial test instances for the property suites.

Each instance is a problem of degree at most 2 with ``n <= 4`` states, a
declared S / C / S structure on [0, 1] with atoms at 1/3 and 1, a fixed
initial state plus random endpoint rows, and a multiplier obtained by
backward integration from ``beta = 1`` and random ``Psi``.
The trajectory is not required to be optimal (or even feasible for the
state constraint): the identities checked on these instances hold for any
trajectory and any multiplier solving the costate equation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .multipliers import Multiplier, integrate_costate
from .polynomial import PolyMap
from .problem import ProblemSpec
from .trajectory import Arc, Trajectory, integrate_state, make_grid

__all__ = ["RandomInstance", "random_instance", "random_poly"]


@dataclass(frozen=True, eq=False)
class RandomInstance:
    spec: ProblemSpec
    traj: Trajectory
    lam: Multiplier


def _exponents(nvars: int, max_deg: int):
    for deg in range(max_deg + 1):
        for combo in itertools.combinations_with_replacement(range(nvars), deg):
            e = [0] * nvars
            for j in combo:
                e[j] += 1
            yield tuple(e)


def random_poly(rng: np.random.Generator, nvars: int, nout: int, scale: float = 1.0, max_deg: int = 2,
                integer: bool = False) -> PolyMap:
    """Dense random polynomial map; ``integer`` draws coefficients in
    {-3, ..., 3} so that products and sums are exact in floating point."""
    def coef():
        if integer:
            return rng.integers(-3, 4, nout).astype(float)
        return scale * rng.standard_normal(nout)
    return PolyMap(nvars, nout, {e: coef() for e in _exponents(nvars, max_deg)})


def random_instance(rng: np.random.Generator, N: int = 120, n: int | None = None) -> RandomInstance:
    n = int(rng.integers(2, 5)) if n is None else n
    e1 = np.zeros(n)
    e1[0] = 1.0
    f0 = random_poly(rng, n, n, 0.3)
    f1 = PolyMap.constant(n, e1) + random_poly(rng, n, n, 0.05)
    g = PolyMap(n, 1, {tuple(int(j == 0) for j in range(n)): [1.0]}) + random_poly(rng, n, 1, 0.05)
    phi = random_poly(rng, 2 * n, 1, 0.5)
    n_extra = int(rng.integers(0, 3))
    x0 = 0.3 * rng.standard_normal(n)
    # fixed initial state rows x0_i - x0hat_i, followed by random rows
    fix = PolyMap(2 * n, n, {tuple(int(j == i) for j in range(2 * n)): np.eye(n)[i] for i in range(n)})
    fix = fix - PolyMap.constant(2 * n, x0)
    rows = [fix] + ([random_poly(rng, 2 * n, n_extra, 0.5)] if n_extra else [])
    Phi = PolyMap.stack(rows)
    n1 = n + n_extra
    spec = ProblemSpec(n=n, n1=n1, n2=0, f0=f0, f1=f1, g=g, phi=phi, Phi=Phi,
                       u_min=-10.0, u_max=10.0, T=1.0, name="random")
    arcs = [Arc("S", 0.0, 1.0 / 3.0), Arc("C", 1.0 / 3.0, 2.0 / 3.0), Arc("S", 2.0 / 3.0, 1.0)]
    t = make_grid(1.0, [1.0 / 3.0, 2.0 / 3.0], N)
    a, b, w = rng.standard_normal(3)
    mids = 0.5 * (t[:-1] + t[1:])
    u = 0.5 * a + 0.5 * b * np.sin(2.0 * np.pi * w * mids)
    traj = integrate_state(spec, u, x0, t, arcs)
    Psi = np.concatenate([np.zeros(n), rng.standard_normal(n_extra)])
    atoms = ((1.0 / 3.0, float(rng.uniform(0.1, 1.0))), (1.0, float(rng.uniform(0.1, 1.0))))
    lam = integrate_costate(spec, traj, 1.0, Psi, atoms)
    # the initial-state rows do not enter p(T+); choose them so that -p(0-) = D_x0 ell
    Psi[:n] = -lam.p_minus[0] - spec.lagrangian_grad(1.0, Psi, traj.x[0], traj.x[-1])[:n]
    lam = integrate_costate(spec, traj, 1.0, Psi, atoms)
    return RandomInstance(spec, traj, lam)
