"""Control-affine problem data and pointwise derived quantities."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .polynomial import PolyMap

__all__ = [
    "ProblemSpec",
    "HamiltonianEval",
    "lie_bracket",
    "eval_dynamics",
    "eval_hamiltonian",
]


def lie_bracket(X: PolyMap, Y: PolyMap) -> PolyMap:
    """Polynomial Lie bracket ``[X, Y] = X' Y - Y' X``."""
    if X.nvars != Y.nvars or X.nout != X.nvars or Y.nout != Y.nvars:
        raise ValueError("lie_bracket needs two vector fields on the same R^n")
    out = PolyMap.zero(X.nvars, X.nvars)
    for j in range(X.nvars):
        out = out + X.diff(j).times_scalar_poly(Y.component(j))
        out = out - Y.diff(j).times_scalar_poly(X.component(j))
    return out


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Mayer problem ``min phi(x0, xT)`` for ``x' = f0(x) + u f1(x)``.

    Constraints: ``Phi(x0, xT)`` in ``{0}^n1 x R_-^n2``, ``u_min <= u <= u_max``
    and ``g(x) <= 0``.  ``phi`` and ``Phi`` are polynomials in the 2n endpoint
    variables ``(x0, xT)``.
    """

    n: int
    n1: int
    n2: int
    f0: PolyMap
    f1: PolyMap
    g: PolyMap
    phi: PolyMap
    Phi: PolyMap | None
    u_min: float
    u_max: float
    T: float
    name: str = field(default="")

    def __post_init__(self):
        n = self.n
        if n < 1:
            raise ValueError("n must be positive")
        for nm, fld in (("f0", self.f0), ("f1", self.f1)):
            if fld.nvars != n or fld.nout != n:
                raise ValueError(f"{nm} must map R^{n} to R^{n}")
        if self.g.nvars != n or self.g.nout != 1:
            raise ValueError("g must be a scalar polynomial of x")
        if self.phi.nvars != 2 * n or self.phi.nout != 1:
            raise ValueError("phi must be a scalar polynomial of (x0, xT)")
        nc = self.n1 + self.n2
        if self.n1 < 0 or self.n2 < 0:
            raise ValueError("n1, n2 must be nonnegative")
        if nc == 0:
            if self.Phi is not None:
                raise ValueError("Phi given but n1 + n2 = 0")
        elif self.Phi is None or self.Phi.nvars != 2 * n or self.Phi.nout != nc:
            raise ValueError(f"Phi must map R^{2 * n} to R^{nc}")
        if not (self.u_min < self.u_max):
            raise ValueError("need u_min < u_max")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError("horizon T must be positive and finite")

    @property
    def nc(self) -> int:
        return self.n1 + self.n2

    @property
    def bounds_finite(self) -> bool:
        return math.isfinite(self.u_min) and math.isfinite(self.u_max)

    # -- brackets (exact, cached) ---------------------------------------------
    @cached_property
    def bracket_01(self) -> PolyMap:
        """``[f0, f1]``; equals the Goh field E along any trajectory."""
        return lie_bracket(self.f0, self.f1)

    @cached_property
    def bracket_10(self) -> PolyMap:
        return lie_bracket(self.f1, self.f0)

    @cached_property
    def bracket_01_1(self) -> PolyMap:
        return lie_bracket(self.bracket_01, self.f1)

    # -- pointwise evaluation (vectorized over leading axes) ------------------
    def _x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise ValueError(f"state has dimension {x.shape[-1]}, expected {self.n}")
        return x

    def f(self, u, x) -> np.ndarray:
        x = self._x(x)
        return self.f0(x) + np.asarray(u, dtype=float)[..., None] * self.f1(x)

    def A(self, u, x) -> np.ndarray:
        x = self._x(x)
        return self.f0.jacobian(x) + np.asarray(u, dtype=float)[..., None, None] * self.f1.jacobian(x)

    def gval(self, x) -> np.ndarray:
        return self.g(self._x(x))[..., 0]

    def gprime(self, x) -> np.ndarray:
        return self.g.jacobian(self._x(x))[..., 0, :]

    def ghess(self, x) -> np.ndarray:
        return self.g.hessian(self._x(x))[..., 0, :, :]

    def endpoint(self, x0, xT) -> np.ndarray:
        return np.concatenate([np.asarray(x0, float), np.asarray(xT, float)])

    def lagrangian_grad(self, beta: float, Psi, x0, xT) -> np.ndarray:
        """Gradient of ``beta*phi + Psi.Phi`` in ``(x0, xT)`` (length 2n)."""
        w = self.endpoint(x0, xT)
        out = beta * self.phi.jacobian(w)[0]
        if self.Phi is not None:
            out = out + np.asarray(Psi, float) @ self.Phi.jacobian(w)
        return out

    def lagrangian_hess(self, beta: float, Psi, x0, xT) -> np.ndarray:
        w = self.endpoint(x0, xT)
        out = beta * self.phi.hessian(w)[0]
        if self.Phi is not None:
            out = out + np.einsum("i,ijk->jk", np.asarray(Psi, float), self.Phi.hessian(w))
        return out

    def lagrangian_value(self, beta: float, Psi, x0, xT) -> float:
        w = self.endpoint(x0, xT)
        val = beta * float(self.phi(w)[0])
        if self.Phi is not None:
            val += float(np.asarray(Psi, float) @ self.Phi(w))
        return val

    def active_inequalities(self, x0, xT, tol: float = 1e-9) -> list[int]:
        """Indices (into Phi) of inequality rows active at (x0, xT)."""
        if self.Phi is None:
            return []
        vals = self.Phi(self.endpoint(x0, xT))
        return [i for i in range(self.n1, self.nc) if abs(vals[i]) <= tol]


def eval_dynamics(spec: ProblemSpec, u: float, x) -> np.ndarray:
    """``f0(x) + u f1(x)`` at a single point."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.n,):
        raise ValueError(f"state has shape {x.shape}, expected ({spec.n},)")
    return spec.f(u, x)


@dataclass(frozen=True)
class HamiltonianEval:
    H: float
    H_u: float
    H_x: np.ndarray
    H_ux: np.ndarray
    H_xx: np.ndarray


def eval_hamiltonian(spec: ProblemSpec, u: float, x, p) -> HamiltonianEval:
    """Pre-Hamiltonian ``p (f0(x) + u f1(x))`` and its derivatives."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if x.shape != (spec.n,) or p.shape != (spec.n,):
        raise ValueError("x and p must both have length n")
    f1x = spec.f1(x)
    J1 = spec.f1.jacobian(x)
    H2 = spec.f0.hessian(x) + u * spec.f1.hessian(x)
    return HamiltonianEval(
        H=float(p @ (spec.f0(x) + u * f1x)),
        H_u=float(p @ f1x),
        H_x=p @ spec.A(u, x),
        H_ux=p @ J1,
        H_xx=np.einsum("i,ijk->jk", p, H2),
    )
