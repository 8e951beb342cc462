"""Exact polynomial maps R^m -> R^k.

All vector fields, the state constraint, the cost and the endpoint map are
stored as coefficient tables keyed by multi-indices, so values, Jacobians
and Hessians are exact (no finite differences).
"""

from __future__ import annotations

import re
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "PolyMap",
    "parse_monomial",
    "format_monomial",
    "state_names",
    "endpoint_names",
    "poly_from_table",
    "poly_to_table",
]


def _grlex_key(exp: tuple[int, ...]) -> tuple:
    # graded lexicographic: total degree first, then x1 > x2 > ... within a degree
    return (sum(exp), tuple(-e for e in exp))


class PolyMap:
    """Polynomial map with ``nout`` outputs in ``nvars`` variables.

    ``terms`` maps exponent tuples to length-``nout`` coefficient vectors.
    Instances are immutable and canonical: zero terms are dropped and the
    table is kept in graded lexicographic order, so two equal maps compare
    equal and serialize identically.
    """

    def __init__(self, nvars: int, nout: int, terms: Mapping[tuple[int, ...], Sequence[float]] | None = None):
        if nvars < 0 or nout < 1:
            raise ValueError("need nvars >= 0 and nout >= 1")
        acc: dict[tuple[int, ...], np.ndarray] = {}
        for exp, coef in (terms or {}).items():
            exp = tuple(int(e) for e in exp)
            if len(exp) != nvars or any(e < 0 for e in exp):
                raise ValueError(f"bad multi-index {exp} for {nvars} variables")
            c = np.atleast_1d(np.asarray(coef, dtype=float))
            if c.shape != (nout,):
                raise ValueError(f"coefficient for {exp} has shape {c.shape}, expected ({nout},)")
            acc[exp] = acc.get(exp, np.zeros(nout)) + c
        keys = sorted((e for e, c in acc.items() if np.any(c != 0.0)), key=_grlex_key)
        self.nvars = nvars
        self.nout = nout
        exps = np.array(keys, dtype=np.int64).reshape(len(keys), nvars)
        coefs = np.array([acc[k] for k in keys], dtype=float).reshape(len(keys), nout)
        exps.setflags(write=False)
        coefs.setflags(write=False)
        self._exps = exps
        self._coefs = coefs

    # -- construction helpers -------------------------------------------------
    @classmethod
    def zero(cls, nvars: int, nout: int) -> PolyMap:
        return cls(nvars, nout, {})

    @classmethod
    def constant(cls, nvars: int, value: Sequence[float]) -> PolyMap:
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(nvars, value.size, {(0,) * nvars: value})

    @classmethod
    def stack(cls, rows: Sequence[PolyMap]) -> PolyMap:
        """Stack scalar (or vector) maps into one map with concatenated outputs."""
        if not rows:
            raise ValueError("empty stack")
        nvars = rows[0].nvars
        nout = sum(r.nout for r in rows)
        terms: dict[tuple[int, ...], np.ndarray] = {}
        off = 0
        for r in rows:
            if r.nvars != nvars:
                raise ValueError("inconsistent number of variables")
            for exp, c in r.terms():
                vec = terms.setdefault(exp, np.zeros(nout))
                vec[off:off + r.nout] += c
            off += r.nout
        return cls(nvars, nout, terms)

    def terms(self) -> Iterable[tuple[tuple[int, ...], np.ndarray]]:
        for e, c in zip(self._exps, self._coefs):
            yield tuple(int(v) for v in e), c

    @property
    def degree(self) -> int:
        return int(self._exps.sum(axis=1).max()) if len(self._exps) else 0

    def component(self, i: int) -> PolyMap:
        return PolyMap(self.nvars, 1, {e: c[i:i + 1] for e, c in self.terms()})

    # -- algebra --------------------------------------------------------------
    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PolyMap):
            return NotImplemented
        return (self.nvars == other.nvars and self.nout == other.nout
                and np.array_equal(self._exps, other._exps)
                and np.array_equal(self._coefs, other._coefs))

    def __hash__(self) -> int:
        return hash((self.nvars, self.nout, self._exps.tobytes(), self._coefs.tobytes()))

    def __repr__(self) -> str:
        return f"PolyMap(nvars={self.nvars}, nout={self.nout}, terms={len(self._exps)})"

    def _check(self, other: PolyMap) -> None:
        if self.nvars != other.nvars or self.nout != other.nout:
            raise ValueError("dimension mismatch")

    def __add__(self, other: PolyMap) -> PolyMap:
        self._check(other)
        terms = {e: c.copy() for e, c in self.terms()}
        for e, c in other.terms():
            terms[e] = terms.get(e, 0.0) + c
        return PolyMap(self.nvars, self.nout, terms)

    def __neg__(self) -> PolyMap:
        return PolyMap(self.nvars, self.nout, {e: -c for e, c in self.terms()})

    def __sub__(self, other: PolyMap) -> PolyMap:
        return self + (-other)

    def scale(self, a: float) -> PolyMap:
        return PolyMap(self.nvars, self.nout, {e: a * c for e, c in self.terms()})

    def __rmul__(self, a: float) -> PolyMap:
        return self.scale(float(a))

    def times_scalar_poly(self, s: PolyMap) -> PolyMap:
        """Pointwise product with a scalar polynomial ``s``."""
        if s.nout != 1 or s.nvars != self.nvars:
            raise ValueError("need a scalar polynomial in the same variables")
        terms: dict[tuple[int, ...], np.ndarray] = {}
        for e1, c1 in self.terms():
            for e2, c2 in s.terms():
                e = tuple(a + b for a, b in zip(e1, e2))
                terms[e] = terms.get(e, 0.0) + c1 * c2[0]
        return PolyMap(self.nvars, self.nout, terms)

    def diff(self, j: int) -> PolyMap:
        """Exact partial derivative with respect to variable ``j``."""
        terms: dict[tuple[int, ...], np.ndarray] = {}
        for e, c in self.terms():
            if e[j] == 0:
                continue
            e2 = list(e)
            e2[j] -= 1
            terms[tuple(e2)] = terms.get(tuple(e2), 0.0) + e[j] * c
        return PolyMap(self.nvars, self.nout, terms)

    @cached_property
    def _grad_maps(self) -> tuple[PolyMap, ...]:
        return tuple(self.diff(j) for j in range(self.nvars))

    @cached_property
    def _hess_maps(self) -> tuple[tuple[PolyMap, ...], ...]:
        return tuple(tuple(g.diff(k) for k in range(self.nvars)) for g in self._grad_maps)

    @cached_property
    def _jac_flat(self) -> PolyMap:
        return PolyMap.stack(self._grad_maps)

    @cached_property
    def _hess_flat(self) -> PolyMap:
        return PolyMap.stack([h for row in self._hess_maps for h in row])

    def jacobian_map(self) -> list[list[PolyMap]]:
        """Polynomial entries of the Jacobian: ``J[i][j] = d out_i / d x_j``."""
        return [[self._grad_maps[j].component(i) for j in range(self.nvars)] for i in range(self.nout)]

    # -- evaluation -----------------------------------------------------------
    def _monomials(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.nvars:
            raise ValueError(f"expected {self.nvars} variables, got {x.shape[-1]}")
        if not len(self._exps):
            return np.zeros(x.shape[:-1] + (0,))
        return np.multiply.reduce(x[..., None, :] ** self._exps, axis=-1)

    def __call__(self, x) -> np.ndarray:
        """Evaluate at ``x`` of shape (..., nvars); returns (..., nout)."""
        x = np.asarray(x, dtype=float)
        return self._monomials(x) @ self._coefs

    def jacobian(self, x) -> np.ndarray:
        """Returns (..., nout, nvars)."""
        x = np.asarray(x, dtype=float)
        if self.nvars == 0:
            return np.zeros(x.shape[:-1] + (self.nout, 0))
        flat = self._jac_flat(x).reshape(x.shape[:-1] + (self.nvars, self.nout))
        return np.swapaxes(flat, -1, -2)

    def hessian(self, x) -> np.ndarray:
        """Returns (..., nout, nvars, nvars)."""
        x = np.asarray(x, dtype=float)
        n = self.nvars
        if n == 0:
            return np.zeros(x.shape[:-1] + (self.nout, 0, 0))
        flat = np.moveaxis(self._hess_flat(x).reshape(x.shape[:-1] + (n, n, self.nout)), -1, -3)
        return 0.5 * (flat + np.swapaxes(flat, -1, -2))


# -- monomial strings ---------------------------------------------------------

_FACTOR = re.compile(r"^\s*([A-Za-z][A-Za-z0-9_]*)\s*(?:\^\s*(\d+))?\s*$")


def state_names(n: int) -> list[str]:
    return [f"x{i + 1}" for i in range(n)]


def endpoint_names(n: int) -> list[str]:
    return [f"x0_{i + 1}" for i in range(n)] + [f"xT_{i + 1}" for i in range(n)]


def parse_monomial(text: str, names: Sequence[str]) -> tuple[int, ...]:
    """Parse ``"x1^2*x3"`` (or ``"1"`` for the constant) into a multi-index."""
    exp = [0] * len(names)
    text = text.strip()
    if text == "1":
        return tuple(exp)
    index = {nm: i for i, nm in enumerate(names)}
    for factor in text.split("*"):
        m = _FACTOR.match(factor)
        if not m or m.group(1) not in index:
            raise ValueError(f"bad monomial factor {factor!r} in {text!r}; variables are {list(names)}")
        exp[index[m.group(1)]] += int(m.group(2) or 1)
    return tuple(exp)


def format_monomial(exp: Sequence[int], names: Sequence[str]) -> str:
    parts = []
    for nm, e in zip(names, exp):
        if e == 1:
            parts.append(nm)
        elif e > 1:
            parts.append(f"{nm}^{e}")
    return "*".join(parts) if parts else "1"


def poly_from_table(table: Mapping[str, object], names: Sequence[str], nout: int) -> PolyMap:
    """Build a map from ``{"x1^2*x3": coef, ...}``; scalars allowed when nout == 1."""
    terms: dict[tuple[int, ...], np.ndarray] = {}
    for key, coef in table.items():
        exp = parse_monomial(str(key), names)
        c = np.atleast_1d(np.asarray(coef, dtype=float))
        if c.shape != (nout,):
            raise ValueError(f"coefficient of {key!r} must have length {nout}, got {c.size}")
        terms[exp] = terms.get(exp, 0.0) + c
    return PolyMap(len(names), nout, terms)


def poly_to_table(poly: PolyMap, names: Sequence[str]) -> dict[str, object]:
    """Inverse of :func:`poly_from_table` (scalar coefficients when nout == 1)."""
    out: dict[str, object] = {}
    for exp, c in poly.terms():
        key = format_monomial(exp, names)
        out[key] = float(c[0]) if poly.nout == 1 else [float(v) for v in c]
    return out
