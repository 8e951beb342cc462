"""TOML documents for problems, trajectories and multipliers.

Problem file::

    name = "REG1"
    n = 2
    n1 = 2
    n2 = 0
    T = 2.0

    [bounds]
    u_min = -1.0
    u_max = 1.0          # inf / -inf allowed

    [f0]                 # monomial in x1..xn -> coefficient vector (length n)
    x1 = [0.0, 1.0]

    [f1]
    1 = [1.0, 0.0]       # "1" is the constant monomial

    [g]                  # scalar polynomial of x
    x1 = -1.0

    [phi]                # scalar polynomial of x0_1..x0_n, xT_1..xT_n
    xT_1 = 1.0
    xT_2 = 1.0

    [Phi]                # vector polynomial, length n1 + n2 (omit when zero)
    x0_1 = [1.0, 0.0]
    x0_2 = [0.0, 1.0]
    1 = [-1.0, 0.0]

Monomials are products of ``name^k`` factors joined by ``*``, e.g.
``"x1^2*x3"``.  Serialization lists monomials in graded lexicographic order,
so ``dump(load(text)) == text`` for any file written by this module.
"""

from __future__ import annotations

import hashlib
import math
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .multipliers import Multiplier
from .polynomial import endpoint_names, poly_from_table, poly_to_table, state_names
from .problem import ProblemSpec
from .trajectory import Arc, Trajectory

__all__ = [
    "ParseError",
    "problem_to_toml",
    "problem_from_toml",
    "trajectory_to_toml",
    "trajectory_from_toml",
    "multiplier_to_toml",
    "multiplier_from_toml",
    "load_problem",
    "load_trajectory",
    "load_multiplier",
    "file_digest",
]


class ParseError(ValueError):
    """Malformed input document; the message carries line/column when known."""


def _loads(text: str, source: str) -> dict:
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ParseError(f"{source}: {exc}") from exc


def _require(doc: dict, key: str, source: str):
    if key not in doc:
        raise ParseError(f"{source}: missing required key {key!r}")
    return doc[key]


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- problem -------------------------------------------------------------------

def problem_to_toml(spec: ProblemSpec) -> str:
    xs, ep = state_names(spec.n), endpoint_names(spec.n)
    doc = {
        "name": spec.name,
        "n": spec.n,
        "n1": spec.n1,
        "n2": spec.n2,
        "T": float(spec.T),
        "bounds": {"u_min": float(spec.u_min), "u_max": float(spec.u_max)},
        "f0": poly_to_table(spec.f0, xs),
        "f1": poly_to_table(spec.f1, xs),
        "g": poly_to_table(spec.g, xs),
        "phi": poly_to_table(spec.phi, ep),
    }
    if spec.Phi is not None:
        doc["Phi"] = poly_to_table(spec.Phi, ep)
    return tomli_w.dumps(doc)


def problem_from_toml(text: str, source: str = "<problem>") -> ProblemSpec:
    doc = _loads(text, source)
    try:
        n = int(_require(doc, "n", source))
        n1 = int(doc.get("n1", 0))
        n2 = int(doc.get("n2", 0))
        T = float(_require(doc, "T", source))
        bounds = doc.get("bounds", {})
        u_min = float(bounds.get("u_min", -math.inf))
        u_max = float(bounds.get("u_max", math.inf))
        xs, ep = state_names(n), endpoint_names(n)
        Phi_tab = doc.get("Phi")
        return ProblemSpec(
            n=n, n1=n1, n2=n2,
            f0=poly_from_table(_require(doc, "f0", source), xs, n),
            f1=poly_from_table(_require(doc, "f1", source), xs, n),
            g=poly_from_table(_require(doc, "g", source), xs, 1),
            phi=poly_from_table(doc.get("phi", {}), ep, 1),
            Phi=poly_from_table(Phi_tab, ep, n1 + n2) if Phi_tab is not None else None,
            u_min=u_min, u_max=u_max, T=T, name=str(doc.get("name", "")),
        )
    except ParseError:
        raise
    except (ValueError, TypeError) as exc:
        raise ParseError(f"{source}: {exc}") from exc


# -- trajectory ----------------------------------------------------------------

def trajectory_to_toml(traj: Trajectory) -> str:
    doc = {
        "t": [float(v) for v in traj.t],
        "u": [float(v) for v in traj.u],
        "x": [[float(v) for v in row] for row in traj.x],
        "arcs": [{"kind": a.kind, "t_start": float(a.t_start), "t_end": float(a.t_end)} for a in traj.arcs],
    }
    return tomli_w.dumps(doc)


def trajectory_from_toml(text: str, source: str = "<trajectory>") -> Trajectory:
    doc = _loads(text, source)
    try:
        arcs = tuple(Arc(str(a["kind"]), float(a["t_start"]), float(a["t_end"])) for a in doc.get("arcs", []))
        return Trajectory(np.array(_require(doc, "t", source), dtype=float),
                          np.array(_require(doc, "u", source), dtype=float),
                          np.array(_require(doc, "x", source), dtype=float), arcs)
    except ParseError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ParseError(f"{source}: {exc}") from exc


# -- multiplier ----------------------------------------------------------------

def multiplier_to_toml(lam: Multiplier) -> str:
    doc = {
        "beta": float(lam.beta),
        "Psi": [float(v) for v in lam.Psi],
        "atoms": [{"t": float(t), "mass": float(m)} for t, m in lam.atoms],
        "p_minus": [[float(v) for v in row] for row in lam.p_minus],
        "p_plus": [[float(v) for v in row] for row in lam.p_plus],
        "nu": [float(v) for v in lam.nu],
    }
    return tomli_w.dumps(doc)


def multiplier_from_toml(text: str, traj: Trajectory, source: str = "<multiplier>") -> Multiplier:
    doc = _loads(text, source)
    try:
        atoms = tuple((float(a["t"]), float(a["mass"])) for a in doc.get("atoms", []))
        pm = np.array(_require(doc, "p_minus", source), dtype=float)
        pp = np.array(_require(doc, "p_plus", source), dtype=float)
        nu = np.array(doc.get("nu", np.zeros(traj.N + 1)), dtype=float)
        if pm.shape != traj.x.shape or pp.shape != traj.x.shape or nu.shape != (traj.N + 1,):
            raise ParseError(f"{source}: costate arrays do not match the trajectory grid "
                             f"(expected {traj.x.shape}, got {pm.shape} / {pp.shape})")
        mass = np.zeros(traj.N + 1)
        for t, m in atoms:
            k = traj.node_index(t)
            if k is None:
                raise ParseError(f"{source}: atom at t={t:g} is not a grid node")
            mass[k] += m
        return Multiplier(float(_require(doc, "beta", source)), np.array(doc.get("Psi", []), dtype=float),
                          atoms, pm, pp, nu, mass)
    except ParseError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ParseError(f"{source}: {exc}") from exc


def load_problem(path: str | Path) -> ProblemSpec:
    return problem_from_toml(Path(path).read_text(), str(path))


def load_trajectory(path: str | Path) -> Trajectory:
    return trajectory_from_toml(Path(path).read_text(), str(path))


def load_multiplier(path: str | Path, traj: Trajectory) -> Multiplier:
    return multiplier_from_toml(Path(path).read_text(), traj, str(path))
