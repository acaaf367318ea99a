"""Built-in sampling problems: constraint maps, potentials, start states."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .diagnostics import sphere_component
from .errors import MissingParam, UnknownProblem
from .geometry import ConstraintMap
from .polys import MonomialPoly, PolySystem
from .potentials import Potential

PROBLEM_NAMES = ("circle", "torus", "sphere9d", "custom-polynomial-k1")


@dataclass(frozen=True, eq=False)
class Problem:
    """A constraint map bundled with potentials and a default start state."""

    name: str
    cm: ConstraintMap
    potential: Potential
    proposal_potential: Potential
    x0: np.ndarray
    component_of: Optional[object] = None
    angle_params: Optional[tuple] = None  # (R, r) for the torus


def circle_constraint():
    """Unit circle as the zero set of (x1^2 + x2^2 - 1) / 2."""
    poly = MonomialPoly.from_terms(
        2, [(-0.5, (0, 0)), (0.5, (2, 0)), (0.5, (0, 2))]
    )
    return ConstraintMap(2, 1, poly=PolySystem([poly]), name="circle")


def torus_constraint(R, r):
    """Torus as the zero set of the quartic
    (R^2 - r^2 + |x|^2)^2 - 4 R^2 (x1^2 + x2^2)."""
    if not 0.0 < r < R:
        raise ValueError("need 0 < r < R")
    K = R * R - r * r
    terms = [
        (K * K, (0, 0, 0)),
        (2.0 * K - 4.0 * R * R, (2, 0, 0)),
        (2.0 * K - 4.0 * R * R, (0, 2, 0)),
        (2.0 * K, (0, 0, 2)),
        (1.0, (4, 0, 0)),
        (1.0, (0, 4, 0)),
        (1.0, (0, 0, 4)),
        (2.0, (2, 2, 0)),
        (2.0, (2, 0, 2)),
        (2.0, (0, 2, 2)),
    ]
    poly = MonomialPoly.from_terms(3, terms)
    return ConstraintMap(3, 1, poly=PolySystem([poly]), name="torus")


def torus_sqrt_form(x, R, r):
    """The equivalent distance-form residual (R - |(x1,x2)|)^2 + x3^2 - r^2."""
    rho = np.sqrt(x[0] ** 2 + x[1] ** 2)
    return (R - rho) ** 2 + x[2] ** 2 - r * r


def sphere9d_constraint():
    """Nine-sphere of radius 3 in R^10 with the product constraint
    x1 x2 x3 = 2; four connected components."""
    terms1 = [(-4.5, tuple(0 for _ in range(10)))]
    for i in range(10):
        e = [0] * 10
        e[i] = 2
        terms1.append((0.5, tuple(e)))
    xi1 = MonomialPoly.from_terms(10, terms1)
    e123 = [0] * 10
    e123[0] = e123[1] = e123[2] = 1
    xi2 = MonomialPoly.from_terms(
        10, [(1.0, tuple(e123)), (-2.0, tuple(0 for _ in range(10)))]
    )
    return ConstraintMap(10, 2, poly=PolySystem([xi1, xi2]), name="sphere9d")


def sphere9d_start():
    """Symmetric point with x1 = x2 = x3 = 2^(1/3) and equal tail entries."""
    c = 2.0 ** (1.0 / 3.0)
    a = np.sqrt((9.0 - 3.0 * c * c) / 7.0)
    return np.array([c, c, c] + [a] * 7)


def bimodal_torus_potential(R, r):
    """Double-well potential with two minima on the outer equator of the torus."""
    q = (R + r) ** 2
    terms = [
        (5.0, (0, 0, 0)),
        (1.0 - 10.0 / q, (2, 0, 0)),
        (1.0 - 10.0 / q, (0, 2, 0)),
        (-2.0, (1, 1, 0)),
        (5.0 / (q * q), (4, 0, 0)),
        (10.0 / (q * q), (2, 2, 0)),
        (5.0 / (q * q), (0, 4, 0)),
    ]
    return Potential.from_poly(MonomialPoly.from_terms(3, terms), name="bimodal")


def quadratic_x1_potential(dim, center=0.6):
    """0.5 (x1 - center)^2 in any dimension."""
    e1 = [0] * dim
    e1[0] = 1
    e2 = [0] * dim
    e2[0] = 2
    terms = [
        (0.5 * center * center, tuple(0 for _ in range(dim))),
        (-center, tuple(e1)),
        (0.5, tuple(e2)),
    ]
    return Potential.from_poly(MonomialPoly.from_terms(dim, terms), name="sphere-quadratic")


def _potential_for(selector, dim, name, params):
    if selector == "zero":
        return Potential.zero(dim)
    if selector == "bimodal":
        if name != "torus":
            raise ValueError("the bimodal potential is defined on the torus only")
        return bimodal_torus_potential(params["R"], params["r"])
    if selector == "sphere-quadratic":
        return quadratic_x1_potential(dim)
    raise ValueError(f"unknown potential selector {selector!r}")


def _check_keys(params, allowed, name):
    unknown = set(params) - set(allowed)
    if unknown:
        raise ValueError(f"unknown parameter(s) for {name}: {sorted(unknown)}")


def builtin_problem(name, params=None):
    """Instantiate a built-in problem from its name and parameter mapping.

    ``params`` accepts a ``potential`` selector (``zero``, ``bimodal``,
    ``sphere-quadratic``) and a ``proposal_potential`` selector (``same`` or
    ``zero``, default ``same``); problem-specific keys are listed per
    problem.  Raises `UnknownProblem` or `MissingParam`.
    """
    params = dict(params or {})
    proposal_sel = params.pop("proposal_potential", "same")
    if proposal_sel not in ("same", "zero"):
        raise ValueError("proposal_potential must be 'same' or 'zero'")

    if name == "circle":
        _check_keys(params, {"potential"}, name)
        cm = circle_constraint()
        pot = _potential_for(params.get("potential", "zero"), 2, name, params)
        x0 = np.array([1.0, 0.0])
        angle = None
        component = None
    elif name == "torus":
        _check_keys(params, {"potential", "R", "r"}, name)
        for key in ("R", "r"):
            if key not in params:
                raise MissingParam(f"torus needs parameter {key!r}")
        R, r = float(params["R"]), float(params["r"])
        cm = torus_constraint(R, r)
        pot = _potential_for(params.get("potential", "zero"), 3, name, {"R": R, "r": r})
        x0 = np.array([R - r, 0.0, 0.0])
        angle = (R, r)
        component = None
    elif name == "sphere9d":
        _check_keys(params, {"potential"}, name)
        cm = sphere9d_constraint()
        pot = _potential_for(params.get("potential", "sphere-quadratic"), 10, name, params)
        x0 = sphere9d_start()
        angle = None
        component = sphere_component
    elif name == "custom-polynomial-k1":
        _check_keys(params, {"potential", "ambient_dim", "monomials", "x0"}, name)
        for key in ("ambient_dim", "monomials", "x0"):
            if key not in params:
                raise MissingParam(f"custom-polynomial-k1 needs parameter {key!r}")
        dim = int(params["ambient_dim"])
        terms = [(float(m["coeff"]), tuple(int(e) for e in m["expts"])) for m in params["monomials"]]
        poly = MonomialPoly.from_terms(dim, terms)
        cm = ConstraintMap(dim, 1, poly=PolySystem([poly]), name="custom-polynomial-k1")
        pot = _potential_for(params.get("potential", "zero"), dim, name, params)
        x0 = np.asarray(params["x0"], dtype=np.float64)
        if x0.shape != (dim,):
            raise ValueError("x0 must have length ambient_dim")
        angle = None
        component = None
    else:
        raise UnknownProblem(f"no built-in problem named {name!r}")

    vbar = pot if proposal_sel == "same" else Potential.zero(cm.ambient_dim)
    return Problem(
        name=name,
        cm=cm,
        potential=pot,
        proposal_potential=vbar,
        x0=x0,
        component_of=component,
        angle_params=angle,
    )
