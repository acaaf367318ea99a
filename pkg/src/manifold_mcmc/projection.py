"""Deterministic proposal maps of the two samplers.

For the position sampler the proposal moves along a tangent frame and
projects back along the constraint gradient columns at the starting point;
for the phase-space sampler the proposal is one step of the constrained
velocity-Verlet integrator (RATTLE) followed by a momentum flip.  Both maps
come with the reverse maps that make the reversibility check possible: given
the start and end positions, the tangential velocity (resp. the momentum)
that produced the move is unique, and so is the admissible multiplier.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConstraintViolated
from .geometry import _checked_gram_solve, _gram, TOL_CONSTRAINT, PhasePoint

#: Solutions whose branch determinant is below this are treated as tangential
#: and dropped from proposal sets (the branch is not differentiable there).
TANGENT_DET_TOL = 1e-10

#: Two projection solutions closer than this (in position) are duplicates.
DEDUP_TOL = 1e-6


def _dist(a, b):
    return float(np.sqrt(np.sum((a - b) ** 2)))


def _det_small(a):
    if a.shape[0] == 1:
        return float(a[0, 0])
    if a.shape[0] == 2:
        return float(a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0])
    return float(np.linalg.det(a))


@dataclass(frozen=True, eq=False)
class MalaSolution:
    """One projection solution ``y`` of the position-space proposal map."""

    y: np.ndarray
    c: np.ndarray
    residual: float
    tangent_det: float

    @property
    def position(self):
        return self.y


@dataclass(frozen=True, eq=False)
class RattleSolution:
    """One outcome ``(x1, p1m)`` of the one-step integrator with momentum flip."""

    x1: np.ndarray
    p1m: np.ndarray
    lambda_x: np.ndarray
    lambda_p: np.ndarray
    residual: float
    tangent_det: float

    @property
    def position(self):
        return self.x1

    @property
    def z1(self):
        return PhasePoint(x=self.x1, p=self.p1m)


@dataclass(frozen=True, eq=False)
class ProposalSet:
    """Projection solutions for one proposal, sorted by distance from the
    current position (ties broken lexicographically by coordinates)."""

    solutions: tuple
    solver_label: str

    def __len__(self):
        return len(self.solutions)

    def __getitem__(self, i):
        return self.solutions[i]

    def __iter__(self):
        return iter(self.solutions)

    def positions(self):
        return [s.position for s in self.solutions]


def mala_forward(cm, x, frame, v, c, tau, vbar):
    """The affine proposal map: tangent move plus gradient-column correction.

    Returns ``x - tau grad(vbar)(x) + sqrt(2 tau) U v + J(x) c`` exactly as
    written; the result is on the surface only for the right ``c``.
    """
    x = np.asarray(x, dtype=np.float64)
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    c = np.atleast_1d(np.asarray(c, dtype=np.float64))
    return x - tau * vbar.grad(x) + np.sqrt(2.0 * tau) * (frame.basis @ v) + cm.jacobian(x) @ c


def mala_reverse_velocity(cm, x, frame, y, tau, vbar):
    """The unique tangential velocity at ``x`` that can reach ``y``.

    Satisfies the equivalence: ``y`` is reachable from ``x`` with velocity
    ``v`` iff ``v`` equals this value.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return (frame.basis.T @ (y - x + tau * vbar.grad(x))) / np.sqrt(2.0 * tau)


def mala_multiplier_from_target(cm, x, y, tau, vbar):
    """The multiplier that lands the proposal from ``x`` exactly on ``y``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    jac = cm.jacobian(x)
    return _checked_gram_solve(_gram(jac), jac.T @ (y - x + tau * vbar.grad(x)))


def rattle_step(cm, x, p, lambda_x, mass, tau, vbar, tol_constraint=TOL_CONSTRAINT):
    """One step of the constrained integrator with momentum reversal.

    ``lambda_x`` must be a root of the position constraint (supplied by the
    caller, normally from the root-finding module).  The momentum-stage
    multiplier is always computed by its closed form, never by a second
    nonlinear solve.
    """
    x = np.asarray(x, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    lambda_x = np.atleast_1d(np.asarray(lambda_x, dtype=np.float64))
    minv = mass.inv_diag
    jac_x = cm.jacobian(x)

    p_half = p - 0.5 * tau * vbar.grad(x) + jac_x @ lambda_x
    x1 = x + tau * (minv * p_half)
    res = float(np.sqrt(np.sum(cm.eval(x1) ** 2)))
    if res > tol_constraint:
        raise ConstraintViolated(f"position constraint residual {res:.3e} after step")

    jac_1 = cm.jacobian(x1)
    q = p_half - 0.5 * tau * vbar.grad(x1)
    gram_1 = _gram(jac_1, minv)
    lambda_p = -_checked_gram_solve(gram_1, jac_1.T @ (minv * q))
    p1m = -(q + jac_1 @ lambda_p)
    tangent_det = _det_small(jac_1.T @ (minv[:, None] * jac_x))
    return RattleSolution(
        x1=x1,
        p1m=p1m,
        lambda_x=lambda_x,
        lambda_p=lambda_p,
        residual=res,
        tangent_det=tangent_det,
    )


def rattle_reverse_momentum(cm, x, x1, mass, tau, vbar):
    """The unique momentum at ``x`` from which one step reaches position ``x1``."""
    x = np.asarray(x, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    minv = mass.inv_diag
    jac_x = cm.jacobian(x)
    vec = mass.diag * (x1 - x) + 0.5 * tau * tau * vbar.grad(x)
    gram = _gram(jac_x, minv)
    s = _checked_gram_solve(gram, jac_x.T @ (minv * vec))
    return (vec - jac_x @ s) / tau


def rattle_multiplier_from_positions(cm, x, p, x1, mass, tau, vbar):
    """The position-stage multiplier carrying ``(x, p)`` to position ``x1``."""
    x = np.asarray(x, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    minv = mass.inv_diag
    jac_x = cm.jacobian(x)
    rhs = x1 - x - tau * (minv * p) + 0.5 * tau * tau * (minv * vbar.grad(x))
    return _checked_gram_solve(_gram(jac_x, minv), jac_x.T @ rhs) / tau


class MalaProposalProblem:
    """Constraint equation for one position-space proposal ``(x, v)``."""

    def __init__(self, cm, x, frame, v, tau, vbar):
        self.cm = cm
        self.x = np.asarray(x, dtype=np.float64)
        self.frame = frame
        self.v = np.atleast_1d(np.asarray(v, dtype=np.float64))
        self.tau = float(tau)
        self.vbar = vbar
        self.jac_x = cm.jacobian(self.x)
        self.base = self.x - self.tau * vbar.grad(self.x) + np.sqrt(2.0 * self.tau) * (
            frame.basis @ self.v
        )

    @property
    def codim(self):
        return self.cm.codim

    def point(self, c):
        return self.base + self.jac_x @ c

    def residual(self, c):
        return self.cm.eval(self.point(c))

    def jacobian(self, c):
        return self.cm.jacobian(self.point(c)).T @ self.jac_x

    def poly_line(self):
        """(offset, direction) such that the constraint is ``xi(offset + direction*c)``."""
        return self.base, self.jac_x[:, 0]

    def build_solution(self, c):
        c = np.atleast_1d(np.asarray(c, dtype=np.float64))
        y = self.point(c)
        res = float(np.sqrt(np.sum(self.cm.eval(y) ** 2)))
        tdet = _det_small(self.cm.jacobian(y).T @ self.jac_x)
        return MalaSolution(y=y, c=c, residual=res, tangent_det=tdet)


class RattleProposalProblem:
    """Position-stage constraint equation for one integrator step from ``(x, p)``."""

    def __init__(self, cm, x, p, mass, tau, vbar):
        self.cm = cm
        self.x = np.asarray(x, dtype=np.float64)
        self.p = np.asarray(p, dtype=np.float64)
        self.mass = mass
        self.tau = float(tau)
        self.vbar = vbar
        minv = mass.inv_diag
        self.jac_x = cm.jacobian(self.x)
        self.base = self.x + self.tau * (minv * (self.p - 0.5 * self.tau * vbar.grad(self.x)))
        self.dirs = self.tau * (minv[:, None] * self.jac_x)

    @property
    def codim(self):
        return self.cm.codim

    def point(self, lam):
        return self.base + self.dirs @ lam

    def residual(self, lam):
        return self.cm.eval(self.point(lam))

    def jacobian(self, lam):
        return self.cm.jacobian(self.point(lam)).T @ self.dirs

    def poly_line(self):
        return self.base, self.dirs[:, 0]

    def build_solution(self, lam):
        return rattle_step(
            self.cm, self.x, self.p, lam, self.mass, self.tau, self.vbar,
            tol_constraint=np.inf,
        )
