"""Constraint-surface geometry: maps, frames, projectors, measure weights.

The surface is the zero level set of a smooth map ``xi: R^d -> R^k`` whose
Jacobian has full column rank everywhere on the surface.  Everything here is
a pure function of its inputs (plus an explicit RNG handle where noted), so
the routines are safe to share across threads on a read-only `ConstraintMap`.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConstraintViolated,
    ProjectionFailed,
    RankDeficient,
    SingularGram,
)
from .polys import PolySystem

#: Absolute floor on the smallest eigenvalue of the k-by-k Gram matrix; below
#: this the Jacobian is treated as rank deficient.
RANK_TOL = 1e-10

#: Default tolerance on the constraint residual for states "on" the surface.
TOL_CONSTRAINT = 1e-8


@dataclass(frozen=True)
class MassMatrix:
    """Diagonal symmetric positive definite mass matrix."""

    diag: np.ndarray

    def __post_init__(self):
        diag = np.ascontiguousarray(np.asarray(self.diag, dtype=np.float64))
        if diag.ndim != 1 or diag.size == 0:
            raise ValueError("mass diagonal must be a non-empty vector")
        if np.any(diag <= 0.0):
            raise ValueError("mass diagonal entries must be strictly positive")
        object.__setattr__(self, "diag", diag)

    @classmethod
    def identity(cls, dim):
        return cls(np.ones(dim))

    @property
    def dim(self):
        return self.diag.shape[0]

    @property
    def inv_diag(self):
        return 1.0 / self.diag

    @property
    def sqrt_diag(self):
        return np.sqrt(self.diag)

    def det(self):
        return float(np.prod(self.diag))


class ConstraintMap:
    """The map ``xi`` defining the surface, with its Jacobian.

    Args:
        ambient_dim: dimension ``d >= 2`` of the ambient space.
        codim: number of constraints ``k`` with ``1 <= k < d``.
        eval_fn: callable ``x -> xi(x)`` returning a length-``k`` vector.
        jacobian_fn: callable ``x -> (d, k)`` matrix whose column ``j`` is the
            gradient of the ``j``-th constraint component.
        poly: optional `PolySystem` giving the exact polynomial form of
            ``xi``; required by the all-roots projection solver (``k == 1``)
            and by the compiled chain kernels.
        name: label used in logs and output files.
    """

    def __init__(self, ambient_dim, codim, eval_fn=None, jacobian_fn=None, poly=None, name="custom"):
        if ambient_dim < 2:
            raise ValueError("ambient_dim must be >= 2")
        if not 1 <= codim < ambient_dim:
            raise ValueError("codim must satisfy 1 <= k < d")
        if poly is not None:
            if not isinstance(poly, PolySystem):
                poly = PolySystem(poly)
            if poly.n_vars != ambient_dim or poly.k != codim:
                raise ValueError("polynomial system shape does not match (d, k)")
        if eval_fn is None or jacobian_fn is None:
            if poly is None:
                raise ValueError("need eval_fn and jacobian_fn, or a polynomial form")
            eval_fn = poly.__call__
            jacobian_fn = poly.jac
        self.ambient_dim = int(ambient_dim)
        self.codim = int(codim)
        self.eval = eval_fn
        self.jacobian = jacobian_fn
        self.poly = poly
        self.name = name

    def residual_norm(self, x):
        return float(np.linalg.norm(self.eval(x)))

    def __repr__(self):
        return f"ConstraintMap({self.name}, d={self.ambient_dim}, k={self.codim})"


@dataclass(frozen=True, eq=False)
class SurfacePoint:
    """A position on the constraint surface."""

    x: np.ndarray

    def validate(self, cm, tol=TOL_CONSTRAINT):
        r = cm.residual_norm(self.x)
        if r > tol:
            raise ConstraintViolated(f"|xi(x)| = {r:.3e} exceeds {tol:.1e}")
        return self


@dataclass(frozen=True, eq=False)
class PhasePoint:
    """A position/momentum pair with the momentum in the cotangent space."""

    x: np.ndarray
    p: np.ndarray

    def validate(self, cm, mass, tol=TOL_CONSTRAINT):
        r = cm.residual_norm(self.x)
        if r > tol:
            raise ConstraintViolated(f"|xi(x)| = {r:.3e} exceeds {tol:.1e}")
        t = np.linalg.norm(cm.jacobian(self.x).T @ (mass.inv_diag * self.p))
        if t > tol:
            raise ConstraintViolated(f"|J^T M^-1 p| = {t:.3e} exceeds {tol:.1e}")
        return self


@dataclass(frozen=True, eq=False)
class TangentFrame:
    """Orthonormal basis columns for the (co)tangent space at a point.

    ``metric_flag`` is ``"standard"`` (basis^T basis = I, spans the tangent
    space) or ``"mass-weighted"`` (basis^T M^-1 basis = I, spans the
    cotangent space).
    """

    basis: np.ndarray
    metric_flag: str


def _gram(jac, inv_diag=None):
    if inv_diag is None:
        return jac.T @ jac
    return jac.T @ (inv_diag[:, None] * jac)


def _checked_gram_solve(gram, rhs):
    """Solve ``gram @ s = rhs`` guarding against numerical singularity."""
    scale = float(np.max(np.abs(gram))) if gram.size else 0.0
    if scale == 0.0:
        raise SingularGram("Gram matrix is zero")
    w = np.linalg.eigvalsh(gram)
    if w[0] <= RANK_TOL * max(1.0, scale):
        raise SingularGram(f"smallest Gram eigenvalue {w[0]:.3e} below tolerance")
    return np.linalg.solve(gram, rhs)


def assert_full_rank(cm, x):
    """Raise `RankDeficient` unless the Jacobian has full column rank at x."""
    jac = cm.jacobian(x)
    w = np.linalg.eigvalsh(_gram(jac))
    if w[0] <= RANK_TOL:
        raise RankDeficient(f"smallest eigenvalue of J^T J is {w[0]:.3e}")


def tangent_frame(cm, x, mass=None, metric_flag="standard"):
    """Deterministic orthonormal frame of the (co)tangent space at ``x``.

    The d canonical basis vectors are projected onto the requested subspace
    and orthonormalized by modified Gram-Schmidt with column pivoting
    (largest remaining norm first), which keeps the construction stable when
    a canonical vector is nearly normal to the surface.
    """
    x = np.asarray(x, dtype=np.float64)
    d, k = cm.ambient_dim, cm.codim
    jac = cm.jacobian(x)
    if metric_flag == "standard":
        inv_diag = None
    elif metric_flag == "mass-weighted":
        if mass is None:
            raise ValueError("mass-weighted frame needs a mass matrix")
        inv_diag = mass.inv_diag
    else:
        raise ValueError(f"unknown metric_flag {metric_flag!r}")

    gram = _gram(jac, inv_diag)
    jt = jac.T if inv_diag is None else (inv_diag[:, None] * jac).T
    cols = np.eye(d) - jac @ _checked_gram_solve(gram, jt)

    def ip(u, v):
        return float(u @ v) if inv_diag is None else float(u @ (inv_diag * v))

    basis = np.empty((d, d - k))
    used = np.zeros(d, dtype=bool)
    for step in range(d - k):
        norms = np.array([-1.0 if used[i] else np.sqrt(max(ip(cols[:, i], cols[:, i]), 0.0)) for i in range(d)])
        pick = int(np.argmax(norms))
        if norms[pick] < RANK_TOL:
            raise RankDeficient("projected canonical basis lost rank during pivoting")
        used[pick] = True
        u = cols[:, pick] / norms[pick]
        basis[:, step] = u
        for i in range(d):
            if not used[i]:
                cols[:, i] = cols[:, i] - ip(u, cols[:, i]) * u
    return TangentFrame(basis=basis, metric_flag=metric_flag)


def cotangent_projector(cm, x, mass):
    """The projector ``P_M(x)`` onto the cotangent space at ``x``.

    ``P_M = I - J (J^T M^-1 J)^-1 J^T M^-1``; it is idempotent and kills the
    columns of the Jacobian.
    """
    x = np.asarray(x, dtype=np.float64)
    jac = cm.jacobian(x)
    inv_diag = mass.inv_diag
    gram = _gram(jac, inv_diag)
    s = _checked_gram_solve(gram, (inv_diag[:, None] * jac).T)
    return np.eye(cm.ambient_dim) - jac @ s


def apply_cotangent_projector(cm, x, mass, vec):
    """``P_M(x) @ vec`` without forming the full projector."""
    jac = cm.jacobian(np.asarray(x, dtype=np.float64))
    inv_diag = mass.inv_diag
    gram = _gram(jac, inv_diag)
    s = _checked_gram_solve(gram, jac.T @ (inv_diag * vec))
    return vec - jac @ s


def sample_cotangent_gaussian(cm, x, mass, beta, rng):
    """Draw ``p`` in the cotangent space at ``x`` from its Gaussian law.

    Implemented as ``beta^{-1/2} P_M(x) w`` with ``w ~ N(0, M)``; consumes
    exactly ``d`` standard normals from ``rng``.
    """
    w = mass.sqrt_diag * rng.standard_normal(cm.ambient_dim)
    return apply_cotangent_projector(cm, x, mass, w) / np.sqrt(beta)


def surface_measure_ratio(cm, x, mass):
    """Density at ``x`` of the mass-weighted surface measure w.r.t. the
    standard one.

    Used as an importance weight to de-bias position marginals when the mass
    matrix is not the identity; equals 1 identically for ``M = I``.
    """
    jac = cm.jacobian(np.asarray(x, dtype=np.float64))
    gram = _gram(jac)
    gram_m = _gram(jac, mass.inv_diag)
    det_g = np.linalg.det(gram)
    det_gm = np.linalg.det(gram_m)
    if det_g <= 0.0 or det_gm <= 0.0:
        raise SingularGram("non-positive Gram determinant")
    return float(np.sqrt(mass.det() * det_gm / det_g))


def check_jacobian(cm, points, h=1e-5, rtol=1e-5):
    """Central finite-difference check that the Jacobian matches ``eval``.

    Returns the worst relative error over the supplied points; raises
    ``AssertionError`` when it exceeds ``rtol``.
    """
    worst = 0.0
    for x in points:
        x = np.asarray(x, dtype=np.float64)
        jac = cm.jacobian(x)
        fd = np.empty_like(jac)
        for i in range(cm.ambient_dim):
            e = np.zeros(cm.ambient_dim)
            e[i] = h
            fd[i, :] = (cm.eval(x + e) - cm.eval(x - e)) / (2.0 * h)
        scale = max(1.0, float(np.max(np.abs(jac))))
        err = float(np.max(np.abs(fd - jac))) / scale
        worst = max(worst, err)
    if worst > rtol:
        raise AssertionError(f"finite-difference Jacobian error {worst:.3e} > {rtol:.1e}")
    return worst


def project_to_surface(cm, x0, tol=TOL_CONSTRAINT, max_iter=50):
    """Project ``x0`` onto the surface by Gauss-Newton, failing loudly.

    Iterates ``x <- x - J (J^T J)^-1 xi(x)`` until the residual is within
    ``tol``; raises `ProjectionFailed` after ``max_iter`` sweeps.
    """
    x = np.array(x0, dtype=np.float64)
    for _ in range(max_iter):
        res = cm.eval(x)
        if np.linalg.norm(res) <= tol:
            return x
        jac = cm.jacobian(x)
        x = x - jac @ _checked_gram_solve(_gram(jac), res)
    res = np.linalg.norm(cm.eval(x))
    if res <= tol:
        return x
    raise ProjectionFailed(f"|xi| = {res:.3e} after {max_iter} Gauss-Newton sweeps")
