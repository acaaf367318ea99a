"""Set-valued projection solvers.

Produces every numerically reachable multiplier solving the projection
constraint equation: either exactly (all real roots of a univariate
polynomial, for scalar polynomial constraints) or approximately (Newton from
one or many starting points).  An empty result is a valid outcome and simply
means the proposal fails for this draw.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .errors import (
    DegenerateLeadingCoefficient,
    InfinitelyManyRoots,
    NoPolyStructure,
)
from .projection import DEDUP_TOL, TANGENT_DET_TOL, ProposalSet

_JIT = dict(cache=True, nogil=True)

SOLVER_KINDS = ("newton_single", "poly_all_roots", "newton_multistart")

#: Relative threshold below which a leading coefficient counts as zero.
LEADING_COEFF_TOL = 1e-14

#: A complex root with |Im| below this (relative to max(1, |Re|)) is real.
IMAG_TOL = 1e-10

_EPS = float(np.finfo(np.float64).eps)


@dataclass(frozen=True)
class SolverSpec:
    """How the projection constraint equation is solved.

    ``period`` implements hybrid schedules: the configured (expensive) solver
    fires on iterations ``i`` with ``i % period == 0`` and plain single-start
    Newton is used otherwise.
    """

    kind: str
    max_iter: int = 10
    newton_tol: float = 1e-8
    n_starts: int = 1
    start_scale: Optional[float] = None
    period: int = 1

    def __post_init__(self):
        if self.kind not in SOLVER_KINDS:
            raise ValueError(f"kind must be one of {SOLVER_KINDS}, got {self.kind!r}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.newton_tol <= 0.0:
            raise ValueError("newton_tol must be positive")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if self.period < 1:
            raise ValueError("period must be >= 1")
        if self.start_scale is not None and self.start_scale <= 0.0:
            raise ValueError("start_scale must be positive")

    def effective_kind(self, iteration):
        """Solver used at a given 0-based iteration under the hybrid schedule."""
        if self.kind == "newton_single" or self.period == 1:
            return self.kind
        return self.kind if iteration % self.period == 0 else "newton_single"

    def resolved_start_scale(self, dim):
        return self.start_scale if self.start_scale is not None else 2.0 * np.sqrt(dim)


@njit(**_JIT)
def _poly_div_guarded(num, den):
    if den == 0.0 + 0.0j:
        return num / (den + 1e-300)
    return num / den


@njit(**_JIT)
def _eval_poly_c(a, z):
    """Horner evaluation returning (value, derivative, roundoff scale)."""
    n = a.shape[0] - 1
    p = complex(a[n])
    dp = 0.0 + 0.0j
    err = abs(a[n])
    az = abs(z)
    for i in range(n - 1, -1, -1):
        dp = dp * z + p
        p = p * z + a[i]
        err = err * az + abs(a[i])
    return p, dp, err


@njit(**_JIT)
def _aberth(a, roots, itmax):
    """Simultaneous all-roots iteration on the (trimmed) coefficients ``a``.

    Starts on a circle enclosing all roots; each root stops once its value is
    at roundoff level for the evaluated polynomial.
    """
    n = a.shape[0] - 1
    amax = 0.0
    for i in range(n):
        r = abs(a[i] / a[n])
        if r > amax:
            amax = r
    radius = 1.0 + amax
    for j in range(n):
        theta = 2.0 * np.pi * j / n + 0.7
        roots[j] = radius * complex(np.cos(theta), np.sin(theta))
    for _ in range(itmax):
        done = True
        for i in range(n):
            z = roots[i]
            p, dp, err = _eval_poly_c(a, z)
            if abs(p) <= 16.0 * _EPS * err:
                continue
            done = False
            nstep = _poly_div_guarded(p, dp)
            s = 0.0 + 0.0j
            for j in range(n):
                if j != i:
                    s += _poly_div_guarded(1.0 + 0.0j, z - roots[j])
            roots[i] = z - _poly_div_guarded(nstep, 1.0 - nstep * s)
        if done:
            break
    # a short Newton polish for every root
    for i in range(n):
        z = roots[i]
        for _ in range(3):
            p, dp, _ = _eval_poly_c(a, z)
            if dp == 0.0 + 0.0j:
                break
            z = z - p / dp
        roots[i] = z


@njit(**_JIT)
def _effective_degree(a):
    """Degree after stripping negligible leading coefficients; -1 if ~zero."""
    amax = 0.0
    for i in range(a.shape[0]):
        v = abs(a[i])
        if v > amax:
            amax = v
    if amax == 0.0:
        return -1
    n = a.shape[0] - 1
    while n > 0 and abs(a[n]) <= LEADING_COEFF_TOL * amax:
        n -= 1
    if abs(a[n]) <= LEADING_COEFF_TOL * amax:
        return -1
    return n


@njit(**_JIT)
def _real_roots(a, out):
    """All real roots of the ascending-coefficient polynomial ``a``.

    Writes roots (ascending) into ``out`` and returns their count; returns 0
    when the degree collapses.  Real extraction accepts complex roots whose
    imaginary part is at roundoff scale, then re-polishes in real arithmetic.
    """
    n = _effective_degree(a)
    if n < 1:
        return 0
    trimmed = a[: n + 1].astype(np.complex128)
    roots = np.empty(n, dtype=np.complex128)
    _aberth(trimmed, roots, 200)
    count = 0
    for i in range(n):
        z = roots[i]
        re = z.real
        if abs(z.imag) <= IMAG_TOL * max(1.0, abs(re)):
            t = re
            for _ in range(3):
                p = a[n]
                dp = 0.0
                for j in range(n - 1, -1, -1):
                    dp = dp * t + p
                    p = p * t + a[j]
                if dp == 0.0:
                    break
                t = t - p / dp
            out[count] = t
            count += 1
    # ascending order (insertion sort; count is tiny)
    for i in range(1, count):
        key = out[i]
        j = i - 1
        while j >= 0 and out[j] > key:
            out[j + 1] = out[j]
            j -= 1
        out[j + 1] = key
    return count


def poly_all_roots(coeffs):
    """All complex roots of a univariate polynomial, ascending coefficients.

    Roots are found by simultaneous iteration and polished with a few Newton
    steps; the result is sorted by (real, imaginary) part.
    """
    a = np.ascontiguousarray(np.asarray(coeffs, dtype=np.float64))
    if a.size == 0:
        raise InfinitelyManyRoots("empty coefficient list")
    n = _effective_degree(a)
    if n < 0:
        raise InfinitelyManyRoots("polynomial is identically zero")
    if n == 0:
        raise DegenerateLeadingCoefficient(
            "degree collapsed to 0 with nonzero constant; no roots"
        )
    roots = np.empty(n, dtype=np.complex128)
    _aberth(a[: n + 1].astype(np.complex128), roots, 200)
    for i in range(n):
        z = roots[i]
        for _ in range(3):
            p, dp, _ = _eval_poly_c(a[: n + 1].astype(np.complex128), z)
            if dp == 0:
                break
            z = z - p / dp
        roots[i] = z
    order = np.lexsort((roots.imag, roots.real))
    return roots[order]


def _guarded_solve(jac, res):
    """Newton linear solve with a singularity guard; None means give up."""
    jac = np.atleast_2d(np.asarray(jac, dtype=np.float64))
    res = np.atleast_1d(np.asarray(res, dtype=np.float64))
    k = jac.shape[0]
    if not np.all(np.isfinite(jac)):
        return None
    if k == 1:
        den = jac[0, 0]
        if abs(den) < 1e-280:
            return None
        delta = res / den
    else:
        det = np.linalg.det(jac)
        scale = max(float(np.max(np.abs(jac))), 1e-30)
        if not np.isfinite(det) or abs(det) <= 1e-14 * scale**k:
            return None
        delta = np.linalg.solve(jac, res)
    if not np.all(np.isfinite(delta)) or np.max(np.abs(delta)) > 1e12:
        return None
    return delta


def newton_solve(residual, jac, c0, spec):
    """Full-step Newton on ``residual``; returns the root or None.

    Convergence means the residual 2-norm is within ``spec.newton_tol`` after
    at most ``spec.max_iter`` updates.  Non-convergence and singular linear
    solves return None; this function never raises.
    """
    c = np.atleast_1d(np.asarray(c0, dtype=np.float64)).copy()
    r = np.atleast_1d(np.asarray(residual(c), dtype=np.float64))
    for _ in range(spec.max_iter):
        if float(np.sqrt(np.sum(r * r))) <= spec.newton_tol:
            return c
        delta = _guarded_solve(jac(c), r)
        if delta is None:
            return None
        c = c - delta
        if not np.all(np.isfinite(c)):
            return None
        r = np.atleast_1d(np.asarray(residual(c), dtype=np.float64))
    if float(np.sqrt(np.sum(r * r))) <= spec.newton_tol:
        return c
    return None


def build_projection_polynomial(cm, offset, direction):
    """Ascending coefficients of ``c -> xi(offset + direction * c)``.

    Exact (up to rounding) for constraint maps carrying their polynomial
    form; only available for scalar constraints.
    """
    if cm.poly is None or cm.codim != 1:
        raise NoPolyStructure("constraint map has no scalar polynomial form")
    return cm.poly.components[0].line_coeffs(offset, direction)


def solve_projection_set(
    cm,
    problem,
    spec,
    rng=None,
    iteration=0,
    tol_constraint=1e-8,
    dedup_tol=DEDUP_TOL,
    tangent_det_tol=TANGENT_DET_TOL,
):
    """All projection solutions for one proposal draw.

    Dispatches on the solver kind effective at ``iteration``.  Solutions with
    constraint residual above ``tol_constraint`` or with a tangential branch
    determinant are dropped; duplicates (postions within ``dedup_tol``) are
    merged.  The returned set is ordered by ascending distance of the
    solution position from the current position, ties broken
    lexicographically, so identical inputs and RNG state give an identical
    set, ordering included.
    """
    kind = spec.effective_kind(iteration)
    k = problem.codim
    candidates = []
    if kind == "poly_all_roots":
        if cm.poly is None or k != 1:
            raise NoPolyStructure("all-roots solver needs a scalar polynomial constraint")
        offset, direction = problem.poly_line()
        coeffs = cm.poly.components[0].line_coeffs(offset, direction)
        buf = np.empty(max(coeffs.shape[0] - 1, 1))
        cnt = _real_roots(coeffs, buf)
        candidates = [np.array([buf[i]]) for i in range(cnt)]
    elif kind == "newton_single":
        root = newton_solve(problem.residual, problem.jacobian, np.zeros(k), spec)
        candidates = [] if root is None else [root]
    elif kind == "newton_multistart":
        if rng is None:
            raise ValueError("newton_multistart needs an RNG for its starting points")
        scale = spec.resolved_start_scale(cm.ambient_dim)
        starts = [np.zeros(k)]
        for _ in range(spec.n_starts - 1):
            starts.append(scale * rng.standard_normal(k))
        for c0 in starts:
            root = newton_solve(problem.residual, problem.jacobian, c0, spec)
            if root is not None:
                candidates.append(root)
    else:  # pragma: no cover - SolverSpec validates kinds
        raise ValueError(f"unknown solver kind {kind!r}")

    kept = []
    for c in candidates:
        sol = problem.build_solution(c)
        if sol.residual > tol_constraint:
            continue
        if abs(sol.tangent_det) <= tangent_det_tol:
            continue
        if any(
            float(np.sqrt(np.sum((sol.position - s.position) ** 2))) <= dedup_tol
            for s in kept
        ):
            continue
        kept.append(sol)

    kept.sort(
        key=lambda s: (
            float(np.sqrt(np.sum((s.position - problem.x) ** 2))),
            tuple(s.position),
        )
    )
    return ProposalSet(solutions=tuple(kept), solver_label=kind)
