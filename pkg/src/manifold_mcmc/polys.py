"""Sparse monomial-form multivariate polynomials.

The built-in constraint maps and potentials are all polynomial, and two parts
of the package rely on that structure being explicit:

* restricting a scalar polynomial constraint to a line, ``c -> f(a + b*c)``,
  yields exact univariate coefficients for the all-roots projection solver;
* the compiled chain kernels evaluate constraints and potential gradients
  from plain (coefficient, exponent) tables, so a single cached kernel covers
  every polynomial problem.

The jitted helpers below are the single implementation of that arithmetic:
`MonomialPoly` methods call them, and the chain kernels call them, so both
code paths compute bit-identical values.
"""

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)


@njit(**_JIT)
def poly_eval(coeffs, expts, x):
    total = 0.0
    for m in range(coeffs.shape[0]):
        term = coeffs[m]
        for i in range(expts.shape[1]):
            xi = x[i]
            for _ in range(expts[m, i]):
                term *= xi
        total += term
    return total


@njit(**_JIT)
def poly_grad(coeffs, expts, x, out):
    out[:] = 0.0
    for m in range(coeffs.shape[0]):
        for i in range(expts.shape[1]):
            e = expts[m, i]
            if e == 0:
                continue
            term = coeffs[m] * e
            for j in range(expts.shape[1]):
                ej = expts[m, j]
                if j == i:
                    ej -= 1
                xj = x[j]
                for _ in range(ej):
                    term *= xj
            out[i] += term
    return out


@njit(**_JIT)
def poly_line_coeffs(coeffs, expts, offset, direction, out):
    """Coefficients (ascending) of ``t -> f(offset + direction * t)``.

    ``out`` must have length ``degree + 1``; each monomial is expanded by
    repeated multiplication with the linear factor, which keeps the
    coefficient arithmetic exact up to rounding.
    """
    out[:] = 0.0
    work = np.empty(out.shape[0])
    for m in range(coeffs.shape[0]):
        work[0] = coeffs[m]
        cur = 1
        for i in range(expts.shape[1]):
            o = offset[i]
            b = direction[i]
            for _ in range(expts[m, i]):
                work[cur] = b * work[cur - 1]
                for j in range(cur - 1, 0, -1):
                    work[j] = o * work[j] + b * work[j - 1]
                work[0] = o * work[0]
                cur += 1
        for j in range(cur):
            out[j] += work[j]
    return out


@njit(**_JIT)
def system_eval(coeffs, expts, starts, x, out):
    for c in range(starts.shape[0] - 1):
        total = 0.0
        for m in range(starts[c], starts[c + 1]):
            term = coeffs[m]
            for i in range(expts.shape[1]):
                xi = x[i]
                for _ in range(expts[m, i]):
                    term *= xi
            total += term
        out[c] = total
    return out


@njit(**_JIT)
def system_jac(coeffs, expts, starts, x, out):
    """Jacobian of the polynomial system; column ``c`` is the gradient of
    component ``c`` (shape ``(d, k)``)."""
    out[:] = 0.0
    for c in range(starts.shape[0] - 1):
        for m in range(starts[c], starts[c + 1]):
            for i in range(expts.shape[1]):
                e = expts[m, i]
                if e == 0:
                    continue
                term = coeffs[m] * e
                for j in range(expts.shape[1]):
                    ej = expts[m, j]
                    if j == i:
                        ej -= 1
                    xj = x[j]
                    for _ in range(ej):
                        term *= xj
                out[i, c] += term
    return out


class MonomialPoly:
    """A polynomial stored as a list of monomials.

    Args:
        coeffs: array of shape ``(n,)`` with one coefficient per monomial.
        expts: integer array of shape ``(n, d)`` of per-variable exponents.
    """

    def __init__(self, coeffs, expts):
        coeffs = np.ascontiguousarray(np.asarray(coeffs, dtype=np.float64))
        expts = np.ascontiguousarray(np.asarray(expts, dtype=np.int64))
        if expts.ndim != 2 or coeffs.ndim != 1 or coeffs.shape[0] != expts.shape[0]:
            raise ValueError("coeffs must be (n,), expts must be (n, d)")
        if np.any(expts < 0):
            raise ValueError("exponents must be non-negative")
        self.coeffs = coeffs
        self.expts = expts
        self.n_vars = int(expts.shape[1])
        self.degree = int(expts.sum(axis=1).max()) if coeffs.shape[0] else 0

    @classmethod
    def from_terms(cls, n_vars, terms):
        """Build from an iterable of ``(coefficient, exponent-tuple)`` pairs."""
        terms = list(terms)
        coeffs = np.array([t[0] for t in terms], dtype=np.float64)
        expts = np.array([t[1] for t in terms], dtype=np.int64).reshape(len(terms), n_vars)
        return cls(coeffs, expts)

    @classmethod
    def zero(cls, n_vars):
        return cls(np.zeros(0), np.zeros((0, n_vars), dtype=np.int64))

    def __call__(self, x):
        return poly_eval(self.coeffs, self.expts, np.asarray(x, dtype=np.float64))

    def grad(self, x):
        out = np.empty(self.n_vars)
        poly_grad(self.coeffs, self.expts, np.asarray(x, dtype=np.float64), out)
        return out

    def line_coeffs(self, offset, direction):
        """Exact coefficients (ascending) of ``t -> self(offset + direction*t)``."""
        out = np.empty(self.degree + 1)
        poly_line_coeffs(
            self.coeffs,
            self.expts,
            np.asarray(offset, dtype=np.float64),
            np.asarray(direction, dtype=np.float64),
            out,
        )
        return out


class PolySystem:
    """A vector of `MonomialPoly` sharing the same variables."""

    def __init__(self, components):
        components = tuple(components)
        if not components:
            raise ValueError("need at least one component")
        n_vars = components[0].n_vars
        if any(c.n_vars != n_vars for c in components):
            raise ValueError("components must share the variable count")
        self.components = components
        self.n_vars = n_vars
        self.k = len(components)
        self.coeffs = np.concatenate([c.coeffs for c in components]) if components else np.zeros(0)
        self.expts = (
            np.concatenate([c.expts for c in components], axis=0)
            if components
            else np.zeros((0, n_vars), dtype=np.int64)
        )
        sizes = [c.coeffs.shape[0] for c in components]
        self.starts = np.concatenate(([0], np.cumsum(sizes))).astype(np.int64)
        self.coeffs = np.ascontiguousarray(self.coeffs)
        self.expts = np.ascontiguousarray(self.expts)

    def __call__(self, x):
        out = np.empty(self.k)
        system_eval(self.coeffs, self.expts, self.starts, np.asarray(x, dtype=np.float64), out)
        return out

    def jac(self, x):
        out = np.empty((self.n_vars, self.k))
        system_jac(self.coeffs, self.expts, self.starts, np.asarray(x, dtype=np.float64), out)
        return out
