"""Shared test utilities: random on-surface states and independent oracles."""

import numpy as np

from manifold_mcmc import (
    MalaProposalProblem,
    MassMatrix,
    RattleProposalProblem,
    SolverSpec,
    apply_cotangent_projector,
    newton_solve,
    rattle_step,
    tangent_frame,
    torus_parametrization,
)
from manifold_mcmc.potentials import Potential

TORUS_R, TORUS_r = 1.0, 0.5


def random_torus_points(rng, n, R=TORUS_R, r=TORUS_r):
    """Uniform-in-angles points on the torus (fine for oracle sweeps)."""
    phis = rng.uniform(0.0, 2.0 * np.pi, size=n)
    thetas = rng.uniform(0.0, 2.0 * np.pi, size=n)
    return [torus_parametrization(p, t, R, r) for p, t in zip(phis, thetas)]


def random_phase_points(rng, cm, n, beta=1.0, mass=None, points=None):
    """On-surface positions with cotangent momenta drawn from the Gaussian."""
    mass = mass or MassMatrix.identity(cm.ambient_dim)
    if points is None:
        points = random_torus_points(rng, n)
    out = []
    for x in points:
        w = mass.sqrt_diag * rng.standard_normal(cm.ambient_dim)
        p = apply_cotangent_projector(cm, x, mass, w) / np.sqrt(beta)
        out.append((np.asarray(x, dtype=np.float64), p))
    return out


def scan_and_bisect_roots(f, lo, hi, step=1e-3, tol=1e-12):
    """All simple real roots of a scalar function on [lo, hi] by dense scan
    plus bisection; independent of any root-finding code under test."""
    roots = []
    t_prev = lo
    v_prev = f(lo)
    t = lo
    while t < hi:
        t_next = min(t + step, hi)
        v_next = f(t_next)
        if v_prev == 0.0:
            roots.append(t_prev)
        elif v_prev * v_next < 0.0:
            a, b = t_prev, t_next
            fa = v_prev
            for _ in range(200):
                m = 0.5 * (a + b)
                fm = f(m)
                if fm == 0.0 or (b - a) < tol:
                    break
                if fa * fm < 0.0:
                    b = m
                else:
                    a, fa = m, fm
            roots.append(0.5 * (a + b))
        t_prev, v_prev = t_next, v_next
        t = t_next
    return sorted(roots)


def _plain_gram_schmidt(cols):
    """In-order (non-pivoted) orthonormalization; smooth under perturbations."""
    out = np.array(cols, dtype=np.float64, copy=True)
    for j in range(out.shape[1]):
        for i in range(j):
            out[:, j] -= (out[:, i] @ out[:, j]) * out[:, i]
        out[:, j] /= np.linalg.norm(out[:, j])
    return out


def one_step_chart_determinant(cm, x, p, tau, h=1e-6):
    """|det| of the one-step phase map in volume-orthonormal local charts.

    Charts: the position coordinate is the multiplier-projected point
    ``x + U a + J(x) c(a)``, the momentum coordinate is expressed in a frame
    obtained by projecting the base frame and re-orthonormalizing (both
    constructions have orthonormal differentials at the chart centers, so
    the finite-difference Jacobian determinant of the chart-to-chart map
    converges to the invariant-volume determinant of the step).
    Identity mass, zero proposal potential.
    """
    d, k = cm.ambient_dim, cm.codim
    nd = d - k
    mass = MassMatrix.identity(d)
    vbar = Potential.zero(d)
    spec = SolverSpec("newton_single", max_iter=60, newton_tol=1e-13)
    u_x = tangent_frame(cm, x).basis
    jac_x = cm.jacobian(x)

    prob0 = RattleProposalProblem(cm, x, p, mass, tau, vbar)
    lam0 = newton_solve(prob0.residual, prob0.jacobian, np.zeros(k), spec)
    assert lam0 is not None, "center step must converge"
    sol0 = rattle_step(cm, x, p, lam0, mass, tau, vbar, tol_constraint=1e-9)
    x1 = sol0.x1
    u_1 = tangent_frame(cm, x1).basis

    def position_chart(a):
        mp = MalaProposalProblem(cm, x, tangent_frame(cm, x), a, 0.5, vbar)
        c = newton_solve(mp.residual, mp.jacobian, np.zeros(k), spec)
        assert c is not None
        return x + u_x @ a + jac_x @ c

    def frame_at(yy, base):
        pm = np.eye(d) - cm.jacobian(yy) @ np.linalg.solve(
            cm.jacobian(yy).T @ cm.jacobian(yy), cm.jacobian(yy).T
        )
        return _plain_gram_schmidt(pm @ base)

    def forward(ab):
        a, b = ab[:nd], ab[nd:]
        xa = position_chart(a)
        pa = frame_at(xa, u_x) @ b
        prob = RattleProposalProblem(cm, xa, pa, mass, tau, vbar)
        lam = newton_solve(prob.residual, prob.jacobian, lam0, spec)
        assert lam is not None
        sol = rattle_step(cm, xa, pa, lam, mass, tau, vbar, tol_constraint=1e-8)
        a_out = u_1.T @ (sol.x1 - x1)
        b_out = frame_at(sol.x1, u_1).T @ sol.p1m
        return np.concatenate([a_out, b_out])

    center = np.concatenate([np.zeros(nd), u_x.T @ p])
    jac = np.empty((2 * nd, 2 * nd))
    for j in range(2 * nd):
        e = np.zeros(2 * nd)
        e[j] = h
        jac[:, j] = (forward(center + e) - forward(center - e)) / (2.0 * h)
    return abs(np.linalg.det(jac))


def mala_frame(cm, x):
    return tangent_frame(cm, x)
