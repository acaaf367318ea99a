import numpy as np
import pytest

from manifold_mcmc import (
    MalaProposalProblem,
    SolverSpec,
    build_projection_polynomial,
    newton_solve,
    poly_all_roots,
    solve_projection_set,
    tangent_frame,
)
from manifold_mcmc.errors import (
    DegenerateLeadingCoefficient,
    InfinitelyManyRoots,
    NoPolyStructure,
)
from manifold_mcmc.potentials import Potential
from manifold_mcmc.sampler import RngStreams

from helpers import random_torus_points, scan_and_bisect_roots

SQ75 = np.sqrt(0.75)


def _circle_instance(circle_problem, v, tau=0.5):
    cm = circle_problem.cm
    x = np.array([0.0, 1.0])
    frame = tangent_frame(cm, x)
    return cm, MalaProposalProblem(cm, x, frame, np.array([v]), tau, Potential.zero(2))


class TestNewton:
    def test_linear_one_step(self):
        spec = SolverSpec("newton_single", max_iter=10, newton_tol=1e-12)
        root = newton_solve(lambda c: c, lambda c: np.eye(1), np.array([0.5]), spec)
        assert root is not None and abs(root[0]) < 1e-12

    def test_circle_converges_to_near_branch(self, circle_problem):
        cm, problem = _circle_instance(circle_problem, 0.5)
        spec = SolverSpec("newton_single")
        c = newton_solve(problem.residual, problem.jacobian, np.zeros(1), spec)
        assert c is not None
        assert c[0] == pytest.approx(SQ75 - 1.0, abs=1e-6)
        assert problem.build_solution(c).y[1] > 0  # upper branch

    def test_no_real_solution_returns_none(self, circle_problem):
        cm, problem = _circle_instance(circle_problem, 1.5)
        spec = SolverSpec("newton_single")
        assert newton_solve(problem.residual, problem.jacobian, np.zeros(1), spec) is None

    def test_singular_jacobian_gives_none(self):
        spec = SolverSpec("newton_single")
        root = newton_solve(
            lambda c: np.array([c[0] ** 2 + 1.0]),
            lambda c: np.array([[0.0]]),
            np.zeros(1),
            spec,
        )
        assert root is None


class TestAllRoots:
    def test_quadratic(self):
        roots = poly_all_roots([-1.0, 0.0, 1.0])
        assert np.allclose(sorted(roots.real), [-1.0, 1.0], atol=1e-12)
        assert np.max(np.abs(roots.imag)) < 1e-12

    def test_circle_projection_quadratic(self, circle_problem):
        cm, problem = _circle_instance(circle_problem, 0.5)
        offset, direction = problem.poly_line()
        coeffs = build_projection_polynomial(cm, offset, direction)
        roots = poly_all_roots(coeffs)
        ys = sorted(1.0 + roots.real)
        assert ys == pytest.approx([-SQ75, SQ75], abs=1e-12)

    def test_random_known_roots(self):
        # products of (c - r_i) with separated real roots, degree up to 6
        gen = np.random.default_rng(99)
        for _ in range(60):
            deg = int(gen.integers(1, 7))
            while True:
                roots = np.sort(gen.uniform(-3, 3, size=deg))
                if deg == 1 or np.min(np.diff(roots)) > 0.1:
                    break
            coeffs = np.array([1.0])
            for r in roots:
                coeffs = np.convolve(coeffs, np.array([-r, 1.0]))
            found = np.sort(poly_all_roots(coeffs).real)
            assert np.max(np.abs(found - roots)) < 1e-8

    def test_residual_bound(self):
        gen = np.random.default_rng(3)
        for _ in range(30):
            coeffs = gen.normal(size=6)
            roots = poly_all_roots(coeffs)
            for z in roots:
                val = np.polyval(coeffs[::-1], z)
                scale = float(np.sum(np.abs(coeffs) * np.maximum(1.0, abs(z)) ** np.arange(6)))
                assert abs(val) <= 1e-10 * scale

    def test_degenerate_cases(self):
        with pytest.raises(DegenerateLeadingCoefficient):
            poly_all_roots([2.0, 0.0, 0.0])
        with pytest.raises(InfinitelyManyRoots):
            poly_all_roots([0.0, 0.0])

    def test_torus_quartic_against_scan_oracle(self, torus_problem, rng):
        cm = torus_problem.cm
        vbar = Potential.zero(3)
        checked = 0
        for x in random_torus_points(rng, 120):
            frame = tangent_frame(cm, x)
            v = rng.normal(size=2)
            problem = MalaProposalProblem(cm, x, frame, v, 0.8, vbar)
            offset, direction = problem.poly_line()
            coeffs = build_projection_polynomial(cm, offset, direction)
            mine = sorted(
                z.real
                for z in poly_all_roots(coeffs)
                if abs(z.imag) <= 1e-10 * max(1.0, abs(z.real))
            )
            oracle = scan_and_bisect_roots(
                lambda t: float(cm.eval(offset + direction * t)[0]), -20.0, 20.0
            )
            assert len(mine) == len(oracle)
            if mine:
                assert np.max(np.abs(np.array(mine) - np.array(oracle))) < 1e-6
                checked += 1
            if checked >= 10:
                break
        assert checked >= 10


class TestProjectionPolynomial:
    def test_circle_hand_coefficients(self, circle_problem):
        coeffs = build_projection_polynomial(
            circle_problem.cm, np.array([0.5, 1.0]), np.array([0.0, 1.0])
        )
        assert coeffs == pytest.approx([0.125, 1.0, 0.5], abs=1e-15)

    def test_torus_degree_by_interpolation(self, torus_problem, rng):
        # fit degree-4 through 5 samples, verify a 6th point; leading
        # coefficient must be positive whenever the direction is nonzero
        cm = torus_problem.cm
        for x in random_torus_points(rng, 5):
            direction = cm.jacobian(x)[:, 0]
            offset = x + rng.normal(size=3) * 0.2
            coeffs = build_projection_polynomial(cm, offset, direction)
            assert coeffs.shape == (5,)
            assert coeffs[4] > 0.0
            ts = np.linspace(-1.0, 1.0, 5)
            vals = [float(cm.eval(offset + direction * t)[0]) for t in ts]
            fitted = np.polynomial.polynomial.polyfit(ts, vals, 4)
            t6 = 1.7
            predicted = np.polynomial.polynomial.polyval(t6, fitted)
            actual = float(cm.eval(offset + direction * t6)[0])
            assert predicted == pytest.approx(actual, rel=1e-6, abs=1e-8)
            assert np.polynomial.polynomial.polyval(t6, coeffs) == pytest.approx(
                actual, rel=1e-10, abs=1e-10
            )

    def test_evaluation_consistency(self, torus_problem, rng):
        cm = torus_problem.cm
        offset = rng.normal(size=3)
        direction = rng.normal(size=3)
        coeffs = build_projection_polynomial(cm, offset, direction)
        for t in rng.normal(size=20):
            direct = float(cm.eval(offset + direction * t)[0])
            via = float(np.polynomial.polynomial.polyval(t, coeffs))
            assert via == pytest.approx(direct, rel=1e-10, abs=1e-10)

    def test_requires_scalar_polynomial(self, sphere_problem):
        with pytest.raises(NoPolyStructure):
            build_projection_polynomial(
                sphere_problem.cm, np.zeros(10), np.ones(10)
            )


class TestSolveProjectionSet:
    def test_circle_two_solutions(self, circle_problem):
        cm, problem = _circle_instance(circle_problem, 0.5)
        pset = solve_projection_set(cm, problem, SolverSpec("poly_all_roots"))
        assert len(pset) == 2
        ys = sorted(sol.y[1] for sol in pset)
        assert ys == pytest.approx([-SQ75, SQ75], abs=1e-10)
        # ordering: ascending distance from the current position (0, 1)
        assert pset[0].y[1] == pytest.approx(SQ75, abs=1e-10)

    def test_circle_empty_set(self, circle_problem):
        for kind in ("poly_all_roots", "newton_single"):
            cm, problem = _circle_instance(circle_problem, 1.5)
            pset = solve_projection_set(cm, problem, SolverSpec(kind))
            assert len(pset) == 0

    def test_all_roots_superset_of_newton(self, torus_problem, rng):
        cm = torus_problem.cm
        vbar = Potential.zero(3)
        super_count = 0
        for x in random_torus_points(rng, 100):
            frame = tangent_frame(cm, x)
            v = rng.normal(size=2)
            problem = MalaProposalProblem(cm, x, frame, v, 0.8, vbar)
            newton_set = solve_projection_set(cm, problem, SolverSpec("newton_single"))
            poly_set = solve_projection_set(cm, problem, SolverSpec("poly_all_roots"))
            for sol in newton_set:
                dists = [np.linalg.norm(sol.y - q.y) for q in poly_set]
                assert dists and min(dists) <= 1e-6
                super_count += 1
        assert super_count >= 20

    def test_multistart_deterministic_given_stream(self, sphere_problem):
        from manifold_mcmc import RattleProposalProblem, MassMatrix

        cm = sphere_problem.cm
        mass = MassMatrix.identity(10)
        x = sphere_problem.x0
        gen_p = np.random.default_rng(4)
        p = gen_p.normal(size=10)
        from manifold_mcmc import apply_cotangent_projector

        p = apply_cotangent_projector(cm, x, mass, p)
        problem = RattleProposalProblem(cm, x, p, mass, 0.5, Potential.zero(10))
        spec = SolverSpec("newton_multistart", n_starts=16)

        def run():
            rngs = RngStreams.from_seed(777)
            return solve_projection_set(cm, problem, spec, rng=rngs.multistart)

        a, b = run(), run()
        assert len(a) == len(b) and len(a) >= 1
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.x1, sb.x1)
            assert np.array_equal(sa.p1m, sb.p1m)
            assert np.array_equal(sa.lambda_x, sb.lambda_x)

    def test_solutions_satisfy_invariants(self, torus_problem, rng):
        cm = torus_problem.cm
        vbar = Potential.zero(3)
        for x in random_torus_points(rng, 30):
            frame = tangent_frame(cm, x)
            v = rng.normal(size=2)
            problem = MalaProposalProblem(cm, x, frame, v, 0.8, vbar)
            pset = solve_projection_set(cm, problem, SolverSpec("poly_all_roots"))
            positions = pset.positions()
            for i, sol in enumerate(pset):
                assert sol.residual <= 1e-8
                rebuilt = problem.build_solution(sol.c)
                assert np.max(np.abs(rebuilt.y - sol.y)) < 1e-12
                for j in range(i + 1, len(pset)):
                    assert np.linalg.norm(positions[i] - positions[j]) > 1e-6

    def test_hybrid_schedule(self):
        spec = SolverSpec("poly_all_roots", period=50)
        assert spec.effective_kind(0) == "poly_all_roots"
        assert spec.effective_kind(1) == "newton_single"
        assert spec.effective_kind(49) == "newton_single"
        assert spec.effective_kind(50) == "poly_all_roots"
        every = SolverSpec("poly_all_roots", period=1)
        assert every.effective_kind(17) == "poly_all_roots"


def test_solver_spec_validation():
    with pytest.raises(ValueError):
        SolverSpec("bogus")
    with pytest.raises(ValueError):
        SolverSpec("newton_single", max_iter=0)
    with pytest.raises(ValueError):
        SolverSpec("newton_single", newton_tol=0.0)
    with pytest.raises(ValueError):
        SolverSpec("newton_single", period=0)
    assert SolverSpec("newton_multistart", n_starts=8).resolved_start_scale(4) == pytest.approx(4.0)
