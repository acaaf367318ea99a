import numpy as np
import pytest

from manifold_mcmc import (
    DEFAULT_FAR_RANK_TABLE,
    MassMatrix,
    OmegaPolicy,
    ProposalSet,
    RngStreams,
    SamplerConfig,
    SolverSpec,
    Stage,
    apply_cotangent_projector,
    cotangent_projector,
    hmc_iteration,
    hmc_momentum_update,
    mala_iteration,
    omega_of,
    run_chain,
    sample_cotangent_gaussian,
    select_proposal,
    summary_rates,
)
from manifold_mcmc.potentials import Potential

from helpers import random_torus_points


def _cfg(problem, **kw):
    base = dict(
        algorithm="hmc",
        tau=0.8,
        beta=1.0,
        potential=problem.potential,
        proposal_potential=problem.proposal_potential,
        solver=SolverSpec("newton_single"),
        omega=OmegaPolicy("uniform"),
        n_iterations=0,
        seed=0,
    )
    base.update(kw)
    return SamplerConfig(**base)


class TestOmegaPolicy:
    def test_uniform(self):
        pol = OmegaPolicy("uniform")
        probs, fb = pol.probabilities(4)
        assert np.allclose(probs, 0.25) and not fb
        fake = ProposalSet(solutions=(0, 1, 2), solver_label="x")
        assert omega_of(fake, 1, pol) == pytest.approx(1 / 3)

    def test_ranked_default_rows(self):
        pol = OmegaPolicy("ranked")
        assert pol.prob_of(1, 0) == pytest.approx(1.0)
        probs, _ = pol.probabilities(2)
        assert probs == pytest.approx([0.4, 0.6])  # (nearest, farthest)
        assert pol.prob_of(4, 1) == pytest.approx(0.3)  # second nearest
        assert pol.prob_of(3, 2) == pytest.approx(0.4)  # farthest of three

    def test_ranked_missing_row_falls_back(self, caplog):
        pol = OmegaPolicy("ranked")
        with caplog.at_level("WARNING"):
            probs, fb = pol.probabilities(6)
        assert fb and np.allclose(probs, 1 / 6)
        assert any("no row" in r.message for r in caplog.records)

    def test_validation(self):
        with pytest.raises(ValueError):
            OmegaPolicy("bogus")
        with pytest.raises(ValueError):
            OmegaPolicy("ranked", rank_table={2: (0.5, 0.6)})  # does not sum to 1
        with pytest.raises(ValueError):
            OmegaPolicy("ranked", rank_table={2: (1.0, 0.0)})  # zero entry
        with pytest.raises(ValueError):
            OmegaPolicy("uniform", rank_table={1: (1.0,)})

    def test_selection_distribution(self):
        pol = OmegaPolicy("ranked")
        gen = np.random.default_rng(0)
        counts = np.zeros(2)
        for _ in range(20000):
            idx, prob, _ = pol.select(2, gen)
            counts[idx] += 1
            assert prob == pytest.approx((0.4, 0.6)[idx])
        assert counts[1] / counts.sum() == pytest.approx(0.6, abs=0.01)

    def test_select_proposal_api(self):
        fake = ProposalSet(solutions=(0, 1, 2, 3), solver_label="x")
        idx, weight = select_proposal(fake, OmegaPolicy("uniform"), np.random.default_rng(1))
        assert 0 <= idx < 4 and weight == pytest.approx(0.25)


class TestMomentumUpdate:
    def test_full_refresh_is_cotangent_gaussian(self, torus_problem):
        cm = torus_problem.cm
        cfg = _cfg(torus_problem, alpha=0.0, beta=2.0)
        x = np.array([1.5, 0.0, 0.0])
        p_old = np.array([0.0, 5.0, 0.0])
        gen_a = np.random.default_rng(42)
        p_new = hmc_momentum_update(cm, cfg, x, p_old, gen_a)
        gen_b = np.random.default_rng(42)
        expected = sample_cotangent_gaussian(cm, x, MassMatrix.identity(3), 2.0, gen_b)
        assert np.allclose(p_new, expected, atol=1e-14)  # independent of p_old

    def test_tangency_preserved(self, torus_problem, rng):
        cm = torus_problem.cm
        cfg = _cfg(torus_problem, alpha=0.7)
        mass = MassMatrix.identity(3)
        gen = np.random.default_rng(1)
        for x in random_torus_points(rng, 10):
            p = apply_cotangent_projector(cm, x, mass, rng.normal(size=3))
            p_new = hmc_momentum_update(cm, cfg, x, p, gen)
            assert np.linalg.norm(cm.jacobian(x).T @ p_new) < 1e-10

    @pytest.mark.parametrize("alpha", [0.0, 0.7])
    def test_stationary_covariance(self, torus_problem, alpha):
        # p ~ cotangent Gaussian stays so after the partial refresh
        cm = torus_problem.cm
        beta = 1.0
        mass = MassMatrix.identity(3)
        cfg = _cfg(torus_problem, alpha=alpha, beta=beta)
        x = np.array([1.5, 0.0, 0.0])
        gen = np.random.default_rng(7)
        n = 100_000
        draws = np.empty((n, 3))
        p = sample_cotangent_gaussian(cm, x, mass, beta, gen)
        for i in range(n):
            p = hmc_momentum_update(cm, cfg, x, p, gen)
            draws[i] = p
        emp = draws.T @ draws / n
        pm = cotangent_projector(cm, x, mass)
        target = pm @ pm.T / beta
        assert np.max(np.abs(emp - target)) < 0.05 * np.max(np.abs(target))


class TestMalaIteration:
    def test_no_solution_keeps_position_bitwise(self, circle_problem):
        cfg = _cfg(
            circle_problem, algorithm="mala", tau=8.0,
            solver=SolverSpec("poly_all_roots"), n_iterations=0,
        )
        x = np.array([1.0, 0.0])
        # with tau = 8 the tangent move usually leaves the reachable band
        found = False
        for seed in range(20):
            rngs = RngStreams.from_seed(seed)
            x_next, rec = mala_iteration(circle_problem.cm, cfg, x, rngs)
            if rec.stage == Stage.NO_SOLUTION:
                assert x_next is x
                assert rec.n_forward == 0 and rec.n_backward == -1
                assert rec.jump_distance == 0.0
                found = True
                break
        assert found

    def test_flat_circle_always_accepts_when_projection_succeeds(self, circle_problem):
        # zero potential, uniform choice between the two chord images, and
        # |v'| = |v| by the chord symmetry: the ratio is exactly one
        cfg = _cfg(
            circle_problem, algorithm="mala", tau=0.5,
            solver=SolverSpec("poly_all_roots"),
        )
        x = np.array([1.0, 0.0])
        rngs = RngStreams.from_seed(123)
        stages = set()
        for it in range(1500):
            x, rec = mala_iteration(circle_problem.cm, cfg, x, rngs, iteration=it)
            stages.add(rec.stage)
        assert Stage.MH_REJECTED not in stages
        assert Stage.ACCEPTED in stages

    def test_record_fields_consistent(self, torus_problem):
        cfg = _cfg(torus_problem, algorithm="mala", solver=SolverSpec("poly_all_roots"))
        x = torus_problem.x0.copy()
        rngs = RngStreams.from_seed(5)
        for it in range(300):
            x, rec = mala_iteration(torus_problem.cm, cfg, x, rngs, iteration=it)
            assert (rec.stage == Stage.NO_SOLUTION) == (rec.n_forward == 0)
            assert (rec.jump_distance > 0) == (rec.stage == Stage.ACCEPTED)
            assert torus_problem.cm.residual_norm(rec.x) <= 1e-8


class TestHmcIteration:
    def test_empty_set_reverses_and_refreshes_momentum(self, circle_problem):
        cfg = _cfg(circle_problem, tau=8.0, alpha=0.7, solver=SolverSpec("poly_all_roots"))
        cm = circle_problem.cm
        x = np.array([1.0, 0.0])
        mass = MassMatrix.identity(2)
        for seed in range(30):
            rngs = RngStreams.from_seed(seed)
            p0 = sample_cotangent_gaussian(cm, x, mass, cfg.beta, rngs.velocity)
            x_next, p_next, rec = hmc_iteration(cm, cfg, x, p0, rngs)
            if rec.stage != Stage.NO_SOLUTION:
                continue
            assert x_next is x
            # replay the two refreshes to predict the final momentum exactly
            replay = RngStreams.from_seed(seed)
            q0 = sample_cotangent_gaussian(cm, x, mass, cfg.beta, replay.velocity)
            q1 = hmc_momentum_update(cm, cfg, x, q0, replay.velocity)
            q2 = hmc_momentum_update(cm, cfg, x, -q1, replay.velocity)
            assert np.allclose(p_next, q2, atol=1e-14)
            return
        pytest.fail("no empty proposal set found")

    def test_flat_circle_always_accepts(self, circle_problem):
        cfg = _cfg(circle_problem, tau=0.9, solver=SolverSpec("poly_all_roots"))
        cm = circle_problem.cm
        x = np.array([1.0, 0.0])
        rngs = RngStreams.from_seed(3)
        p = sample_cotangent_gaussian(cm, x, MassMatrix.identity(2), 1.0, rngs.velocity)
        stages = set()
        for it in range(1500):
            x, p, rec = hmc_iteration(cm, cfg, x, p, rngs, iteration=it)
            stages.add(rec.stage)
        assert Stage.MH_REJECTED not in stages
        assert Stage.ACCEPTED in stages

    def test_emitted_states_satisfy_invariants(self, torus_problem):
        cfg = _cfg(torus_problem, solver=SolverSpec("poly_all_roots"), alpha=0.5)
        cm = torus_problem.cm
        mass = MassMatrix.identity(3)
        x = torus_problem.x0.copy()
        rngs = RngStreams.from_seed(8)
        p = sample_cotangent_gaussian(cm, x, mass, 1.0, rngs.velocity)
        for it in range(300):
            x, p, rec = hmc_iteration(cm, cfg, x, p, rngs, iteration=it)
            assert cm.residual_norm(x) <= 1e-8
            assert np.linalg.norm(cm.jacobian(x).T @ p) <= 1e-9


class TestRunChain:
    def test_zero_iterations(self, torus_problem):
        cfg = _cfg(torus_problem, n_iterations=0, seed=1)
        res = run_chain(torus_problem.cm, cfg, torus_problem.x0)
        assert res.stats.n_total == 0
        assert np.allclose(res.x, torus_problem.x0)

    def test_determinism_across_runs(self, torus_problem):
        cfg = _cfg(torus_problem, n_iterations=2000, seed=99, solver=SolverSpec("poly_all_roots"))
        recs_a, recs_b = [], []
        ra = run_chain(torus_problem.cm, cfg, torus_problem.x0, sinks=(recs_a.append,))
        rb = run_chain(torus_problem.cm, cfg, torus_problem.x0, sinks=(recs_b.append,))
        assert np.array_equal(ra.x, rb.x) and np.array_equal(ra.p, rb.p)
        assert len(recs_a) == len(recs_b) == 2000
        for a, b in zip(recs_a, recs_b):
            assert a.stage == b.stage and np.array_equal(a.x, b.x)
        sa, sb = ra.stats, rb.stats
        assert sa.n_forward_hist == sb.n_forward_hist
        assert sa.n_accepted_moves == sb.n_accepted_moves

    def test_rejections_keep_position_bitwise(self, torus_problem):
        cfg = _cfg(torus_problem, n_iterations=500, seed=12)
        recs = []
        run_chain(torus_problem.cm, cfg, torus_problem.x0, sinks=(recs.append,))
        prev = None
        for rec in recs:
            if prev is not None and rec.stage != Stage.ACCEPTED:
                assert np.array_equal(rec.x, prev)
            prev = rec.x

    def test_bsr_is_one_under_all_roots(self, torus_problem):
        cfg = _cfg(torus_problem, n_iterations=20000, seed=4, solver=SolverSpec("poly_all_roots"))
        res = run_chain(torus_problem.cm, cfg, torus_problem.x0)
        s = res.stats
        assert s.n_reversibility_passed == s.n_reversibility_invoked > 0
        assert summary_rates(s)["bsr"] == 1.0

    def test_initial_point_projected_or_fails(self, torus_problem):
        cfg = _cfg(torus_problem, n_iterations=10, seed=1)
        res = run_chain(torus_problem.cm, cfg, np.array([1.45, 0.05, 0.02]))
        assert torus_problem.cm.residual_norm(res.x) <= 1e-8
        from manifold_mcmc.errors import ProjectionFailed, SingularGram

        with pytest.raises((ProjectionFailed, SingularGram)):
            run_chain(torus_problem.cm, cfg, np.zeros(3))

    def test_stats_consistency_and_hist_totals(self, torus_problem):
        cfg = _cfg(
            torus_problem, n_iterations=5000, seed=21,
            solver=SolverSpec("poly_all_roots", period=50), omega=OmegaPolicy("ranked"),
        )
        res = run_chain(torus_problem.cm, cfg, torus_problem.x0)
        s = res.stats
        assert sum(s.n_forward_hist.values()) == s.n_total == 5000
        assert sum(s.n_backward_hist.values()) == s.n_reversibility_invoked
        assert s.n_expensive == 100  # every 50th iteration, starting at 0
        s.check_consistency()


class TestKernelMatchesPython:
    """The compiled kernels follow the reference path draw for draw."""

    def _records(self, problem, cfg, n, component_of=None, force_python=False, p0=None):
        recs = []
        res = run_chain(
            problem.cm, cfg, problem.x0, p0=p0, sinks=(recs.append,),
            component_of=component_of, force_python=force_python,
        )
        return res, recs

    @pytest.mark.parametrize(
        "algorithm,solver",
        [
            ("hmc", SolverSpec("newton_single")),
            ("hmc", SolverSpec("poly_all_roots")),
            ("mala", SolverSpec("poly_all_roots")),
            ("mala", SolverSpec("newton_single")),
        ],
    )
    def test_torus_short_horizon(self, torus_problem, algorithm, solver):
        cfg = _cfg(
            torus_problem, algorithm=algorithm, solver=solver,
            omega=OmegaPolicy("ranked"), n_iterations=60, seed=1234, alpha=0.3 if algorithm == "hmc" else 0.0,
        )
        res_py, recs_py = self._records(torus_problem, cfg, 60, force_python=True)
        res_k, recs_k = self._records(torus_problem, cfg, 60)
        for a, b in zip(recs_py, recs_k):
            assert a.stage == b.stage
            assert a.n_forward == b.n_forward and a.n_backward == b.n_backward
            assert np.max(np.abs(a.x - b.x)) < 1e-9
        assert res_py.stats.n_forward_hist == res_k.stats.n_forward_hist
        assert res_py.stats.n_accepted_moves == res_k.stats.n_accepted_moves

    def test_sphere_multistart_short_horizon(self, sphere_problem):
        cfg = _cfg(
            sphere_problem, tau=0.5,
            solver=SolverSpec("newton_multistart", n_starts=8),
            n_iterations=40, seed=31,
        )
        res_py, recs_py = self._records(
            sphere_problem, cfg, 40, component_of=sphere_problem.component_of,
            force_python=True,
        )
        res_k, recs_k = self._records(
            sphere_problem, cfg, 40, component_of=sphere_problem.component_of
        )
        for a, b in zip(recs_py, recs_k):
            assert a.stage == b.stage
            assert np.max(np.abs(a.x - b.x)) < 1e-8
        assert res_py.stats.component_occupancy == res_k.stats.component_occupancy

    def test_torus_long_run_statistics_agree(self, torus_problem):
        cfg = _cfg(torus_problem, solver=SolverSpec("poly_all_roots"), n_iterations=8000, seed=5)
        res_py, _ = self._records(torus_problem, cfg, 0, force_python=True)
        res_k, _ = self._records(torus_problem, cfg, 0)
        r_py, r_k = summary_rates(res_py.stats), summary_rates(res_k.stats)
        for key in ("fsr", "tar", "mean_jump"):
            assert r_py[key] == pytest.approx(r_k[key], abs=0.03)
        assert r_py["bsr"] == r_k["bsr"] == 1.0


def test_sampler_config_validation(torus_problem):
    with pytest.raises(ValueError):
        _cfg(torus_problem, alpha=1.0)
    with pytest.raises(ValueError):
        _cfg(torus_problem, tau=0.0)
    with pytest.raises(ValueError):
        _cfg(torus_problem, algorithm="nuts")
    with pytest.raises(ValueError):
        _cfg(torus_problem, reversibility_tol=1e-9)  # below the solver tolerance
    with pytest.raises(ValueError):
        _cfg(torus_problem, n_iterations=-1)
