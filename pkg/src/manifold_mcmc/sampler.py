"""The two Markov chain samplers and the chain driver.

Both samplers follow the same skeleton: draw a velocity/momentum, compute
the finite set of projection solutions, pick one according to a selection
policy, recompute the solution set from the proposal and check the current
state is among them (the reversibility check), then accept or reject with a
Metropolis ratio that carries the selection-probability correction.

Randomness is organized as four independent, seedable streams (velocity and
momentum Gaussians, selection uniforms, Metropolis uniforms, multistart
Newton guesses), so a chain is fully reproducible from (config, seed, chain
index) and solver randomness stays independent of chain randomness.  The
per-iteration stream consumption contract is fixed: the compiled kernels and
the pure-Python path below consume draws in exactly the same order.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Optional

import numpy as np

from .diagnostics import ChainStats, sphere_component
from .errors import ChainAbort, ManifoldMCMCError
from .geometry import (
    MassMatrix,
    apply_cotangent_projector,
    project_to_surface,
    sample_cotangent_gaussian,
    tangent_frame,
)
from .potentials import Potential
from .projection import (
    MalaProposalProblem,
    RattleProposalProblem,
    mala_multiplier_from_target,
    mala_reverse_velocity,
    rattle_multiplier_from_positions,
)
from .rootfind import SolverSpec, solve_projection_set

logger = logging.getLogger(__name__)

#: Streams derived from the root seed (spawn keys of the seed sequence).
STREAM_VELOCITY = 1
STREAM_SELECTION = 2
STREAM_METROPOLIS = 3
STREAM_MULTISTART = 4

#: A matched backward solution whose stored multiplier is further than this
#: from the closed-form value is counted (the match itself still stands).
MULTIPLIER_MISMATCH_TOL = 1e-6

#: Distance-ranked selection probabilities favouring farther solutions
#: slightly, one row per solution count.
DEFAULT_FAR_RANK_TABLE = {
    1: (1.0,),
    2: (0.4, 0.6),
    3: (0.2, 0.4, 0.4),
    4: (0.2, 0.3, 0.3, 0.2),
}


class Stage(IntEnum):
    NO_SOLUTION = 0
    REVERSIBILITY_FAILED = 1
    MH_REJECTED = 2
    ACCEPTED = 3


@dataclass(frozen=True, eq=False)
class IterationRecord:
    """Outcome of one iteration (position is the post-iteration state)."""

    iteration: int
    x: np.ndarray
    accepted: bool
    n_forward: int
    n_backward: int  # -1 when the reversibility check was not invoked
    jump_distance: float
    stage: Stage
    # diagnostics beyond the core record
    expensive: bool = False
    multiplier_mismatch: bool = False
    rank_fallback: bool = False


@dataclass(frozen=True)
class OmegaPolicy:
    """Probability distribution used to pick one proposal from a solution set.

    ``uniform`` weights all solutions equally; ``ranked`` assigns the row of
    ``rank_table`` matching the solution count to the distance-sorted set.
    A missing row falls back to uniform (and is logged).
    """

    kind: str = "uniform"
    rank_table: Optional[dict] = None

    def __post_init__(self):
        if self.kind not in ("uniform", "ranked"):
            raise ValueError(f"omega kind must be 'uniform' or 'ranked', got {self.kind!r}")
        if self.kind == "ranked":
            table = self.rank_table if self.rank_table is not None else DEFAULT_FAR_RANK_TABLE
            norm = {}
            for n, row in table.items():
                n = int(n)
                row = tuple(float(p) for p in row)
                if len(row) != n:
                    raise ValueError(f"rank table row for n={n} must have {n} entries")
                if any(p <= 0.0 for p in row):
                    raise ValueError(f"rank table row for n={n} must be strictly positive")
                if abs(sum(row) - 1.0) > 1e-12:
                    raise ValueError(f"rank table row for n={n} must sum to 1")
                norm[n] = row
            object.__setattr__(self, "rank_table", norm)
        elif self.rank_table is not None:
            raise ValueError("uniform policy takes no rank table")

    def probabilities(self, n):
        """(probability row for a set of size n, fell-back-to-uniform flag)."""
        if n < 1:
            raise ValueError("need a non-empty solution set")
        if self.kind == "ranked":
            row = self.rank_table.get(n)
            if row is not None:
                return np.array(row), False
            logger.warning("ranked selection has no row for %d solutions; using uniform", n)
            return np.full(n, 1.0 / n), True
        return np.full(n, 1.0 / n), False

    def prob_of(self, n, index):
        probs, _ = self.probabilities(n)
        return float(probs[index])

    def select(self, n, rng):
        """Draw an index; returns (index, its probability, fallback flag)."""
        r = rng.random()
        probs, fallback = self.probabilities(n)
        if self.kind == "uniform" or fallback:
            idx = min(int(r * n), n - 1)
            return idx, float(probs[idx]), fallback
        cum = 0.0
        for i in range(n):
            cum += probs[i]
            if r < cum:
                return i, float(probs[i]), fallback
        return n - 1, float(probs[n - 1]), fallback


def select_proposal(pset, omega, rng):
    """Randomly pick one element of a (distance-sorted) proposal set.

    Returns the index and the probability mass actually used, which the
    acceptance ratio needs.
    """
    idx, prob, _ = omega.select(len(pset), rng)
    return idx, prob


def omega_of(pset, target_index, omega):
    """Probability the policy assigns to a given element (no sampling)."""
    if not 0 <= target_index < len(pset):
        raise IndexError("target index outside the proposal set")
    return omega.prob_of(len(pset), target_index)


@dataclass
class RngStreams:
    velocity: np.random.Generator
    selection: np.random.Generator
    metropolis: np.random.Generator
    multistart: np.random.Generator

    @classmethod
    def from_seed(cls, seed, chain_index=0):
        def make(stream_id):
            seq = np.random.SeedSequence(entropy=seed, spawn_key=(stream_id, chain_index))
            return np.random.Generator(np.random.Philox(seq))

        return cls(
            velocity=make(STREAM_VELOCITY),
            selection=make(STREAM_SELECTION),
            metropolis=make(STREAM_METROPOLIS),
            multistart=make(STREAM_MULTISTART),
        )


@dataclass
class SamplerConfig:
    """All tunables of one chain."""

    algorithm: str
    tau: float
    beta: float
    potential: Potential
    proposal_potential: Potential
    solver: SolverSpec
    omega: OmegaPolicy = field(default_factory=OmegaPolicy)
    alpha: float = 0.0
    mass: Optional[MassMatrix] = None
    tol_constraint: float = 1e-8
    reversibility_tol: float = 1e-6
    n_iterations: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ("mala", "hmc"):
            raise ValueError(f"algorithm must be 'mala' or 'hmc', got {self.algorithm!r}")
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")
        if self.beta <= 0.0:
            raise ValueError("beta must be positive")
        if abs(self.alpha) >= 1.0:
            raise ValueError("|alpha| must be < 1")
        if self.tol_constraint <= 0.0:
            raise ValueError("tol_constraint must be positive")
        # a reversibility match must be decidable above solver noise
        if self.reversibility_tol <= self.solver.newton_tol:
            raise ValueError("reversibility_tol must exceed the solver tolerance")
        if self.n_iterations < 0:
            raise ValueError("n_iterations must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")

    def mass_for(self, dim):
        return self.mass if self.mass is not None else MassMatrix.identity(dim)


def _dist(a, b):
    return float(np.sqrt(np.sum((a - b) ** 2)))


def _nearest_index(pset, x):
    best, best_d = -1, np.inf
    for i, sol in enumerate(pset):
        d = _dist(sol.position, x)
        if d < best_d:
            best, best_d = i, d
    return best, best_d


def mala_iteration(cm, cfg, x, rngs, iteration=0):
    """One iteration of the position-space sampler; returns (x_next, record)."""
    d, k = cm.ambient_dim, cm.codim
    vbar = cfg.proposal_potential
    kind = cfg.solver.effective_kind(iteration)
    expensive = kind != "newton_single"

    v = rngs.velocity.standard_normal(d - k) / np.sqrt(cfg.beta)
    frame = tangent_frame(cm, x)
    problem = MalaProposalProblem(cm, x, frame, v, cfg.tau, vbar)
    pset = solve_projection_set(
        cm, problem, cfg.solver, rng=rngs.multistart, iteration=iteration,
        tol_constraint=cfg.tol_constraint,
    )
    n_fwd = len(pset)
    if n_fwd == 0:
        rec = IterationRecord(iteration + 1, x, False, 0, -1, 0.0, Stage.NO_SOLUTION,
                              expensive=expensive)
        return x, rec

    idx, prob_fwd, fallback_f = cfg.omega.select(n_fwd, rngs.selection)
    y = pset[idx].y

    frame_y = tangent_frame(cm, y)
    v_back = mala_reverse_velocity(cm, y, frame_y, x, cfg.tau, vbar)
    problem_back = MalaProposalProblem(cm, y, frame_y, v_back, cfg.tau, vbar)
    bset = solve_projection_set(
        cm, problem_back, cfg.solver, rng=rngs.multistart, iteration=iteration,
        tol_constraint=cfg.tol_constraint,
    )
    n_bwd = len(bset)
    match, match_dist = _nearest_index(bset, x)
    passed = n_bwd > 0 and (match_dist <= cfg.reversibility_tol or kind == "poly_all_roots")
    if not passed:
        rec = IterationRecord(iteration + 1, x, False, n_fwd, n_bwd, 0.0,
                              Stage.REVERSIBILITY_FAILED, expensive=expensive,
                              rank_fallback=fallback_f)
        return x, rec

    c_ref = mala_multiplier_from_target(cm, y, x, cfg.tau, vbar)
    mismatch = float(np.sqrt(np.sum((bset[match].c - c_ref) ** 2))) > MULTIPLIER_MISMATCH_TOL
    prob_bwd = cfg.omega.prob_of(n_bwd, match)
    energy_new = cfg.potential.value(y) + 0.5 * float(np.sum(v_back * v_back))
    energy_old = cfg.potential.value(x) + 0.5 * float(np.sum(v * v))
    ratio = (prob_bwd / prob_fwd) * np.exp(-cfg.beta * (energy_new - energy_old))
    r = rngs.metropolis.random()
    if r <= ratio:
        jump = _dist(y, x)
        rec = IterationRecord(iteration + 1, y, True, n_fwd, n_bwd, jump, Stage.ACCEPTED,
                              expensive=expensive, multiplier_mismatch=mismatch,
                              rank_fallback=fallback_f)
        return y, rec
    rec = IterationRecord(iteration + 1, x, False, n_fwd, n_bwd, 0.0, Stage.MH_REJECTED,
                          expensive=expensive, multiplier_mismatch=mismatch,
                          rank_fallback=fallback_f)
    return x, rec


def hmc_momentum_update(cm, cfg, x, p, rng):
    """Partial momentum refresh leaving the cotangent Gaussian invariant.

    Consumes exactly ``d`` standard normals from ``rng``; the position is
    untouched and tangency is preserved by construction.
    """
    mass = cfg.mass_for(cm.ambient_dim)
    w = mass.sqrt_diag * rng.standard_normal(cm.ambient_dim)
    eta = apply_cotangent_projector(cm, x, mass, w)
    return cfg.alpha * p + np.sqrt((1.0 - cfg.alpha**2) / cfg.beta) * eta


def hmc_iteration(cm, cfg, x, p, rngs, iteration=0):
    """One iteration of the phase-space sampler; returns (x, p, record).

    The momentum is refreshed, one integrator step provides the proposal
    set, and after the accept/reject decision the momentum is flipped and
    refreshed again; the flip and second refresh run unconditionally, also
    when the proposal set is empty or the check fails.
    """
    mass = cfg.mass_for(cm.ambient_dim)
    vbar = cfg.proposal_potential
    kind = cfg.solver.effective_kind(iteration)
    expensive = kind != "newton_single"
    minv = mass.inv_diag

    p = hmc_momentum_update(cm, cfg, x, p, rngs.velocity)

    problem = RattleProposalProblem(cm, x, p, mass, cfg.tau, vbar)
    pset = solve_projection_set(
        cm, problem, cfg.solver, rng=rngs.multistart, iteration=iteration,
        tol_constraint=cfg.tol_constraint,
    )
    n_fwd = len(pset)
    stage = Stage.NO_SOLUTION
    n_bwd = -1
    jump = 0.0
    mismatch = False
    fallback_f = False
    x_next, p_next = x, p
    if n_fwd > 0:
        idx, prob_fwd, fallback_f = cfg.omega.select(n_fwd, rngs.selection)
        cand = pset[idx]
        problem_back = RattleProposalProblem(cm, cand.x1, cand.p1m, mass, cfg.tau, vbar)
        bset = solve_projection_set(
            cm, problem_back, cfg.solver, rng=rngs.multistart, iteration=iteration,
            tol_constraint=cfg.tol_constraint,
        )
        n_bwd = len(bset)
        # position equality is sufficient for the check: the admissible
        # multiplier pair from the proposal back to the same position is
        # unique, so matching momenta come for free
        match, match_dist = _nearest_index(bset, x)
        passed = n_bwd > 0 and (match_dist <= cfg.reversibility_tol or kind == "poly_all_roots")
        if not passed:
            stage = Stage.REVERSIBILITY_FAILED
        else:
            lam_ref = rattle_multiplier_from_positions(
                cm, cand.x1, cand.p1m, x, mass, cfg.tau, vbar
            )
            mismatch = (
                float(np.sqrt(np.sum((bset[match].lambda_x - lam_ref) ** 2)))
                > MULTIPLIER_MISMATCH_TOL
            )
            prob_bwd = cfg.omega.prob_of(n_bwd, match)
            h_new = cfg.potential.value(cand.x1) + 0.5 * float(
                np.sum(cand.p1m * (minv * cand.p1m))
            )
            h_old = cfg.potential.value(x) + 0.5 * float(np.sum(p * (minv * p)))
            ratio = (prob_bwd / prob_fwd) * np.exp(-cfg.beta * (h_new - h_old))
            r = rngs.metropolis.random()
            if r <= ratio:
                stage = Stage.ACCEPTED
                jump = _dist(cand.x1, x)
                x_next, p_next = cand.x1, cand.p1m
            else:
                stage = Stage.MH_REJECTED

    p_next = -p_next
    p_next = hmc_momentum_update(cm, cfg, x_next, p_next, rngs.velocity)
    rec = IterationRecord(iteration + 1, x_next, stage == Stage.ACCEPTED, n_fwd, n_bwd,
                          jump, stage, expensive=expensive,
                          multiplier_mismatch=mismatch, rank_fallback=fallback_f)
    return x_next, p_next, rec


@dataclass
class RunResult:
    stats: ChainStats
    x: np.ndarray
    p: Optional[np.ndarray] = None


def _kernel_usable(cm, cfg, component_of):
    if cm.poly is None:
        return False
    if cfg.potential.poly is None or cfg.proposal_potential.poly is None:
        return False
    if component_of is not None and component_of is not sphere_component:
        return False
    if cfg.solver.kind == "poly_all_roots" and cm.codim != 1:
        return False
    return True


def run_chain(
    cm,
    cfg,
    x0,
    p0=None,
    sinks=(),
    record_every=1,
    chain_index=0,
    component_of=None,
    force_python=False,
):
    """Run a chain of ``cfg.n_iterations`` iterations from ``x0``.

    The initial position is projected onto the surface (failing loudly when
    Newton cannot reach it); for the phase-space sampler a missing initial
    momentum is drawn from the cotangent Gaussian.  Records are streamed to
    ``sinks`` every ``record_every`` iterations; statistics are accumulated
    unthinned.  Polynomial problems run on a compiled kernel unless
    ``force_python`` is set; both paths consume the RNG streams identically.

    Numeric failures abort the chain with `ChainAbort` carrying the
    iteration index; they are never swallowed.
    """
    d = cm.ambient_dim
    x = project_to_surface(cm, np.asarray(x0, dtype=np.float64), tol=cfg.tol_constraint)
    mass = cfg.mass_for(d)
    rngs = RngStreams.from_seed(cfg.seed, chain_index)
    p = None
    if cfg.algorithm == "hmc":
        if p0 is None:
            p = sample_cotangent_gaussian(cm, x, mass, cfg.beta, rngs.velocity)
        else:
            p = apply_cotangent_projector(cm, x, mass, np.asarray(p0, dtype=np.float64))

    stats = ChainStats()
    t_start = time.perf_counter()
    if cfg.n_iterations > 0:
        if not force_python and _kernel_usable(cm, cfg, component_of):
            from ._kernel import run_chain_kernel

            x, p = run_chain_kernel(
                cm, cfg, x, p, rngs, stats, sinks, record_every, component_of
            )
        else:
            x, p = _run_chain_python(
                cm, cfg, x, p, rngs, stats, sinks, record_every, component_of
            )
    stats.wall_time_seconds = time.perf_counter() - t_start
    stats.check_consistency()
    return RunResult(stats=stats, x=x, p=p)


def _accumulate(stats, rec, x_prev, x_new, component_of, comp_prev):
    stats.n_total += 1
    nf = max(rec.n_forward, 0)
    stats.n_forward_hist[nf] = stats.n_forward_hist.get(nf, 0) + 1
    if rec.n_backward >= 0:
        stats.n_reversibility_invoked += 1
        stats.n_backward_hist[rec.n_backward] = (
            stats.n_backward_hist.get(rec.n_backward, 0) + 1
        )
        if rec.stage in (Stage.MH_REJECTED, Stage.ACCEPTED):
            stats.n_reversibility_passed += 1
    if rec.expensive:
        stats.n_expensive += 1
    if rec.multiplier_mismatch:
        stats.n_multiplier_mismatch += 1
    if rec.rank_fallback:
        stats.n_rank_fallback += 1
    if rec.stage == Stage.ACCEPTED and rec.jump_distance > 0.0:
        stats.n_accepted_moves += 1
        stats.sum_jump_distance += rec.jump_distance
        if rec.expensive:
            stats.n_accepted_expensive += 1
            stats.sum_jump_expensive += rec.jump_distance
        if x_prev[0] * x_new[0] < 0.0:
            stats.n_large_jumps += 1
    comp = None
    if component_of is not None:
        comp = component_of(x_new)
        stats.component_occupancy[comp] = stats.component_occupancy.get(comp, 0) + 1
        if comp_prev is not None and comp != comp_prev:
            key = (comp_prev, comp)
            stats.component_transitions[key] = stats.component_transitions.get(key, 0) + 1
    return comp


def _run_chain_python(cm, cfg, x, p, rngs, stats, sinks, record_every, component_of):
    comp = component_of(x) if component_of is not None else None
    for it in range(cfg.n_iterations):
        x_prev = x
        try:
            if cfg.algorithm == "mala":
                x, rec = mala_iteration(cm, cfg, x, rngs, iteration=it)
            else:
                x, p, rec = hmc_iteration(cm, cfg, x, p, rngs, iteration=it)
        except ManifoldMCMCError as exc:
            raise ChainAbort(it, str(exc)) from exc
        comp = _accumulate(stats, rec, x_prev, x, component_of, comp)
        if (it + 1) % record_every == 0:
            for sink in sinks:
                sink(rec)
    return x, p
