"""Chain statistics and problem-specific observables.

`ChainStats` aggregates the counters a chain produces (success rates,
solution-count histograms, jump distances, component transitions); merging is
a plain componentwise sum so concurrent chains can be pooled.  The rest of
the module provides the reference observables of the built-in problems
(torus angles and their exact marginal density, sphere components) and a
chi-square goodness-of-fit helper.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _scipy_stats

from .errors import EmptyStats, InvalidSignPattern, OffManifold, SparseBins


@dataclass
class ChainStats:
    """Counters accumulated over one (or several merged) chains."""

    n_total: int = 0
    n_forward_hist: dict = field(default_factory=dict)
    n_backward_hist: dict = field(default_factory=dict)
    n_reversibility_invoked: int = 0
    n_reversibility_passed: int = 0
    n_accepted_moves: int = 0
    sum_jump_distance: float = 0.0
    n_large_jumps: int = 0
    component_occupancy: dict = field(default_factory=dict)
    component_transitions: dict = field(default_factory=dict)
    wall_time_seconds: float = 0.0
    # restricted to iterations where the expensive solver of a hybrid
    # schedule fired (equals the global counters when period == 1)
    n_expensive: int = 0
    n_accepted_expensive: int = 0
    sum_jump_expensive: float = 0.0
    # matched backward solution whose stored multiplier disagrees with the
    # closed-form value (position match is still authoritative)
    n_multiplier_mismatch: int = 0
    n_rank_fallback: int = 0

    def check_consistency(self):
        if not (
            self.n_reversibility_passed <= self.n_reversibility_invoked <= self.n_total
        ):
            raise ValueError("reversibility counters out of order")
        if self.n_accepted_moves > self.n_reversibility_passed:
            raise ValueError("more accepted moves than passed checks")
        return self

    def merge(self, other):
        """Componentwise sum; associative and commutative."""

        def _madd(a, b):
            out = dict(a)
            for key, val in b.items():
                out[key] = out.get(key, 0) + val
            return out

        return ChainStats(
            n_total=self.n_total + other.n_total,
            n_forward_hist=_madd(self.n_forward_hist, other.n_forward_hist),
            n_backward_hist=_madd(self.n_backward_hist, other.n_backward_hist),
            n_reversibility_invoked=self.n_reversibility_invoked + other.n_reversibility_invoked,
            n_reversibility_passed=self.n_reversibility_passed + other.n_reversibility_passed,
            n_accepted_moves=self.n_accepted_moves + other.n_accepted_moves,
            sum_jump_distance=self.sum_jump_distance + other.sum_jump_distance,
            n_large_jumps=self.n_large_jumps + other.n_large_jumps,
            component_occupancy=_madd(self.component_occupancy, other.component_occupancy),
            component_transitions=_madd(self.component_transitions, other.component_transitions),
            wall_time_seconds=self.wall_time_seconds + other.wall_time_seconds,
            n_expensive=self.n_expensive + other.n_expensive,
            n_accepted_expensive=self.n_accepted_expensive + other.n_accepted_expensive,
            sum_jump_expensive=self.sum_jump_expensive + other.sum_jump_expensive,
            n_multiplier_mismatch=self.n_multiplier_mismatch + other.n_multiplier_mismatch,
            n_rank_fallback=self.n_rank_fallback + other.n_rank_fallback,
        )


def summary_rates(stats):
    """Headline rates of a chain.

    ``fsr``: fraction of iterations with at least one forward solution.
    ``bsr``: fraction of invoked reversibility checks that passed (None when
    never invoked; 0/0 is meaningless and must not pollute comparisons).
    ``tar``: fraction of iterations that moved to a new state.
    ``mean_jump``: average jump distance over moves (None without moves).
    ``large_jump_rate``: sign changes of the first coordinate per iteration.
    ``ctf``: transitions between connected components per iteration.
    """
    if stats.n_total <= 0:
        raise EmptyStats("no iterations recorded")
    n = stats.n_total
    fsr = (n - stats.n_forward_hist.get(0, 0)) / n
    bsr = (
        stats.n_reversibility_passed / stats.n_reversibility_invoked
        if stats.n_reversibility_invoked > 0
        else None
    )
    tar = stats.n_accepted_moves / n
    mean_jump = (
        stats.sum_jump_distance / stats.n_accepted_moves
        if stats.n_accepted_moves > 0
        else None
    )
    large_jump_rate = stats.n_large_jumps / n
    ctf = sum(v for (i, j), v in stats.component_transitions.items() if i != j) / n
    return {
        "fsr": fsr,
        "bsr": bsr,
        "tar": tar,
        "mean_jump": mean_jump,
        "large_jump_rate": large_jump_rate,
        "ctf": ctf,
    }


def hybrid_rates(stats):
    """Rates restricted to iterations where the expensive solver fired."""
    if stats.n_expensive <= 0:
        return {"tar_expensive": None, "mean_jump_expensive": None}
    return {
        "tar_expensive": stats.n_accepted_expensive / stats.n_expensive,
        "mean_jump_expensive": (
            stats.sum_jump_expensive / stats.n_accepted_expensive
            if stats.n_accepted_expensive > 0
            else None
        ),
    }


@dataclass
class Histogram1D:
    lo: float
    hi: float
    bins: np.ndarray
    n_samples: int = 0

    @classmethod
    def empty(cls, lo, hi, n_bins):
        return cls(lo=float(lo), hi=float(hi), bins=np.zeros(n_bins, dtype=np.int64))

    @classmethod
    def from_samples(cls, values, lo, hi, n_bins):
        h = cls.empty(lo, hi, n_bins)
        h.add(values)
        return h

    def add(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            return self
        if np.any(values < self.lo) or np.any(values >= self.hi):
            raise ValueError("values outside [lo, hi) would break the count invariant")
        idx = np.floor(
            (values - self.lo) / (self.hi - self.lo) * self.bins.shape[0]
        ).astype(np.int64)
        np.add.at(self.bins, idx, 1)
        self.n_samples += int(values.size)
        return self

    @property
    def edges(self):
        return np.linspace(self.lo, self.hi, self.bins.shape[0] + 1)


# 16-point Gauss-Legendre nodes/weights on [-1, 1] for per-bin integration
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def chi_square_gof(hist, density):
    """Pearson chi-square of a histogram against a density on [lo, hi).

    Expected counts are the bin-integrated density (16-point Gauss-Legendre
    per bin) scaled by the sample count; degrees of freedom are bins - 1.
    """
    if hist.n_samples <= 0:
        raise EmptyStats("empty histogram")
    edges = hist.edges
    expected = np.empty(hist.bins.shape[0])
    for i in range(hist.bins.shape[0]):
        a, b = edges[i], edges[i + 1]
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        vals = np.array([density(mid + half * t) for t in _GL_NODES])
        expected[i] = half * float(vals @ _GL_WEIGHTS)
    expected *= hist.n_samples
    if np.any(expected < 5.0):
        raise SparseBins(
            f"minimum expected bin count {expected.min():.2f} is below 5"
        )
    statistic = float(np.sum((hist.bins - expected) ** 2 / expected))
    dof = hist.bins.shape[0] - 1
    p_value = float(_scipy_stats.chi2.sf(statistic, dof))
    return statistic, p_value


def torus_parametrization(phi, theta, R, r):
    """Embedding of torus angles into 3-space."""
    return np.array(
        [
            (R + r * np.cos(phi)) * np.cos(theta),
            (R + r * np.cos(phi)) * np.sin(theta),
            r * np.sin(phi),
        ]
    )


def torus_angles(x, R, r, tol=1e-6):
    """Angles (phi, theta) in [0, 2pi)^2 of a point on the torus.

    ``phi`` is the tube angle, ``theta`` the axial angle; raises
    `OffManifold` when the point is not on the torus within ``tol``.
    """
    x = np.asarray(x, dtype=np.float64)
    rho = np.sqrt(x[0] ** 2 + x[1] ** 2)
    residual = abs((R - rho) ** 2 + x[2] ** 2 - r * r)
    if residual > tol:
        raise OffManifold(f"torus residual {residual:.3e} exceeds {tol:.1e}")
    theta = np.arctan2(x[1], x[0]) % (2.0 * np.pi)
    phi = np.arctan2(x[2] / r, (rho - R) / r) % (2.0 * np.pi)
    return float(phi), float(theta)


def torus_phi_reference_density(phi, R, r):
    """Exact marginal density of the tube angle under the surface measure."""
    return (1.0 + (r / R) * np.cos(phi)) / (2.0 * np.pi)


def uniform_angle_density(_angle):
    """Marginal density of the axial angle (and any uniform angle)."""
    return 1.0 / (2.0 * np.pi)


#: Sign patterns of (x1, x2, x3) for the four connected components of the
#: sphere problem; any other pattern has a negative triple product and cannot
#: satisfy the product constraint.
_SPHERE_COMPONENTS = {
    (1, 1, 1): 0,
    (1, -1, -1): 1,
    (-1, 1, -1): 2,
    (-1, -1, 1): 3,
}


def sphere_component(x):
    """Connected-component id from the signs of the first three coordinates."""
    x = np.asarray(x, dtype=np.float64)
    pattern = tuple(1 if x[i] > 0 else -1 for i in range(3))
    try:
        return _SPHERE_COMPONENTS[pattern]
    except KeyError:
        raise InvalidSignPattern(
            f"sign pattern {pattern} impossible on the surface; corrupt state"
        ) from None
