"""Run configuration files: strict schema, loading, echoing.

The file format is JSON with a fixed nested layout; unknown keys are
rejected so that a config says exactly what the run does, and the full
configuration (defaults materialized) is echoed into the output statistics
for reproducibility.
"""

import json
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError, ManifoldMCMCError
from .geometry import MassMatrix
from .problems import PROBLEM_NAMES, builtin_problem
from .rootfind import SOLVER_KINDS, SolverSpec
from .sampler import OmegaPolicy, SamplerConfig

_REQUIRED = object()


@dataclass(frozen=True)
class RunConfig:
    problem: str
    problem_params: dict
    algorithm: str
    tau: float
    beta: float
    n_iterations: int
    seed: int
    alpha: float = 0.0
    mass: Optional[tuple] = None
    solver: SolverSpec = field(default_factory=lambda: SolverSpec("newton_single"))
    omega_kind: str = "uniform"
    omega_rank_table: Optional[dict] = None
    tol_constraint: float = 1e-8
    reversibility_tol: float = 1e-6
    scheme_label: str = ""
    n_chains: int = 1
    output_dir: str = "out"
    record_every: int = 100

    def to_dict(self):
        """Full configuration with defaults materialized; JSON-ready."""
        omega = {"kind": self.omega_kind}
        if self.omega_kind == "ranked":
            table = self.omega_rank_table
            if table is None:
                table = OmegaPolicy(kind="ranked").rank_table
            omega["rank_table"] = {str(n): list(row) for n, row in sorted(table.items())}
        else:
            omega["rank_table"] = None
        return {
            "problem": self.problem,
            "problem_params": dict(self.problem_params),
            "sampler": {
                "algorithm": self.algorithm,
                "tau": self.tau,
                "beta": self.beta,
                "alpha": self.alpha,
                "mass": list(self.mass) if self.mass is not None else None,
                "solver": {
                    "kind": self.solver.kind,
                    "max_iter": self.solver.max_iter,
                    "newton_tol": self.solver.newton_tol,
                    "n_starts": self.solver.n_starts,
                    "start_scale": self.solver.start_scale,
                    "period": self.solver.period,
                },
                "omega": omega,
                "tol_constraint": self.tol_constraint,
                "reversibility_tol": self.reversibility_tol,
                "n_iterations": self.n_iterations,
                "seed": self.seed,
            },
            "scheme_label": self.scheme_label,
            "n_chains": self.n_chains,
            "output_dir": self.output_dir,
            "record_every": self.record_every,
        }


def _take(obj, key, path, kind, default=_REQUIRED):
    if key not in obj:
        if default is _REQUIRED:
            raise ConfigError(f"{path}{key}", "required key is missing")
        return default
    val = obj.pop(key)
    if kind == "number":
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise ConfigError(f"{path}{key}", "must be a number")
        return float(val)
    if kind == "int":
        if not isinstance(val, int) or isinstance(val, bool):
            raise ConfigError(f"{path}{key}", "must be an integer")
        return int(val)
    if kind == "str":
        if not isinstance(val, str):
            raise ConfigError(f"{path}{key}", "must be a string")
        return val
    if kind == "object":
        if val is None:
            return {}
        if not isinstance(val, dict):
            raise ConfigError(f"{path}{key}", "must be an object")
        return val
    raise AssertionError(kind)


def _reject_unknown(obj, path):
    if obj:
        key = sorted(obj.keys())[0]
        raise ConfigError(f"{path}{key}", "unknown key")


def config_from_dict(data):
    """Parse a configuration mapping, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    data = dict(data)
    problem = _take(data, "problem", "", "str")
    if problem not in PROBLEM_NAMES:
        raise ConfigError("problem", f"must be one of {list(PROBLEM_NAMES)}")
    problem_params = _take(data, "problem_params", "", "object", default={})
    sampler = _take(data, "sampler", "", "object")
    scheme_label = _take(data, "scheme_label", "", "str", default="")
    n_chains = _take(data, "n_chains", "", "int", default=1)
    output_dir = _take(data, "output_dir", "", "str", default="out")
    record_every = _take(data, "record_every", "", "int", default=100)
    _reject_unknown(data, "")
    if n_chains < 1:
        raise ConfigError("n_chains", "must be >= 1")
    if record_every < 1:
        raise ConfigError("record_every", "must be >= 1")

    s = dict(sampler)
    algorithm = _take(s, "algorithm", "sampler.", "str")
    tau = _take(s, "tau", "sampler.", "number")
    beta = _take(s, "beta", "sampler.", "number")
    alpha = _take(s, "alpha", "sampler.", "number", default=0.0)
    mass_val = s.pop("mass", None)
    if mass_val is not None:
        if not isinstance(mass_val, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in mass_val
        ):
            raise ConfigError("sampler.mass", "must be null or an array of numbers")
        mass_val = tuple(float(v) for v in mass_val)
    solver_obj = _take(s, "solver", "sampler.", "object")
    omega_obj = _take(s, "omega", "sampler.", "object", default={})
    tol_constraint = _take(s, "tol_constraint", "sampler.", "number", default=1e-8)
    reversibility_tol = _take(s, "reversibility_tol", "sampler.", "number", default=1e-6)
    n_iterations = _take(s, "n_iterations", "sampler.", "int")
    seed = _take(s, "seed", "sampler.", "int")
    _reject_unknown(s, "sampler.")
    if algorithm not in ("mala", "hmc"):
        raise ConfigError("sampler.algorithm", "must be 'mala' or 'hmc'")
    if tau <= 0.0:
        raise ConfigError("sampler.tau", "must be positive")
    if beta <= 0.0:
        raise ConfigError("sampler.beta", "must be positive")
    if abs(alpha) >= 1.0:
        raise ConfigError("sampler.alpha", "|alpha| must be < 1")
    if tol_constraint <= 0.0:
        raise ConfigError("sampler.tol_constraint", "must be positive")
    if n_iterations < 0:
        raise ConfigError("sampler.n_iterations", "must be >= 0")
    if seed < 0:
        raise ConfigError("sampler.seed", "must be a non-negative integer")

    so = dict(solver_obj)
    kind = _take(so, "kind", "sampler.solver.", "str")
    if kind not in SOLVER_KINDS:
        raise ConfigError("sampler.solver.kind", f"must be one of {list(SOLVER_KINDS)}")
    max_iter = _take(so, "max_iter", "sampler.solver.", "int", default=10)
    newton_tol = _take(so, "newton_tol", "sampler.solver.", "number", default=1e-8)
    n_starts = _take(so, "n_starts", "sampler.solver.", "int", default=1)
    start_scale = so.pop("start_scale", None)
    if start_scale is not None:
        if not isinstance(start_scale, (int, float)) or isinstance(start_scale, bool):
            raise ConfigError("sampler.solver.start_scale", "must be null or a number")
        start_scale = float(start_scale)
    period = _take(so, "period", "sampler.solver.", "int", default=1)
    _reject_unknown(so, "sampler.solver.")
    try:
        solver = SolverSpec(
            kind=kind, max_iter=max_iter, newton_tol=newton_tol,
            n_starts=n_starts, start_scale=start_scale, period=period,
        )
    except ValueError as exc:
        raise ConfigError("sampler.solver", str(exc)) from None
    if reversibility_tol <= solver.newton_tol:
        raise ConfigError(
            "sampler.reversibility_tol", "must exceed the solver newton_tol"
        )

    oo = dict(omega_obj)
    omega_kind = _take(oo, "kind", "sampler.omega.", "str", default="uniform")
    table_val = oo.pop("rank_table", None)
    _reject_unknown(oo, "sampler.omega.")
    rank_table = None
    if table_val is not None:
        if not isinstance(table_val, dict):
            raise ConfigError("sampler.omega.rank_table", "must be an object")
        try:
            rank_table = {int(n): tuple(float(p) for p in row) for n, row in table_val.items()}
        except (TypeError, ValueError):
            raise ConfigError(
                "sampler.omega.rank_table", "rows must map counts to probability arrays"
            ) from None
    try:
        OmegaPolicy(kind=omega_kind, rank_table=rank_table if omega_kind == "ranked" else None)
    except ValueError as exc:
        raise ConfigError("sampler.omega", str(exc)) from None

    return RunConfig(
        problem=problem,
        problem_params=problem_params,
        algorithm=algorithm,
        tau=tau,
        beta=beta,
        alpha=alpha,
        mass=mass_val,
        solver=solver,
        omega_kind=omega_kind,
        omega_rank_table=rank_table,
        tol_constraint=tol_constraint,
        reversibility_tol=reversibility_tol,
        n_iterations=n_iterations,
        seed=seed,
        scheme_label=scheme_label,
        n_chains=n_chains,
        output_dir=output_dir,
        record_every=record_every,
    )


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    return config_from_dict(data)


def build(run_cfg):
    """Instantiate (problem, sampler config) from a parsed run configuration.

    All remaining semantic validation happens here so that ``validate`` can
    report problems before any computation.
    """
    try:
        problem = builtin_problem(run_cfg.problem, run_cfg.problem_params)
    except ManifoldMCMCError as exc:
        raise ConfigError("problem_params", str(exc)) from None
    except ValueError as exc:
        raise ConfigError("problem_params", str(exc)) from None

    mass = None
    if run_cfg.mass is not None:
        if len(run_cfg.mass) != problem.cm.ambient_dim:
            raise ConfigError(
                "sampler.mass",
                f"length {len(run_cfg.mass)} does not match dimension {problem.cm.ambient_dim}",
            )
        try:
            mass = MassMatrix(list(run_cfg.mass))
        except ValueError as exc:
            raise ConfigError("sampler.mass", str(exc)) from None

    if run_cfg.solver.kind == "poly_all_roots" and problem.cm.codim != 1:
        raise ConfigError(
            "sampler.solver.kind",
            "poly_all_roots needs a scalar constraint (codimension 1)",
        )

    try:
        omega = OmegaPolicy(
            kind=run_cfg.omega_kind,
            rank_table=run_cfg.omega_rank_table if run_cfg.omega_kind == "ranked" else None,
        )
        cfg = SamplerConfig(
            algorithm=run_cfg.algorithm,
            tau=run_cfg.tau,
            beta=run_cfg.beta,
            potential=problem.potential,
            proposal_potential=problem.proposal_potential,
            solver=run_cfg.solver,
            omega=omega,
            alpha=run_cfg.alpha,
            mass=mass,
            tol_constraint=run_cfg.tol_constraint,
            reversibility_tol=run_cfg.reversibility_tol,
            n_iterations=run_cfg.n_iterations,
            seed=run_cfg.seed,
        )
    except ValueError as exc:
        raise ConfigError("sampler", str(exc)) from None
    return problem, cfg
