"""Batch command-line front-end.

Subcommands:

* ``run``: execute the chains of a configuration file and write per-chain
  sample CSVs plus a merged ``stats.json``.
* ``validate``: schema-check a configuration without computing anything.
* ``reference-density``: print the exact angle densities of a problem as a
  CSV table for plotting.

Exit codes: 0 success, 2 configuration error, 3 chain abort.
"""

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import build, load_config
from .diagnostics import (
    hybrid_rates,
    summary_rates,
    torus_phi_reference_density,
    uniform_angle_density,
)
from .errors import ChainAbort, ConfigError, ManifoldMCMCError
from .sampler import run_chain

logger = logging.getLogger("manifold_mcmc.cli")

FULL_SCALE_ITERATIONS = 10_000_000


def _fmt(value):
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


class CsvSink:
    """Streams iteration records into an RFC-4180 CSV file."""

    def __init__(self, path, dim):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(
            ["iter"]
            + [f"x_{i + 1}" for i in range(dim)]
            + ["accepted", "n_forward", "n_backward", "jump_distance", "stage"]
        )

    def __call__(self, rec):
        self._writer.writerow(
            [rec.iteration]
            + [_fmt(float(v)) for v in rec.x]
            + [
                int(rec.accepted),
                rec.n_forward,
                rec.n_backward,
                _fmt(rec.jump_distance),
                rec.stage.name.lower(),
            ]
        )

    def close(self):
        self._fh.close()


def _hist_to_array(hist):
    if not hist:
        return []
    top = max(hist.keys())
    return [int(hist.get(i, 0)) for i in range(top + 1)]


def _write_stats(path, run_cfg, stats, seed):
    summary = summary_rates(stats) if stats.n_total > 0 else None
    occupancy = [int(stats.component_occupancy.get(i, 0)) for i in range(4)]
    transitions = [
        [int(stats.component_transitions.get((i, j), 0)) for j in range(4)]
        for i in range(4)
    ]
    payload = {
        "config": run_cfg.to_dict(),
        "seed": seed,
        "scheme_label": run_cfg.scheme_label,
        "n_chains": run_cfg.n_chains,
        "summary": summary,
        "hybrid_summary": hybrid_rates(stats),
        "counters": {
            "n_total": stats.n_total,
            "n_reversibility_invoked": stats.n_reversibility_invoked,
            "n_reversibility_passed": stats.n_reversibility_passed,
            "n_accepted_moves": stats.n_accepted_moves,
            "n_large_jumps": stats.n_large_jumps,
            "n_expensive": stats.n_expensive,
            "n_accepted_expensive": stats.n_accepted_expensive,
            "n_multiplier_mismatch": stats.n_multiplier_mismatch,
            "n_rank_fallback": stats.n_rank_fallback,
        },
        "forward_solution_hist": _hist_to_array(stats.n_forward_hist),
        "backward_solution_hist": _hist_to_array(stats.n_backward_hist),
        "component_occupancy": occupancy,
        "component_transitions": transitions,
        "wall_time_seconds": stats.wall_time_seconds,
        "version": __version__,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_run(args):
    run_cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed", "must be a non-negative integer")
        run_cfg = RunConfigSeedOverride(run_cfg, args.seed)
    if args.full:
        run_cfg = RunConfigIterOverride(run_cfg, FULL_SCALE_ITERATIONS)
    out_dir = Path(args.output) if args.output else Path(run_cfg.output_dir)
    problem, cfg = build(run_cfg)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one_chain(chain_index):
        sink = CsvSink(out_dir / f"samples_{chain_index}.csv", problem.cm.ambient_dim)
        try:
            result = run_chain(
                problem.cm,
                cfg,
                problem.x0,
                sinks=(sink,),
                record_every=run_cfg.record_every,
                chain_index=chain_index,
                component_of=problem.component_of,
            )
        finally:
            sink.close()
        logger.info(
            "chain %d finished: %d iterations in %.1fs",
            chain_index,
            result.stats.n_total,
            result.stats.wall_time_seconds,
        )
        return result.stats

    if run_cfg.n_chains == 1:
        all_stats = [one_chain(0)]
    else:
        with ThreadPoolExecutor(max_workers=run_cfg.n_chains) as pool:
            all_stats = list(pool.map(one_chain, range(run_cfg.n_chains)))
    merged = all_stats[0]
    for extra in all_stats[1:]:
        merged = merged.merge(extra)
    _write_stats(out_dir / "stats.json", run_cfg, merged, cfg.seed)
    logger.info("wrote %s", out_dir / "stats.json")
    return 0


class RunConfigSeedOverride:
    """Seed override preserving everything else (including the echo)."""

    def __init__(self, inner, seed):
        object.__setattr__(self, "_inner", inner)
        object.__setattr__(self, "_seed", seed)

    def __getattr__(self, name):
        if name == "seed":
            return self._seed
        return getattr(self._inner, name)

    def to_dict(self):
        data = self._inner.to_dict()
        data["sampler"]["seed"] = self._seed
        return data


class RunConfigIterOverride:
    """Iteration-count override used by ``--full``."""

    def __init__(self, inner, n_iterations):
        object.__setattr__(self, "_inner", inner)
        object.__setattr__(self, "_n", n_iterations)

    def __getattr__(self, name):
        if name == "n_iterations":
            return self._n
        return getattr(self._inner, name)

    def to_dict(self):
        data = self._inner.to_dict()
        data["sampler"]["n_iterations"] = self._n
        return data


def _cmd_validate(args):
    run_cfg = load_config(args.config)
    build(run_cfg)
    print(f"{args.config}: valid")
    return 0


def _parse_params(pairs):
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError("--param", f"expected KEY=VALUE, got {pair!r}")
        key, val = pair.split("=", 1)
        try:
            out[key] = float(val)
        except ValueError:
            out[key] = val
    return out


def _cmd_reference_density(args):
    params = _parse_params(args.param)
    if args.problem == "torus":
        for key in ("R", "r"):
            if key not in params:
                raise ConfigError("--param", f"torus needs {key}=<value>")
        R, r = params["R"], params["r"]
        if not 0.0 < r < R:
            raise ConfigError("--param", "need 0 < r < R")
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(["angle", "phi_density", "theta_density"])
        grid = np.linspace(0.0, 2.0 * np.pi, args.points, endpoint=False)
        for angle in grid:
            writer.writerow(
                [
                    _fmt(float(angle)),
                    _fmt(float(torus_phi_reference_density(angle, R, r))),
                    _fmt(float(uniform_angle_density(angle))),
                ]
            )
        return 0
    if args.problem == "circle":
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(["angle", "theta_density"])
        grid = np.linspace(0.0, 2.0 * np.pi, args.points, endpoint=False)
        for angle in grid:
            writer.writerow([_fmt(float(angle)), _fmt(float(uniform_angle_density(angle)))])
        return 0
    raise ConfigError("--problem", f"no reference density for {args.problem!r}")


def make_parser():
    parser = argparse.ArgumentParser(
        prog="manifold-mcmc",
        description="MCMC sampling on implicitly defined submanifolds",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the chains of a configuration file")
    p_run.add_argument("--config", required=True, help="path to a JSON run configuration")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--output", default=None, help="override the output directory")
    p_run.add_argument("--quiet", action="store_true", help="suppress progress logging")
    p_run.add_argument(
        "--full",
        action="store_true",
        help=f"raise n_iterations to {FULL_SCALE_ITERATIONS:,}",
    )
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="validate a configuration file")
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(func=_cmd_validate)

    p_ref = sub.add_parser(
        "reference-density", help="print exact angle densities as CSV"
    )
    p_ref.add_argument("--problem", required=True)
    p_ref.add_argument("--param", action="append", help="problem parameter KEY=VALUE")
    p_ref.add_argument("--points", type=int, default=360)
    p_ref.set_defaults(func=_cmd_reference_density)
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if getattr(args, "quiet", False) else logging.INFO,
        format="%(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except ChainAbort as exc:
        print(f"error: chain-abort: {exc}", file=sys.stderr)
        return 3
    except ManifoldMCMCError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
