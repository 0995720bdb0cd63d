"""Command-line front end: ``dtncache {optimize,sweep,fig1,duration}``.

Configuration is a JSON file whose keys are merged over the defaults below;
``--paper-scale`` then switches to N=10000, K=100, 10000 users, and the
remaining flags override both. Exit codes: 0 success, 1 usage or
configuration error, 2 numerical or simulation failure.

Set ``DTNCACHE_LOG`` (e.g. ``INFO``) for progress logging on stderr.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys

import numpy as np

from . import duration as dur
from . import simulator as sim
from .errors import ConfigurationError, InvalidParameterError, NumericalFailureError
from .optimizer import (
    NetworkParams,
    analytic_miss_rate_selective,
    optimal_allocation,
    write_allocation_csv,
)
from .popularity import from_config

log = logging.getLogger("dtncache")

DEFAULTS = {
    "distribution": {"type": "zipf", "n": 1000, "alpha": 1.0},
    "network": {
        "cache_capacity": 10,
        "n_users": 10_000,
        "lambda_user": 5.0,
        "lambda_ap": 0.0,
        "patience": 1.0,
    },
    "schemes": list(sim.SCHEMES),
    "lambda_t_grid": [float(x) for x in range(11)],
    "seed": 0,
    "n_requests": 100_000,
    "tol": 1e-9,
    "duration": None,
    "out": "-",
}

PAPER_SCALE = {
    "distribution": {"type": "zipf", "n": 10_000, "alpha": 1.0},
    "network": {"cache_capacity": 100, "n_users": 10_000},
}

DURATION_DEFAULTS = {"method": "cf_inversion", "n_samples": 1_000_000, "tol": 1e-4}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            # A new distribution type replaces the old block instead of mixing keys.
            if key == "distribution" and value.get("type", out[key].get("type")) != out[key].get("type"):
                out[key] = copy.deepcopy(value)
            else:
                out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None, paper_scale=False, seed=None, out=None) -> dict:
    """Defaults, then the file at ``path``, then ``--paper-scale``, then flags."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        if not isinstance(user, dict):
            raise UsageError("config root must be a JSON object")
        cfg = _merge(cfg, user)
    if paper_scale:
        cfg = _merge(cfg, PAPER_SCALE)
    if seed is not None:
        cfg["seed"] = seed
    if out is not None:
        cfg["out"] = out
    return cfg


def build_model(cfg: dict):
    """Distribution and network parameters described by ``cfg``."""
    dist = from_config(cfg["distribution"])
    net = dict(cfg["network"])
    unknown = set(net) - {"cache_capacity", "n_users", "lambda_user", "lambda_ap", "patience"}
    if unknown:
        raise UsageError(f"unknown network keys: {sorted(unknown)}")
    params = NetworkParams(n_files=dist.n_files, **net)
    return dist, params


def _grid(cfg):
    grid = [float(x) for x in cfg["lambda_t_grid"]]
    if not grid:
        raise UsageError("lambda_t_grid must be nonempty")
    if any(g < 0 for g in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise UsageError("lambda_t_grid must be nonnegative and strictly increasing")
    return grid


def _say(msg):
    print(msg, file=sys.stderr)


def cmd_optimize(cfg):
    dist, params = build_model(cfg)
    alloc, cert = optimal_allocation(dist, params, tol=float(cfg["tol"]))
    write_allocation_csv(cfg["out"], dist, {"optimal": alloc})
    _say(f"lambda_t={params.lambda_t:.12g} eta={cert.eta:.12g} N1={cert.n1} N2={cert.n2} "
         f"sum_q={alloc.total:.12g} analytic_miss={analytic_miss_rate_selective(dist, alloc, params):.12g}")


def cmd_sweep(cfg):
    dist, params = build_model(cfg)
    base = sim.SimConfig(params, dist, None, int(cfg["seed"]), int(cfg["n_requests"]))
    rows = sim.sweep_lambda_t(list(cfg["schemes"]), _grid(cfg), base)
    sim.write_sweep_csv(cfg["out"], rows)


def cmd_fig1(cfg):
    dist, params = build_model(cfg)
    alloc, _ = optimal_allocation(dist, params, tol=float(cfg["tol"]))
    rng = np.random.default_rng(sim.derive_seed(int(cfg["seed"]), "fig1"))
    pop = sim.fill_caches_selective(alloc, params, rng)
    empirical = sim.empirical_allocation(pop)
    sim.write_fig1_csv(cfg["out"], alloc.q, empirical)
    k = params.cache_capacity
    _say(f"lambda_t={params.lambda_t:.12g} users={pop.n_users} "
         f"tv_distance={sim.total_variation(empirical / k, alloc.q / k):.12g}")


def cmd_duration(cfg):
    block = cfg.get("duration")
    if not block:
        raise UsageError("the duration command needs a 'duration' block with pareto_alpha and t0")
    block = {**DURATION_DEFAULTS, **block}
    missing = {"pareto_alpha", "t0"} - set(block)
    if missing:
        raise UsageError(f"duration block missing {sorted(missing)}")
    dist, params = build_model(cfg)
    alloc, _ = optimal_allocation(dist, params, tol=float(cfg["tol"]))
    dp = dur.DurationParams(float(block["pareto_alpha"]), float(block["t0"]), params, alloc)
    result = dur.duration_aware_miss_rate(
        dp,
        dist,
        block["method"],
        n_samples=int(block["n_samples"]),
        seed=sim.derive_seed(int(cfg["seed"]), "duration"),
        tol=float(block["tol"]),
    )
    dur.write_duration_csv(cfg["out"], dist, dp, result)
    _say(f"method={result.method} t0={dp.t0:.12g} miss_rate={result.value:.12g} stderr={result.stderr:.12g}")


COMMANDS = {"optimize": cmd_optimize, "sweep": cmd_sweep, "fig1": cmd_fig1, "duration": cmd_duration}


def make_parser():
    parser = _Parser(prog="dtncache", description="Cooperative caching in delay-tolerant networks.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", metavar="PATH", help="JSON experiment configuration")
    parser.add_argument("--seed", type=int, help="master random seed")
    parser.add_argument("--out", metavar="PATH", help="output CSV path ('-' for stdout)")
    parser.add_argument("--paper-scale", action="store_true", help="N=10000, K=100, 10000 users")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("DTNCACHE_LOG", "WARNING").upper(),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    args = make_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.paper_scale, args.seed, args.out)
        COMMANDS[args.command](cfg)
    except (UsageError, InvalidParameterError, KeyError, TypeError) as exc:
        _say(f"dtncache: error: {exc}")
        return 1
    except (NumericalFailureError, ConfigurationError) as exc:
        _say(f"dtncache: failure: {exc}")
        return 2
    except BrokenPipeError:
        # Reader closed stdout early (e.g. `| head`); silence the flush at exit.
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
