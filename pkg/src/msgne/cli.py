"""Command-line experiment runner.

Examples
--------
::

    msgne --generator matching_pennies --report mp.json
    msgne --generator dsm --param N=5 --param T=8 --trace dsm.csv
    msgne --generator cournot --algorithm distributed --graph ring
    msgne --generator cournot --compare bforb forb_alternative
"""

import argparse
import json
import os
import sys

import numpy as np

from .errors import ConfigurationError
from .game_model import compile
from .gamefile import load_game
from .instances import GENERATORS
from .network import load_graph, make_graph
from .operators import ALTERNATIVE, DISTRIBUTED, SEMI_DECENTRALIZED, build_problem, step_size_bound
from .solvers import CONVERGED, DIVERGED, MAX_ITERS, SolveConfig, run_algorithm1, run_algorithm2, run_alternative
from .verify import kkt_residual, round_to_pure

ALGORITHMS = ("bforb", "forb_alternative", "distributed")
VARIANTS = {"bforb": SEMI_DECENTRALIZED, "forb_alternative": ALTERNATIVE, "distributed": DISTRIBUTED}
EXIT_CODES = {CONVERGED: 0, MAX_ITERS: 2, DIVERGED: 3}
CONFIG_ERROR = 4


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which would read as "max_iters"
    def error(self, message):
        raise ConfigurationError(message)


def build_parser():
    p = _Parser(prog="msgne", description="Mixed-strategy GNE of mixed-integer games by B-FoRB.",
                allow_abbrev=False)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--game", help="game file (JSON)")
    src.add_argument("--generator", choices=sorted(GENERATORS), help="builtin instance generator")
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="generator parameter (repeatable); values are parsed as JSON when possible")
    p.add_argument("--algorithm", choices=ALGORITHMS, default="bforb")
    p.add_argument("--graph", help="graph file (JSON) or generator name (ring, path, star, complete, erdos_renyi)")
    p.add_argument("--gamma", type=float, help="agent step size")
    p.add_argument("--zeta", type=float, help="coordinator step size")
    p.add_argument("--eps", type=float, default=1e-5, help="stopping tolerance on |omega_{k+1} - omega_k|_inf")
    p.add_argument("--max-iters", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", help="CSV trace path")
    p.add_argument("--report", help="JSON report path (stdout when omitted)")
    p.add_argument("--compare", nargs="*", choices=ALGORITHMS, metavar="ALGORITHM",
                   help="solve with each listed algorithm and compare")
    return p


def _param_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_params(items):
    out = {}
    for item in items:
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise ConfigurationError(f"--param expects KEY=VALUE, got {item!r}")
        out[key] = _param_value(val)
    return out


def load_instance(args):
    """Game of the parsed arguments."""
    params = parse_params(args.param)
    if args.game:
        if params:
            raise ConfigurationError("--param applies to generators only")
        try:
            return load_game(args.game)
        except OSError as exc:
            raise ConfigurationError(f"cannot read game file: {exc}") from None
    if not args.generator:
        raise ConfigurationError("one of --game or --generator is required")
    try:
        return GENERATORS[args.generator](seed=args.seed, **params)
    except TypeError as exc:
        raise ConfigurationError(f"bad generator parameters: {exc}") from None


def load_comm_graph(spec, n_agents, seed):
    if spec is None:
        raise ConfigurationError("the distributed algorithm needs --graph")
    if os.path.exists(spec):
        try:
            return load_graph(spec)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigurationError(f"cannot read graph file: {exc}") from None
    return make_graph(spec, n_agents, seed)


def _clean(v):
    # JSON has no inf/nan
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if np.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    return v


def dumps(obj):
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def config_echo(args):
    return {
        "game": args.game, "generator": args.generator, "params": parse_params(args.param),
        "algorithm": args.algorithm, "graph": args.graph, "gamma": args.gamma, "zeta": args.zeta,
        "eps": args.eps, "max_iters": args.max_iters, "seed": args.seed,
        "compare": args.compare,
    }


def solve(ms, algorithm, cfg, graph=None):
    """Run one algorithm; returns ``(report, problem)``."""
    if algorithm == "bforb":
        rep = run_algorithm1(ms, cfg)
    elif algorithm == "forb_alternative":
        rep = run_alternative(ms, cfg)
    elif algorithm == "distributed":
        rep = run_algorithm2(ms, graph, cfg)
    else:
        raise ConfigurationError(f"unknown algorithm {algorithm!r}")
    problem = build_problem(ms, VARIANTS[algorithm], graph=graph, lipschitz=rep.lipschitz, seed=cfg.seed)
    return rep, problem


def certificate(problem, rep):
    return kkt_residual(problem, rep.spec, rep.gamma, rep.omega)


def primal(rep):
    it = rep.final_iterate
    return np.concatenate([np.zeros(0)] + list(it.x) + list(it.y))


def solution_fields(ms, rep):
    it = rep.final_iterate
    x = np.concatenate([np.zeros(0)] + list(it.x))
    return {
        "final_strategies": [v.tolist() for v in it.x],
        "final_continuous": [v.tolist() for v in it.y],
        "rounded_actions": [a.tolist() for a in round_to_pure(ms, x)],
    }


def _config(args, **over):
    kw = dict(gamma=args.gamma, zeta=args.zeta, epsilon=args.eps, max_iters=args.max_iters, seed=args.seed)
    kw.update(over)
    if kw["epsilon"] is None or not kw["epsilon"] > 0:
        raise ConfigurationError("--eps must be positive")
    return SolveConfig(**kw)


def run(args):
    """Single solve. Returns ``(exit_code, report_dict)``."""
    game = load_instance(args)
    ms = compile(game)
    graph = None
    if args.algorithm == "distributed":
        graph = load_comm_graph(args.graph, ms.n_agents, args.seed)
    cfg = _config(args, regularizer="euclidean" if args.algorithm == "forb_alternative" else "entropy")
    rep, problem = solve(ms, args.algorithm, cfg, graph)
    if args.trace:
        rep.write_trace(args.trace)
    out = {
        "status": rep.status,
        "iterations": rep.iterations,
        "certificate": certificate(problem, rep).to_dict(),
        "seed": args.seed,
        "config_echo": config_echo(args),
    }
    out.update(solution_fields(ms, rep))
    return EXIT_CODES[rep.status], out


def _trace_path(path, algorithm):
    root, ext = os.path.splitext(path)
    return f"{root}_{algorithm}{ext or '.csv'}"


def compare(args):
    """Solve once per listed algorithm with a shared step size.

    The default step is ``0.9`` times the smallest admissible bound over
    the listed algorithms, so iteration counts are comparable.
    """
    algs = list(dict.fromkeys(args.compare or []))
    if not algs:
        raise ConfigurationError("--compare needs at least one algorithm")
    game = load_instance(args)
    ms = compile(game)
    graph = None
    if "distributed" in algs:
        graph = load_comm_graph(args.graph, ms.n_agents, args.seed)
    ells = {a: build_problem(ms, VARIANTS[a], graph=graph, seed=args.seed).lipschitz for a in algs}
    gamma = args.gamma
    if gamma is None:
        gamma = 0.9 * min(step_size_bound(ell) for ell in ells.values())
    runs, prim = {}, {}
    codes = []
    for a in algs:
        reg = "euclidean" if a == "forb_alternative" else "entropy"
        cfg = _config(args, gamma=gamma, lipschitz=ells[a], regularizer=reg)
        rep, problem = solve(ms, a, cfg, graph)
        if args.trace:
            rep.write_trace(_trace_path(args.trace, a))
        runs[a] = {"status": rep.status, "iterations": rep.iterations,
                   "certificate": certificate(problem, rep).to_dict(), "lipschitz": rep.lipschitz}
        runs[a].update(solution_fields(ms, rep))
        prim[a] = primal(rep)
        codes.append(EXIT_CODES[rep.status])
    dist = {}
    for i, a in enumerate(algs):
        for b in algs[i + 1:]:
            dist[f"{a}|{b}"] = float(np.max(np.abs(prim[a] - prim[b]), initial=0.0))
    out = {
        "algorithms": algs,
        "gamma": float(gamma),
        "runs": runs,
        "pairwise_primal_distance_inf": dist,
        "seed": args.seed,
        "config_echo": config_echo(args),
    }
    code = 3 if 3 in codes else (2 if 2 in codes else 0)
    return code, out


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.max_iters < 1:
            raise ConfigurationError("--max-iters must be at least 1")
        code, out = compare(args) if args.compare is not None else run(args)
    except ConfigurationError as exc:
        print(f"msgne: configuration error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    text = dumps(out)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text)
        print(f"status={out.get('status', 'compare')} exit={code}", file=sys.stderr)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
