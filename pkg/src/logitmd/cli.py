"""Command line experiment runner.

Every subcommand reads the shared network document (except ``regret``),
writes delimited results plus a JSON summary into ``--out`` and exits with
status 0 only when the engine's postconditions held.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import dynamics, reference
from .mirror_descent import (
    GradientOracle,
    NoiseModel,
    RegretLedger,
    SimplexProduct,
    anytime_bound,
    certified_bound,
    pooled_route_bound,
    regret,
    run_md,
)
from .network import Network, NetworkError, load_network
from .sampler import make_adversary, run_expert_game, run_route_agents

log = logging.getLogger("logitmd")

HP_SIGMA = 0.05
HP_SLACK = 0.03


def fixture_path(name: str) -> Path:
    """Path of a bundled fixture such as ``pigou.json``."""
    return Path(str(resources.files("logitmd") / "fixtures" / name))


def resolve_network(arg: str) -> Network:
    path = Path(arg)
    if not path.exists():
        bundled = fixture_path(path.name)
        if not bundled.exists():
            raise NetworkError(f"cannot read network file {arg!r}")
        path = bundled
    return load_network(path)


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_summary(path: Path, summary: dict, started: float) -> None:
    summary = dict(summary)
    summary["wall_time_s"] = time.perf_counter() - started
    summary["timestamp"] = datetime.now(timezone.utc).isoformat()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _x_header(P: int) -> list[str]:
    return [f"x_{i}" for i in range(P)]


def cmd_solve(args) -> bool:
    started = time.perf_counter()
    net = resolve_network(args.network)
    space = SimplexProduct.from_network(net)
    bounds = net.bounds
    if bounds.trivial:
        raise SystemExit("every OD pair has a single route; nothing to solve")
    cert = reference.reference_equilibrium(net, h=args.grid)
    M = bounds.gradient_bound + args.noise
    noise = NoiseModel(delta=args.delta, sigma=args.noise) if (args.delta or args.noise) else None
    oracle = GradientOracle(lambda k, x: net.path_costs(x), bound=M, noise=noise)
    traj = run_md(oracle, space, args.iters, alpha=args.alpha, seed=args.seed, loss=lambda k, x: net.potential(x))
    alpha = traj.alpha

    ledger = RegretLedger()
    for value in traj.losses:
        ledger.record_value(value, cert.psi_star)
    ks = np.arange(1, args.iters + 1)
    running_avg = np.cumsum(traj.iterates, axis=0) / ks[:, None]
    running_regret = np.cumsum(traj.losses) / ks - cert.psi_star
    running_psi = net.potentials(running_avg)
    rows = []
    for k in ks:
        if k % args.every == 0 or k == args.iters:
            i = k - 1
            rows.append([k, alpha, traj.losses[i], running_psi[i], running_regret[i],
                         anytime_bound(int(k), alpha, M, space, args.delta), *traj.iterates[i]])
    write_csv(args.out / "solve_trajectory.csv",
              ["iter", "alpha", "loss", "potential", "regret", "bound", *_x_header(net.n_paths)], rows)

    gap = net.potential(traj.average) - cert.psi_star
    bound = anytime_bound(args.iters, alpha, M, space, args.delta)
    certified = certified_bound("product", args.iters, M, space, args.delta, HP_SIGMA)
    ok = gap <= bound + 1e-12 and traj.max_block_error <= 1e-9
    write_summary(args.out / "solve_summary.json", {
        "command": "solve",
        "network": args.network,
        "seed": args.seed,
        "iters": args.iters,
        "alpha": alpha,
        "final_average": traj.average,
        "psi_average": net.potential(traj.average),
        "psi_star": cert.psi_star,
        "reference_method": cert.method,
        "gap": gap,
        "regret": regret(ledger, space),
        "bound_at_alpha": bound,
        "certified_expectation_bound": certified.expectation,
        "certified_high_prob_bound": certified.high_prob,
        "pooled_route_bound_reported_only": pooled_route_bound(M, args.iters, space),
        "max_block_error": traj.max_block_error,
        "ok": ok,
    }, started)
    log.info("solve: gap=%.3g bound=%.3g", gap, bound)
    return ok


def _dynamics_rows(net, t, xs, psi_star, alpha):
    R2 = net.bounds.entropy_radius_sq
    for ti, x in zip(t, xs):
        psi = net.potential(x)
        avg_bound = R2 / (alpha * ti) if ti > 0 else None
        yield [ti, psi, psi - psi_star, avg_bound, *x]


def cmd_ode(args) -> bool:
    started = time.perf_counter()
    net = resolve_network(args.network)
    cert = reference.reference_equilibrium(net, h=args.grid)
    traj = dynamics.integrate_ode(net, net.feasible_uniform(), args.alpha, args.T, args.dt, args.method)
    keep = slice(None, None, args.every)
    write_csv(args.out / "ode_trajectory.csv",
              ["t", "psi", "psi_star_gap", "avg_bound", *_x_header(net.n_paths)],
              _dynamics_rows(net, traj.t[keep], traj.x[keep], cert.psi_star, args.alpha))
    increases = np.diff(traj.psi)
    avg_gaps = net.potentials(traj.time_average[1:]) - cert.psi_star
    avg_bounds = net.bounds.entropy_radius_sq / (args.alpha * traj.t[1:])
    monotone = bool(np.all(increases <= 1e-10))
    avg_ok = bool(np.all(avg_gaps <= avg_bounds))
    ok = monotone and avg_ok and traj.max_drift_rate <= 1e-8
    write_summary(args.out / "ode_summary.json", {
        "command": "ode",
        "network": args.network,
        "alpha": args.alpha,
        "T": args.T,
        "dt": args.dt,
        "method": args.method,
        "x_T": traj.x[-1],
        "time_average_T": traj.time_average[-1],
        "psi_star": cert.psi_star,
        "max_psi_increase": float(increases.max(initial=0.0)),
        "lyapunov_monotone": monotone,
        "time_average_bound_holds": avg_ok,
        "max_drift_rate": traj.max_drift_rate,
        "ok": ok,
    }, started)
    return ok


def cmd_markov(args) -> bool:
    started = time.perf_counter()
    net = resolve_network(args.network)
    cert = reference.reference_equilibrium(net, h=args.grid)
    seeds = [args.seed + i for i in range(args.seeds)]
    runs = [dynamics.markov_run(net, args.nbar, args.ntilde, args.alpha, args.T, s) for s in seeds]
    mean_x = np.mean([r.x for r in runs], axis=0)
    t = runs[0].t
    keep = slice(None, None, args.every)
    write_csv(args.out / "markov_trajectory.csv",
              ["t", "psi", "psi_star_gap", "avg_bound", *_x_header(net.n_paths)],
              _dynamics_rows(net, t[keep], mean_x[keep], cert.psi_star, args.alpha))
    feasible = all(net.is_feasible(x) for r in runs for x in r.x)
    write_summary(args.out / "markov_summary.json", {
        "command": "markov",
        "network": args.network,
        "nbar": args.nbar,
        "ntilde": args.ntilde,
        "alpha": args.alpha,
        "T": args.T,
        "seeds": seeds,
        "endpoints": [r.x[-1] for r in runs],
        "mean_endpoint": mean_x[-1],
        "psi_star": cert.psi_star,
        "always_feasible": feasible,
        "ok": feasible,
    }, started)
    return feasible


def cmd_regret(args) -> bool:
    started = time.perf_counter()
    seeds = [args.seed + i for i in range(args.seeds)]
    noise = NoiseModel(delta=args.delta) if args.delta > 0 else None
    res = run_expert_game(make_adversary(args.adversary), args.n, args.rounds, args.alpha, seeds, noise=noise)
    space = SimplexProduct.simplex(args.n)
    b = certified_bound("vertex", args.rounds, 1.0, space, args.delta, args.sigma)
    violated = res.regret > b.high_prob
    write_csv(args.out / "regret.csv",
              ["seed", "n", "N", "delta", "regret", "expectation_bound", "hp_bound", "violated"],
              ([s, args.n, args.rounds, args.delta, r, b.expectation, b.high_prob, v]
               for s, r, v in zip(seeds, res.regret, violated)))
    mean = float(res.regret.mean())
    se = float(res.regret.std(ddof=1) / math.sqrt(len(seeds))) if len(seeds) > 1 else 0.0
    freq = float(violated.mean())
    ok = mean <= b.expectation + 3 * se and freq <= args.sigma + HP_SLACK
    write_summary(args.out / "regret_summary.json", {
        "command": "regret",
        "adversary": args.adversary,
        "n": args.n,
        "N": args.rounds,
        "delta": args.delta,
        "alpha": res.alpha,
        "mean_regret": mean,
        "standard_error": se,
        "expectation_bound": b.expectation,
        "hp_bound": b.high_prob,
        "hp_sigma": args.sigma,
        "violation_frequency": freq,
        "ok": ok,
    }, started)
    return ok


def cmd_sample(args) -> bool:
    started = time.perf_counter()
    net = resolve_network(args.network)
    cert = reference.reference_equilibrium(net, h=args.grid)
    res = run_route_agents(net, args.agents, args.rounds, args.alpha, args.seed)
    keep = range(0, args.rounds, args.every)
    write_csv(args.out / "sample_flows.csv", ["iter", "potential", *_x_header(net.n_paths)],
              ([k + 1, net.potential(res.flows[k]), *res.flows[k]] for k in keep))
    M = net.bounds.path_cost_bound
    n_max = max(int(net.block_sizes.max()), 2)
    bound = certified_bound("vertex", args.rounds, M, SimplexProduct.simplex(n_max)).expectation
    mean_regret = float(res.agent_regret.mean())
    avg_flow = res.flows.mean(axis=0)
    ok = mean_regret <= bound
    write_summary(args.out / "sample_summary.json", {
        "command": "sample",
        "network": args.network,
        "agents_per_unit": args.agents,
        "rounds": args.rounds,
        "alpha": res.alpha,
        "seed": args.seed,
        "mean_agent_regret": mean_regret,
        "max_agent_regret": float(res.agent_regret.max()),
        "expectation_bound": bound,
        "average_flow": avg_flow,
        "psi_average_flow": net.potential(avg_flow),
        "psi_star": cert.psi_star,
        "ok": ok,
    }, started)
    return ok


def cmd_reference(args) -> bool:
    started = time.perf_counter()
    net = resolve_network(args.network)
    if args.method == "grid":
        cert = reference.grid_equilibrium(net, args.grid)
    elif args.method == "analytic":
        cert = reference.analytic_equilibrium(net)
    elif args.method == "md-refine":
        cert = reference.md_refine(net, args.md_iters, args.seed)
    else:
        cert = reference.reference_equilibrium(net, args.grid, args.md_iters, args.seed)
    with open(args.out / "certificate.json", "w", encoding="utf-8") as fh:
        json.dump(cert.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_summary(args.out / "reference_summary.json", {"command": "reference", "network": args.network,
                                                        **cert.to_dict()}, started)
    return net.is_feasible(cert.x_star)


def cmd_concentration(args) -> bool:
    started = time.perf_counter()
    net = resolve_network(args.network)
    cert = reference.reference_equilibrium(net, h=args.grid)
    seeds = [args.seed + i for i in range(args.seeds)]
    rows = dynamics.concentration_study(net, args.alpha, args.nbar, args.burnin, args.measure, seeds,
                                        cert.x_star, eps=args.eps, ntilde=args.ntilde)
    write_csv(args.out / "concentration.csv", ["Nbar", "seed", "mean_psi", "freq_near_eq"],
              ([r.nbar, r.seed, r.mean_psi, r.freq_near_eq] for r in rows))
    summary = dynamics.summarize_concentration(rows)
    freqs = [summary[n]["freq_near_eq"] for n in sorted(summary)]
    ok = all(b >= a for a, b in zip(freqs, freqs[1:]))
    write_summary(args.out / "concentration_summary.json", {
        "command": "concentration",
        "network": args.network,
        "alpha": args.alpha,
        "eps": args.eps,
        "per_nbar": {repr(k): v for k, v in summary.items()},
        "psi_star": cert.psi_star,
        "nondecreasing": ok,
        "ok": ok,
    }, started)
    return ok


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError("must be a positive number")
    return v


def _nonnegative_float(text: str) -> float:
    v = float(text)
    if not v >= 0 or not math.isfinite(v):
        raise argparse.ArgumentTypeError("must be a nonnegative number")
    return v


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="logitmd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, network=True, seed=True):
        if network:
            p.add_argument("network", help="network JSON file (bundled fixtures: pigou.json, braess.json)")
            p.add_argument("--grid", type=_positive_float, default=0.01, help="reference grid resolution h")
        if seed:
            p.add_argument("--seed", type=_seed, required=True)
        p.add_argument("--out", type=Path, default=Path("."))

    p = sub.add_parser("solve", help="mirror descent route-flow iteration")
    common(p)
    p.add_argument("--iters", type=_positive_int, required=True)
    p.add_argument("--alpha", type=_positive_float, default=None)
    p.add_argument("--delta", type=_nonnegative_float, default=0.0, help="oracle bias bound")
    p.add_argument("--noise", type=_nonnegative_float, default=0.0, help="zero-mean +-noise amplitude")
    p.add_argument("--every", type=_positive_int, default=1, help="write every k-th iterate")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("ode", help="integrate the imitative logit ODE")
    common(p, seed=False)
    p.add_argument("--alpha", type=_positive_float, default=1.0)
    p.add_argument("--T", type=_positive_float, required=True)
    p.add_argument("--dt", type=_positive_float, default=1e-3)
    p.add_argument("--method", choices=["rk4", "euler"], default="rk4")
    p.add_argument("--every", type=_positive_int, default=1)
    p.set_defaults(func=cmd_ode)

    p = sub.add_parser("markov", help="finite-population revision process")
    common(p)
    p.add_argument("--nbar", type=_positive_float, required=True)
    p.add_argument("--ntilde", type=_positive_float, required=True)
    p.add_argument("--alpha", type=_positive_float, default=1.0)
    p.add_argument("--T", type=_positive_float, required=True)
    p.add_argument("--seeds", type=_positive_int, default=1, help="number of consecutive seeds")
    p.add_argument("--every", type=_positive_int, default=1)
    p.set_defaults(func=cmd_markov)

    p = sub.add_parser("regret", help="vertex-sampling regret benchmark")
    common(p, network=False, seed=False)
    p.add_argument("--seed", type=_seed, default=0, help="first seed of the sweep")
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--rounds", type=_positive_int, required=True)
    p.add_argument("--seeds", type=_positive_int, default=100)
    p.add_argument("--adversary", choices=["oblivious", "leader", "iid"], default="leader")
    p.add_argument("--delta", type=_nonnegative_float, default=0.0)
    p.add_argument("--sigma", type=_positive_float, default=HP_SIGMA, help="failure probability of the hp bound")
    p.add_argument("--alpha", type=_positive_float, default=None)
    p.set_defaults(func=cmd_regret)

    p = sub.add_parser("sample", help="route-sampling users on a network")
    common(p)
    p.add_argument("--agents", type=_positive_int, default=1000, help="users per unit demand")
    p.add_argument("--rounds", type=_positive_int, required=True)
    p.add_argument("--alpha", type=_positive_float, default=None)
    p.add_argument("--every", type=_positive_int, default=1)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("reference", help="equilibrium certificate")
    common(p, seed=False)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--method", choices=["auto", "grid", "analytic", "md-refine"], default="auto")
    p.add_argument("--md-iters", type=_positive_int, default=100_000)
    p.set_defaults(func=cmd_reference)

    p = sub.add_parser("concentration", help="long-run concentration versus population size")
    common(p)
    p.add_argument("--alpha", type=_positive_float, default=1.0)
    p.add_argument("--nbar", type=_positive_float, nargs="+", default=[10.0, 100.0, 1000.0])
    p.add_argument("--ntilde", type=_positive_float, default=10.0)
    p.add_argument("--burnin", type=_positive_float, default=200.0)
    p.add_argument("--measure", type=_positive_float, default=50.0)
    p.add_argument("--seeds", type=_positive_int, default=20)
    p.add_argument("--eps", type=_positive_float, default=0.1)
    p.set_defaults(func=cmd_concentration)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    args.out.mkdir(parents=True, exist_ok=True)
    try:
        ok = args.func(args)
    except (NetworkError, ValueError, RuntimeError) as exc:
        print(f"logitmd {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
