"""Acceptance criteria, one test each. Every test records a PASS/FAIL line
that is printed in the terminal summary."""

import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_feasible
from logitmd.cli import main
from logitmd.dynamics import (
    PopulationState,
    concentration_study,
    integrate_ode,
    logit_choice,
    markov_run,
    markov_step,
    ode_rhs,
    summarize_concentration,
    time_average_bound,
)
from logitmd.mirror_descent import (
    GradientOracle,
    NoiseModel,
    SimplexProduct,
    certified_bound,
    cumulative_iterate,
    md_step_product,
    run_md,
)
from logitmd.reference import grid_equilibrium
from logitmd.sampler import make_adversary, run_expert_game

PSI_STAR = {"pigou": 0.5, "braess": 1.375}


def report(k, ok, detail):
    ACCEPTANCE_LINES.append(f"CRITERION {k}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def l1(a, b):
    return float(np.abs(np.asarray(a) - np.asarray(b)).sum())


def network_oracle(net):
    return GradientOracle(lambda k, x: net.path_costs(x), bound=net.bounds.gradient_bound)


@pytest.fixture(scope="module")
def ode_runs(pigou, braess):
    """T = 100, dt = 1e-3 rk4 runs from the uniform start, per fixture and alpha."""
    runs = {}
    for name, net in (("pigou", pigou), ("braess", braess)):
        for alpha in (0.5, 1.0, 2.0):
            runs[name, alpha] = integrate_ode(net, net.feasible_uniform(), alpha, 100.0, 1e-3)
    return runs


def test_criterion_1_pigou_md(tmp_path, pigou):
    started = time.perf_counter()
    code = main(["solve", "pigou.json", "--iters", "10000", "--seed", "1", "--every", "10000",
                 "--out", str(tmp_path)])
    runtime = time.perf_counter() - started
    s = json.loads((tmp_path / "solve_summary.json").read_text())
    bound = certified_bound("product", 10_000, pigou.bounds.gradient_bound, SimplexProduct.from_network(pigou))
    gap = s["psi_average"] - 0.5
    dist = l1(s["final_average"], [0.0, 1.0])
    ok = code == 0 and gap <= min(0.01, bound.expectation) and dist <= 0.05 and runtime < 1.0
    report(1, ok, f"gap={gap:.3g} (<= {min(0.01, bound.expectation):.3g}), l1 to (0,1)={dist:.4f} (<= 0.05), "
                  f"runtime={runtime:.2f}s (< 1)")


def test_criterion_2_cross_engine(braess):
    started = time.perf_counter()
    md = run_md(network_oracle(braess), SimplexProduct.from_network(braess), 100_000, record=False).average
    ode = integrate_ode(braess, braess.feasible_uniform(), 1.0, 100.0, 1e-3, record_every=100_000).x[-1]
    markov = np.mean([markov_run(braess, 10_000, 100, 1.0, 20.0, seed=s, record_every=2000).x[-1]
                      for s in range(20)], axis=0)
    grid = np.array(grid_equilibrium(braess, 0.01).x_star)
    runtime = time.perf_counter() - started
    points = {"md": md, "ode": ode, "markov": markov, "grid": grid}
    names = list(points)
    worst = max(l1(points[a], points[b]) for i, a in enumerate(names) for b in names[i + 1:])
    ok = worst <= 0.05 and runtime < 60
    report(2, ok, f"max pairwise l1={worst:.4f} (<= 0.05), runtime={runtime:.1f}s (< 60)")


def test_criterion_3_regret_suite():
    cells, mean_fail, hp_fail, worst_freq = 0, [], [], 0.0
    sigma = 0.05
    for n in (2, 8, 32):
        for N in (100, 10_000):
            for adv in ("oblivious", "leader", "iid"):
                for delta in (0.0, 0.1):
                    noise = NoiseModel(delta=delta) if delta else None
                    res = run_expert_game(make_adversary(adv), n, N, seeds=range(100), noise=noise)
                    b = certified_bound("vertex", N, 1.0, SimplexProduct.simplex(n), delta, sigma)
                    r = res.regret
                    cell = (n, N, adv, delta)
                    if r.mean() > b.expectation + 3 * r.std(ddof=1) / 10:
                        mean_fail.append(cell)
                    freq = float(np.mean(r > b.high_prob))
                    worst_freq = max(worst_freq, freq)
                    if freq > 0.08:
                        hp_fail.append(cell)
                    cells += 1
    ok = cells == 36 and not mean_fail and not hp_fail
    report(3, ok, f"{cells} cells x 100 seeds; mean-bound failures={mean_fail}, hp failures={hp_fail}, "
                  f"worst violation rate={worst_freq:.2f} (<= 0.08)")


def test_criterion_4_gradient_identity(pigou, braess):
    rng = np.random.default_rng(4)
    worst = 0.0
    for net in (pigou, braess):
        for x in random_feasible(net, rng, 100):
            G = net.potential_gradient(x)
            fd = np.empty_like(x)
            for i in range(x.size):
                h = 1e-6 * max(1.0, abs(x[i]))
                e = np.zeros_like(x)
                e[i] = h
                fd[i] = (net.potential(x + e) - net.potential(x - e)) / (2 * h)
            worst = max(worst, float(np.linalg.norm(fd - G) / np.linalg.norm(G)))
    report(4, worst <= 1e-5, f"max relative error={worst:.2e} (<= 1e-5) over 200 points")


def test_criterion_5_conservation(ode_runs, braess):
    drift = max(r.max_drift_rate for r in ode_runs.values())
    md = run_md(network_oracle(braess), SimplexProduct.from_network(braess), 1_000_000, record=False)
    ok = drift <= 1e-8 and md.max_block_error <= 1e-12
    report(5, ok, f"ODE drift rate={drift:.2e} (<= 1e-8), MD block error over 1e6 steps="
                  f"{md.max_block_error:.2e} (<= 1e-12)")


def test_criterion_6_lyapunov(ode_runs, pigou, braess):
    worst = max(float(np.diff(r.psi).max()) for r in ode_runs.values())
    rng = np.random.default_rng(6)
    for net in (pigou, braess):
        for x0 in random_feasible(net, rng, 2):
            traj = integrate_ode(net, x0, 1.0, 20.0, 1e-3)
            worst = max(worst, float(np.diff(traj.psi).max()))
    report(6, worst <= 1e-10, f"max per-step increase of psi={worst:.2e} (<= 1e-10)")


def test_criterion_7_time_average_bound(ode_runs, pigou, braess):
    nets = {"pigou": pigou, "braess": braess}
    worst_ratio, failures = 0.0, []
    for (name, alpha), traj in ode_runs.items():
        net = nets[name]
        for T in (1.0, 10.0, 100.0):
            gap = net.potential(traj.average_at(T)) - PSI_STAR[name]
            bound = time_average_bound(net, alpha, T)
            worst_ratio = max(worst_ratio, gap / bound)
            if gap > bound:
                failures.append((name, alpha, T))
    report(7, not failures, f"max gap/bound={worst_ratio:.3f} (<= 1) over 18 cases; failures={failures}")


def test_criterion_8_markov_to_ode(pigou, braess):
    drift_ok = True
    for net, x0 in ((pigou, [0.5, 0.5]), (braess, [0.2, 0.3, 0.5])):
        state = PopulationState.from_flow(net, x0, 100, 4)
        x = state.flow(net)
        rng = np.random.default_rng(8)
        steps = np.array([markov_step(net, state.copy(), 1.0, rng) - x for _ in range(10_000)])
        se = steps.std(axis=0, ddof=1) / 100
        drift_ok &= bool(np.all(np.abs(steps.mean(axis=0) - ode_rhs(net, x, 1.0) / 4) <= 3 * se))
    ode = integrate_ode(pigou, [0.5, 0.5], 1.0, 5.0, 1e-3, record_every=5000).x[-1]
    mean = np.mean([markov_run(pigou, 10_000, 100, 1.0, 5.0, seed=s, record_every=500).x[-1] for s in range(20)],
                   axis=0)
    dist = l1(mean, ode)
    report(8, drift_ok and dist <= 0.05, f"one-step drift within 3 s.e.={drift_ok}, l1 at t=5={dist:.4f} (<= 0.05)")


def test_criterion_9_concentration(pigou):
    rows = concentration_study(pigou, 1.0, [10, 100, 1000], 200, 50, range(20), [0.0, 1.0], eps=0.1, ntilde=10)
    summary = summarize_concentration(rows)
    freqs = [summary[n]["freq_near_eq"] for n in sorted(summary)]
    ok = all(b >= a for a, b in zip(freqs, freqs[1:]))
    report(9, ok, "freq near x* for Nbar 10/100/1000 = " + " / ".join(f"{f:.4f}" for f in freqs))


def test_criterion_10_algebraic_invariants():
    rng = np.random.default_rng(10)
    space = SimplexProduct((2, 3, 4), (1.0, 2.0, 0.5))
    shift_err = 0.0
    for _ in range(2000):
        z = space.softmax(rng.normal(size=space.dim))
        g = rng.uniform(-1e3, 1e3, space.dim)
        alpha = rng.uniform(1e-3, 10)
        c = rng.uniform(-1e3, 1e3, 3)[space.owner]
        shift_err = max(shift_err, float(np.max(np.abs(md_step_product(z, g + c, alpha, space)
                                                       - md_step_product(z, g, alpha, space)))))
    x, cum, form_err = space.uniform(), np.zeros(space.dim), 0.0
    for _ in range(10_000):
        g = rng.uniform(-1, 1, space.dim)
        x = md_step_product(x, g, 0.05, space)
        cum += g
        form_err = max(form_err, float(np.max(np.abs(x - cumulative_iterate(cum, 0.05, space)))))
    zero_ok = True
    for _ in range(2000):
        xb = rng.dirichlet(np.ones(5))
        xb[rng.random(5) < 0.4] = 0.0
        if xb.sum() > 0:
            p = logit_choice(xb, rng.uniform(-100, 100, 5), rng.uniform(0.01, 10))
            zero_ok &= bool(np.all(p[xb == 0] == 0.0))
    ok = shift_err <= 1e-12 and form_err <= 1e-10 and zero_ok
    report(10, ok, f"shift invariance err={shift_err:.1e} (<= 1e-12), cumulative vs recursive err="
                   f"{form_err:.1e} (<= 1e-10), zero preservation exact={zero_ok}")
