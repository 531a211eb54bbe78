"""Imitative logit dynamics on path flows.

A revising user of OD pair ``j`` switches to route ``i`` with probability
proportional to ``x_i exp(-alpha G_i(x))``. The mean-field flow is

    dx_i/dt = d_j p_i(x) - x_i,

and the finite population version lets each of ``round(d_j * Nbar)`` users
revise with probability ``1/Ntilde`` per step. Routes with zero flow are never
adopted, so faces of the feasible set are invariant for both.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .network import Network


class IntegrationError(RuntimeError):
    pass


def logit_choice(x_block, G_block, alpha: float) -> np.ndarray:
    x = np.asarray(x_block, dtype=float)
    G = np.asarray(G_block, dtype=float)
    if np.any(x < 0) or not x.sum() > 0:
        raise ValueError("logit choice needs a nonnegative block with positive mass")
    # shift by the cheapest used route so used weights cannot all underflow
    used = x > 0
    w = np.zeros_like(x)
    w[used] = x[used] * np.exp(-alpha * (G[used] - G[used].min()))
    return w / w.sum()


def choice_probabilities(net: Network, x, alpha: float, G=None) -> np.ndarray:
    """``logit_choice`` applied to every OD block at once."""
    x = np.asarray(x, dtype=float)
    if G is None:
        G = net.path_costs(x)
    owner = net.path_block
    used = x > 0
    # used routes have a nonpositive exponent; the cap keeps unused ones at exactly 0
    if net.n_od == 1:
        w = x * np.exp(np.minimum(-alpha * (G - G[used].min()), 0.0))
        return w / w.sum()
    shift = np.minimum.reduceat(np.where(used, G, np.inf), net.block_starts)[owner]
    w = x * np.exp(np.minimum(-alpha * (G - shift), 0.0))
    return w / np.add.reduceat(w, net.block_starts)[owner]


def ode_rhs(net: Network, x, alpha: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return net.path_demands * choice_probabilities(net, x, alpha) - x


@dataclass
class OdeTrajectory:
    t: np.ndarray
    x: np.ndarray             # (K, P) states at the recorded times
    psi: np.ndarray           # potential at the recorded times
    time_average: np.ndarray  # (K, P) running (1/t) int_0^t x ds; row 0 is x0
    max_drift_rate: float     # largest |block sum - d_j| divided by elapsed time
    alpha: float

    def average_at(self, T: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.t - T)))
        if not np.isclose(self.t[i], T, rtol=0, atol=1e-9 * max(1.0, T)):
            raise ValueError(f"time {T} was not recorded")
        return self.time_average[i]


def integrate_ode(
    net: Network,
    x0,
    alpha: float,
    T: float,
    dt: float,
    method: str = "rk4",
    record_every: int = 1,
) -> OdeTrajectory:
    """Fixed-step integration with a trapezoidal running time average.

    Aborts with :class:`IntegrationError` if a step would leave the
    nonnegative orthant.
    """
    if not dt > 0 or T < dt:
        raise ValueError("need dt > 0 and T >= dt")
    if method not in ("rk4", "euler"):
        raise ValueError(f"unknown method {method!r}")
    x = np.array(x0, dtype=float)
    if not net.is_feasible(x):
        raise ValueError("initial state is not a feasible path flow")
    steps = int(round(T / dt))
    d = net.path_demands

    def rhs(y):
        return d * choice_probabilities(net, y, alpha) - y

    n_rec = steps // record_every + 1
    ts = np.empty(n_rec)
    xs = np.empty((n_rec, x.size))
    avgs = np.empty((n_rec, x.size))
    psis = np.empty(n_rec)
    ts[0], xs[0], avgs[0], psis[0] = 0.0, x, x, net.potential(x)
    integral = np.zeros_like(x)
    drift = 0.0
    r = 1

    for s in range(1, steps + 1):
        if method == "euler":
            nxt = x + dt * rhs(x)
        else:
            k1 = rhs(x)
            k2 = rhs(x + 0.5 * dt * k1)
            k3 = rhs(x + 0.5 * dt * k2)
            k4 = rhs(x + dt * k3)
            nxt = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if np.any(nxt < 0):
            raise IntegrationError(f"negative path flow at t={s * dt:.6g}; reduce dt (currently {dt})")
        integral += 0.5 * dt * (x + nxt)
        x = nxt
        t = s * dt
        if s % record_every == 0:
            drift = max(drift, float(np.max(np.abs(net.block_sums(x) - net.demands))) / t)
            ts[r], xs[r], avgs[r], psis[r] = t, x, integral / t, net.potential(x)
            r += 1

    return OdeTrajectory(ts[:r], xs[:r], psis[:r], avgs[:r], drift, float(alpha))


def lyapunov_series(net: Network, t, xs) -> tuple[np.ndarray, np.ndarray]:
    """Potential along a recorded trajectory."""
    return np.asarray(t, dtype=float), np.array([net.potential(x) for x in xs])


def time_average_bound(net: Network, alpha: float, T: float) -> float:
    """``(1/(alpha T)) sum_j d_j^2 ln n_j``."""
    return net.bounds.entropy_radius_sq / (alpha * T)


@dataclass
class PopulationState:
    """Route held by every user, grouped per OD pair."""

    agents: list          # per OD: int array of global path indices
    agent_mass: np.ndarray
    nbar: float
    ntilde: float

    @classmethod
    def from_flow(cls, net: Network, x, nbar: float, ntilde: float) -> "PopulationState":
        if nbar <= 0 or ntilde < 1:
            raise ValueError("need Nbar > 0 and Ntilde >= 1")
        x = np.asarray(x, dtype=float)
        counts = np.maximum(1, np.rint(net.demands * nbar).astype(int))
        agents = []
        for j, sl in enumerate(net.block_slices):
            share = x[sl] / x[sl].sum() * counts[j]
            per_path = np.floor(share).astype(int)
            # largest remainder rounding, ties to the lower path index
            short = counts[j] - per_path.sum()
            order = np.argsort(-(share - per_path), kind="stable")
            per_path[order[:short]] += 1
            agents.append(np.repeat(np.arange(sl.start, sl.stop), per_path))
        return cls(agents, net.demands / counts, float(nbar), float(ntilde))

    def flow(self, net: Network) -> np.ndarray:
        x = np.zeros(net.n_paths)
        for j, a in enumerate(self.agents):
            x += np.bincount(a, minlength=net.n_paths) * self.agent_mass[j]
        return x

    def copy(self) -> "PopulationState":
        return PopulationState([a.copy() for a in self.agents], self.agent_mass.copy(), self.nbar, self.ntilde)


def markov_step(net: Network, state: PopulationState, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Advance one revision step in place and return the new aggregate flow.

    Revision draws of all users use the frozen aggregate state of the step.
    """
    x = state.flow(net)
    p = choice_probabilities(net, x, alpha)
    q = 1.0 / state.ntilde
    for j, sl in enumerate(net.block_slices):
        a = state.agents[j]
        revise = np.flatnonzero(rng.random(a.size) < q) if q < 1 else np.arange(a.size)
        if revise.size:
            cdf = np.cumsum(p[sl])
            u = rng.random(revise.size) * cdf[-1]
            pick = np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)
            a[revise] = sl.start + pick
    return state.flow(net)


@dataclass
class MarkovTrajectory:
    t: np.ndarray
    x: np.ndarray
    seed: int


def markov_run(
    net: Network,
    nbar: float,
    ntilde: float,
    alpha: float,
    T: float,
    seed: int,
    x0=None,
    record_every: int = 1,
) -> MarkovTrajectory:
    """Simulate ``T * Ntilde`` revision steps of the finite population."""
    steps = int(round(T * ntilde))
    if steps < 1:
        raise ValueError("need T * Ntilde >= 1")
    rng = np.random.default_rng(seed)
    state = PopulationState.from_flow(net, net.feasible_uniform() if x0 is None else x0, nbar, ntilde)
    n_rec = steps // record_every + 1
    ts = np.empty(n_rec)
    xs = np.empty((n_rec, net.n_paths))
    ts[0], xs[0] = 0.0, state.flow(net)
    r = 1
    for s in range(1, steps + 1):
        x = markov_step(net, state, alpha, rng)
        if s % record_every == 0:
            ts[r], xs[r] = s / ntilde, x
            r += 1
    return MarkovTrajectory(ts[:r], xs[:r], seed)


@dataclass
class ConcentrationRow:
    nbar: float
    seed: int
    mean_psi: float
    freq_near_eq: float


def concentration_study(
    net: Network,
    alpha: float,
    nbars: Sequence[float],
    t_burnin: float,
    t_measure: float,
    seeds: Sequence[int],
    x_star,
    eps: float = 0.1,
    ntilde: float = 10.0,
) -> list[ConcentrationRow]:
    """Long-run statistics of the population process for growing Nbar.

    After ``t_burnin`` the aggregate state is sampled every step for
    ``t_measure`` time units; reported are the mean potential and the fraction
    of samples within l1 distance ``eps`` of ``x_star``.
    """
    if list(nbars) != sorted(nbars):
        raise ValueError("Nbar values must be increasing")
    x_star = np.asarray(x_star, dtype=float)
    burn_steps = int(round(t_burnin * ntilde))
    rows = []
    for nbar in nbars:
        for seed in seeds:
            traj = markov_run(net, nbar, ntilde, alpha, t_burnin + t_measure, seed)
            window = traj.x[burn_steps + 1 :]
            psi = np.array([net.potential(x) for x in window])
            near = np.abs(window - x_star).sum(axis=1) < eps
            rows.append(ConcentrationRow(float(nbar), int(seed), float(psi.mean()), float(near.mean())))
    return rows


def summarize_concentration(rows: Sequence[ConcentrationRow]) -> dict:
    """Per-Nbar means over seeds."""
    out = {}
    for nbar in sorted({r.nbar for r in rows}):
        sel = [r for r in rows if r.nbar == nbar]
        out[nbar] = {
            "mean_psi": float(np.mean([r.mean_psi for r in sel])),
            "freq_near_eq": float(np.mean([r.freq_near_eq for r in sel])),
        }
    return out
