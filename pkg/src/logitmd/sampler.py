"""Randomized play over simplex vertices driven by multiplicative weights.

A learner keeps a distribution ``p`` over ``n`` actions, plays one vertex
drawn from ``p`` each round and reweights ``p`` with the full loss vector.
Games are run for many seeds at once; every seed owns its own random streams,
so a replication does not depend on which batch it ran in.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .mirror_descent import NoiseModel, md_step_simplex, step_size

_CHUNK = 1024


class AdversaryError(RuntimeError):
    pass


def mwu_update(p, loss, alpha: float) -> np.ndarray:
    """Multiplicative-weights reweighting; the same map as :func:`md_step_simplex`."""
    return md_step_simplex(p, loss, alpha)


def sample_vertex(p, rng: np.random.Generator) -> int:
    p = np.asarray(p, dtype=float)
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), p.size - 1))


def _sample_rows(P: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw of one index per row of ``P`` given uniforms ``u``."""
    cdf = np.cumsum(P, axis=1)
    idx = (cdf <= (u * cdf[:, -1])[:, None]).sum(axis=1)
    return np.minimum(idx, P.shape[1] - 1)


class Adversary:
    """Loss generator. ``__call__`` sees the round, the learners' distributions
    and the previously realized plays, never the play of the current round."""

    name = "adversary"

    def reset(self, n: int, N: int, seeds: Sequence[int], bound: float) -> None:
        self.n, self.N, self.seeds, self.bound = n, N, list(seeds), bound

    def __call__(self, k: int, P: np.ndarray, past_plays: Optional[np.ndarray]) -> np.ndarray:
        raise NotImplementedError


class ObliviousAdversary(Adversary):
    """Fixed loss sequence, identical for every replication.

    Without a sequence, arm ``(k // phase) mod n`` costs ``bound`` with
    ``phase = max(1, N // (2n))``, so the best arm keeps moving.
    """

    name = "oblivious"

    def __init__(self, sequence: Optional[Callable[[int], np.ndarray]] = None):
        self.sequence = sequence

    def __call__(self, k, P, past_plays):
        if self.sequence is not None:
            row = np.asarray(self.sequence(k), dtype=float)
        else:
            phase = max(1, self.N // (2 * self.n))
            row = np.zeros(self.n)
            row[((k - 1) // phase) % self.n] = self.bound
        return np.broadcast_to(row, P.shape)


class LeaderAdversary(Adversary):
    """Charges the full loss to the currently most probable arm."""

    name = "leader"

    def __call__(self, k, P, past_plays):
        loss = np.zeros_like(P)
        loss[np.arange(P.shape[0]), np.argmax(P, axis=1)] = self.bound
        return loss


class IidAdversary(Adversary):
    """Independent uniform losses on [0, bound] from a per-seed stream."""

    name = "iid"

    def reset(self, n, N, seeds, bound):
        super().reset(n, N, seeds, bound)
        self._rngs = [np.random.default_rng([s, 1]) for s in self.seeds]
        self._buf = None
        self._pos = _CHUNK

    def __call__(self, k, P, past_plays):
        if self._pos == _CHUNK:
            self._buf = np.stack([r.random((_CHUNK, self.n)) for r in self._rngs], axis=1)
            self._pos = 0
        row = self._buf[self._pos] * self.bound
        self._pos += 1
        return row


ADVERSARIES = {"oblivious": ObliviousAdversary, "leader": LeaderAdversary, "iid": IidAdversary}


def make_adversary(name: str) -> Adversary:
    try:
        return ADVERSARIES[name]()
    except KeyError:
        raise ValueError(f"unknown adversary {name!r}; choose from {sorted(ADVERSARIES)}") from None


@dataclass
class ExpertGameResult:
    seeds: np.ndarray
    alpha: float
    vertices: np.ndarray          # (S, N) played arm per round
    realized: np.ndarray          # (S, N) true loss of the played arm
    expected: np.ndarray          # (S, N) <l^k, p^k>
    cumulative_loss: np.ndarray   # (S, n) summed true loss vectors
    regret_path: np.ndarray       # (S, N) realized average regret after k rounds

    @property
    def regret(self) -> np.ndarray:
        return self.regret_path[:, -1]

    @property
    def pseudo_regret(self) -> np.ndarray:
        """Regret of the expected play ``p^k`` rather than the sampled vertex."""
        N = self.expected.shape[1]
        return self.expected.sum(axis=1) / N - self.cumulative_loss.min(axis=1) / N


def run_expert_game(
    adversary: Adversary,
    n: int,
    N: int,
    alpha: Optional[float] = None,
    seeds: Sequence[int] = (0,),
    bound: float = 1.0,
    noise: Optional[NoiseModel] = None,
) -> ExpertGameResult:
    """Play ``N`` rounds against ``adversary`` once per seed.

    The learner updates with observed losses (true losses plus noise); regret
    is measured on the true losses against the best fixed arm in hindsight.
    """
    if n < 2 or N < 1:
        raise ValueError("need n >= 2 arms and N >= 1 rounds")
    if alpha is None:
        alpha = step_size("simplex", N, bound, n=n)
    seeds = np.asarray(list(seeds), dtype=np.int64)
    S = seeds.size
    adversary.reset(n, N, seeds.tolist(), bound)
    draws = np.stack([np.random.default_rng([int(s), 0]).random(N) for s in seeds])
    noise_rngs = [np.random.default_rng([int(s), 2]) for s in seeds] if noise is not None and noise.sigma > 0 else None
    bias = noise.bias_vector(n) if noise is not None and noise.delta > 0 else None

    cum_obs = np.zeros((S, n))
    cum_true = np.zeros((S, n))
    P = np.full((S, n), 1.0 / n)
    vertices = np.empty((S, N), dtype=np.int32)
    realized = np.empty((S, N))
    expected = np.empty((S, N))
    regret_path = np.empty((S, N))
    rows = np.arange(S)
    realized_sum = np.zeros(S)

    for k in range(1, N + 1):
        past = vertices[:, : k - 1] if k > 1 else None
        loss = np.asarray(adversary(k, P, past), dtype=float)
        if np.max(np.abs(loss)) > bound + 1e-12:
            raise AdversaryError(f"adversary loss exceeds the bound {bound}")
        i = _sample_rows(P, draws[:, k - 1])
        vertices[:, k - 1] = i
        realized[:, k - 1] = loss[rows, i]
        expected[:, k - 1] = np.einsum("sn,sn->s", loss, P)
        realized_sum += realized[:, k - 1]
        cum_true += loss
        regret_path[:, k - 1] = (realized_sum - cum_true.min(axis=1)) / k

        observed = loss
        if noise_rngs is not None:
            flips = np.stack([r.integers(0, 2, size=n) for r in noise_rngs]) * 2.0 - 1.0
            observed = np.clip(observed + noise.sigma * flips, -bound, bound)
        if bias is not None:
            observed = observed + bias
        cum_obs += observed
        logits = -alpha * cum_obs
        W = np.exp(logits - logits.max(axis=1, keepdims=True))
        P = W / W.sum(axis=1, keepdims=True)

    return ExpertGameResult(seeds, float(alpha), vertices, realized, expected, cum_true, regret_path)


@dataclass
class RouteAgentsResult:
    alpha: float
    flows: np.ndarray          # (N, P) realized mass-weighted path flows
    distributions: np.ndarray  # (N, P) shared per-OD route distributions, scaled by demand
    agent_regret: np.ndarray   # per-agent realized average regret after N rounds


def run_route_agents(net, agents_per_unit: int, N: int, alpha: Optional[float] = None, seed: int = 0) -> RouteAgentsResult:
    """Every user runs the vertex strategy over the routes of its OD pair.

    Each round all users sample a route, the resulting path costs are revealed
    to everyone (full information) and each user reweights. Losses for round k
    are computed only after all round-k plays.
    """
    bounds = net.bounds
    M = bounds.path_cost_bound
    rng = np.random.default_rng(seed)
    counts = np.maximum(1, np.rint(net.demands * agents_per_unit).astype(int))
    if alpha is None:
        n_max = max(int(net.block_sizes.max()), 2)
        alpha = step_size("simplex", N, M if M > 0 else 1.0, n=n_max)
    slices = net.block_slices
    mass = net.demands / counts
    cum = np.zeros(net.n_paths)
    flows = np.empty((N, net.n_paths))
    dists = np.empty((N, net.n_paths))
    agent_loss = [np.zeros(c) for c in counts]

    for k in range(N):
        x = np.zeros(net.n_paths)
        plays = []
        for j, sl in enumerate(slices):
            logits = -alpha * cum[sl]
            p = np.exp(logits - logits.max())
            p /= p.sum()
            dists[k, sl] = net.demands[j] * p
            u = rng.random(counts[j])
            choice = np.minimum(np.searchsorted(np.cumsum(p), u * p.sum(), side="right"), p.size - 1)
            plays.append(choice)
            x[sl] = np.bincount(choice, minlength=p.size) * mass[j]
        flows[k] = x
        G = net.path_costs(x)
        for j, sl in enumerate(slices):
            agent_loss[j] += G[sl][plays[j]]
        cum += G

    best = [cum[sl].min() for sl in slices]
    regret = np.concatenate([(agent_loss[j] - best[j]) / N for j in range(len(slices))])
    return RouteAgentsResult(float(alpha), flows, dists, regret)
