"""Independent equilibrium oracles: closed form, exhaustive grid, long MD run."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from itertools import product

import numpy as np

from .mirror_descent import GradientOracle, SimplexProduct, run_md
from .network import Network

MAX_GRID_PATHS = 6
MAX_GRID_POINTS = 5_000_000
USED_ROUTE_SHARE = 1e-3


@dataclass
class EquilibriumCertificate:
    method: str
    x_star: list
    psi_star: float
    residual: float
    resolution_or_iters: float

    def to_dict(self) -> dict:
        return asdict(self)


def wardrop_residual(net: Network, x, share: float = USED_ROUTE_SHARE) -> float:
    """Largest gap between a used route's cost and the cheapest route of its pair.

    A route counts as used when its flow exceeds ``share * d_j``.
    """
    x = np.asarray(x, dtype=float)
    G = net.path_costs(x)
    worst = 0.0
    for j, sl in enumerate(net.block_slices):
        used = x[sl] > share * net.demands[j]
        if used.any():
            worst = max(worst, float(G[sl][used].max() - G[sl].min()))
    return worst


def _compositions(total: int, parts: int):
    """Nonnegative integer vectors of length ``parts`` summing to ``total``, lexicographic."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def grid_equilibrium(net: Network, h: float) -> EquilibriumCertificate:
    """Minimise the potential over exact grid compositions of every demand.

    Block ``j`` takes values ``k * h * d_j`` with integer ``k`` summing to
    ``1/h``; ties go to the lexicographically first candidate.
    """
    if not h > 0:
        raise ValueError("grid resolution must be positive")
    if net.n_paths > MAX_GRID_PATHS:
        raise ValueError(f"grid search supports at most {MAX_GRID_PATHS} paths, network has {net.n_paths}")
    K = int(round(1.0 / h))
    if K < 1 or not math.isclose(K * h, 1.0, rel_tol=1e-9):
        raise ValueError("1/h must be a positive integer")
    n_points = 1
    for n in net.block_sizes:
        n_points *= math.comb(K + int(n) - 1, int(n) - 1)
    if n_points > MAX_GRID_POINTS:
        raise ValueError(f"grid has {n_points} points; too many paths for grid search")

    blocks = [np.array(list(_compositions(K, int(n))), dtype=float) * (net.demands[j] / K)
              for j, n in enumerate(net.block_sizes)]
    if len(blocks) == 1:
        X = blocks[0]
    else:
        X = np.array([np.concatenate(rows) for rows in product(*blocks)])

    psi = net.potentials(X)
    best = int(np.flatnonzero(psi <= psi.min() + 1e-12)[0])
    x = X[best]
    return EquilibriumCertificate("grid", x.tolist(), float(net.potential(x)), wardrop_residual(net, x), h)


def md_refine(net: Network, N: int = 100_000, seed: int = 0) -> EquilibriumCertificate:
    """Long exact-gradient mirror descent run; the average is the certificate."""
    if N < 100_000:
        raise ValueError("md_refine expects N >= 1e5")
    space = SimplexProduct.from_network(net)
    bounds = net.bounds
    oracle = GradientOracle(lambda k, x: net.path_costs(x), bound=max(bounds.gradient_bound, 1e-12))
    if bounds.trivial:
        x = net.feasible_uniform()
    else:
        x = run_md(oracle, space, N, seed=seed, record=False).average
    return EquilibriumCertificate("md-refine", x.tolist(), float(net.potential(x)), wardrop_residual(net, x), N)


def analytic_equilibrium(net: Network) -> EquilibriumCertificate:
    """Closed form for one OD pair served by two parallel single-edge routes
    with constant or affine costs ``a_i + b_i f``."""
    if net.n_od != 1 or net.n_paths != 2 or any(len(p.edges) != 1 for p in net.paths):
        raise ValueError("closed form needs one OD pair with two single-edge routes")
    edge_pos = {e.id: i for i, e in enumerate(net.edges)}
    idx = [edge_pos[p.edges[0]] for p in net.paths]
    if any(net.edges[i].cost.kind == "bpr" for i in idx):
        raise ValueError("closed form covers constant and affine costs only")
    (a1, b1, _), (a2, b2, _) = (net.edges[i].cost.coefficients() for i in idx)
    d = float(net.demands[0])
    if b1 + b2 == 0:
        x1 = d if a1 < a2 else (0.0 if a1 > a2 else d / 2)
    else:
        # equal costs a1 + b1 x1 = a2 + b2 (d - x1), clipped to the segment
        x1 = min(max((a2 - a1 + b2 * d) / (b1 + b2), 0.0), d)
    x = np.array([x1, d - x1])
    return EquilibriumCertificate("analytic", x.tolist(), float(net.potential(x)), wardrop_residual(net, x), 0)


def reference_equilibrium(net: Network, h: float = 0.01, md_iters: int = 100_000, seed: int = 0) -> EquilibriumCertificate:
    """Best available oracle: closed form, else grid, else a long MD run."""
    try:
        return analytic_equilibrium(net)
    except ValueError:
        pass
    try:
        return grid_equilibrium(net, h)
    except ValueError:
        return md_refine(net, md_iters, seed)
