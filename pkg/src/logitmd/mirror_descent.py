"""Entropic mirror descent on a simplex and on a product of simplexes.

The feasible set is ``Q = S_{n_1}(d_1) x ... x S_{n_m}(d_m)`` where
``S_n(d) = {z >= 0 : sum(z) = d}``; the unit simplex is the case ``m = 1,
d_1 = 1``. With the entropy prox-function the mirror step is a per-block
softmax reweighting, evaluated here in the log domain with the block maximum
subtracted before exponentiation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

BLOCK_TOL = 1e-9


class OracleError(RuntimeError):
    """The gradient oracle broke its declared bound."""


@dataclass(frozen=True)
class SimplexProduct:
    """Block structure of a product of scaled simplexes."""

    sizes: tuple[int, ...]
    masses: tuple[float, ...]

    def __post_init__(self):
        if len(self.sizes) != len(self.masses) or not self.sizes:
            raise ValueError("need one mass per block and at least one block")
        if any(n < 1 for n in self.sizes) or any(not d > 0 for d in self.masses):
            raise ValueError("block sizes must be >= 1 and masses > 0")

    @classmethod
    def simplex(cls, n: int) -> "SimplexProduct":
        return cls((int(n),), (1.0,))

    @classmethod
    def from_network(cls, net) -> "SimplexProduct":
        return cls(tuple(int(n) for n in net.block_sizes), tuple(float(d) for d in net.demands))

    @property
    def dim(self) -> int:
        return sum(self.sizes)

    @cached_property
    def starts(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(np.intp)

    @cached_property
    def owner(self) -> np.ndarray:
        """Block index of each coordinate."""
        return np.repeat(np.arange(len(self.sizes)), self.sizes)

    @cached_property
    def coordinate_masses(self) -> np.ndarray:
        return np.repeat(np.asarray(self.masses, dtype=float), self.sizes)

    @cached_property
    def radius_sq(self) -> float:
        """Largest value of the prox-function on Q: sum_j d_j^2 ln n_j."""
        return float(sum(d * d * math.log(n) for d, n in zip(self.masses, self.sizes)))

    @cached_property
    def diameter(self) -> float:
        """Diameter in the product norm sqrt(sum_j ||z^j||_1^2)."""
        return 2.0 * math.sqrt(sum(d * d for d in self.masses))

    def uniform(self) -> np.ndarray:
        return self.coordinate_masses / np.repeat(np.asarray(self.sizes, dtype=float), self.sizes)

    @cached_property
    def _mass_array(self) -> np.ndarray:
        return np.asarray(self.masses, dtype=float)

    def block_sums(self, x) -> np.ndarray:
        if len(self.sizes) == 1:
            return np.array([np.sum(x)])
        return np.add.reduceat(np.asarray(x, dtype=float), self.starts)

    def block_max(self, x) -> np.ndarray:
        return np.maximum.reduceat(np.asarray(x, dtype=float), self.starts)

    def block_min(self, x) -> np.ndarray:
        return np.minimum.reduceat(np.asarray(x, dtype=float), self.starts)

    def softmax(self, logits) -> np.ndarray:
        """Per-block softmax of ``logits`` scaled to the block masses."""
        logits = np.asarray(logits, dtype=float)
        if len(self.sizes) == 1:
            w = np.exp(logits - logits.max())
            return w * (self.masses[0] / w.sum())
        owner = self.owner
        w = np.exp(logits - self.block_max(logits)[owner])
        return w * (self._mass_array / self.block_sums(w))[owner]

    def max_block_error(self, x) -> float:
        if len(self.sizes) == 1:
            return abs(float(np.sum(x)) - self.masses[0])
        return float(np.max(np.abs(self.block_sums(x) - self._mass_array)))


def md_step_simplex(x, g, alpha: float) -> np.ndarray:
    """One entropic mirror step on the unit simplex.

    ``x_i <- x_i exp(-alpha g_i) / sum_l x_l exp(-alpha g_l)``.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("mirror step needs a strictly positive point")
    return SimplexProduct((x.size,), (1.0,)).softmax(np.log(x) - alpha * np.asarray(g, dtype=float))


def md_step_product(z, g, alpha: float, space: SimplexProduct) -> np.ndarray:
    """Mirror step on a product of simplexes: an independent reweighting per block.

    Each block is multiplied by ``exp(-alpha g)``, then rescaled to its mass.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (space.dim,):
        raise ValueError(f"point has shape {z.shape}, expected ({space.dim},)")
    if np.any(z <= 0):
        raise ValueError("mirror step needs a strictly positive point")
    if space.max_block_error(z) > BLOCK_TOL:
        raise ValueError("block sums deviate from the block masses")
    return space.softmax(np.log(z) - alpha * np.asarray(g, dtype=float))


def cumulative_iterate(cumulative_loss, alpha: float, space: SimplexProduct) -> np.ndarray:
    """Iterate in closed form from the summed gradients (uniform start)."""
    return space.softmax(-alpha * np.asarray(cumulative_loss, dtype=float))


def step_size(kind: str, N: int, M: float, R: Optional[float] = None, n: Optional[int] = None) -> float:
    """Fixed step size tuned for a horizon of ``N`` steps.

    ``simplex``: sqrt(2 ln n / N) / M on the unit simplex.
    ``product`` and ``general``: (R / M) sqrt(2 / N).
    """
    if N < 1:
        raise ValueError("horizon N must be >= 1")
    if not M > 0:
        raise ValueError("gradient bound M must be positive")
    if kind == "simplex":
        if n is None or n < 2:
            raise ValueError("simplex step size needs n >= 2")
        return math.sqrt(2.0 * math.log(n) / N) / M
    if kind in ("product", "general"):
        if R is None or not R > 0:
            raise ValueError("degenerate radius R = 0")
        return R / M * math.sqrt(2.0 / N)
    raise ValueError(f"unknown step-size kind {kind!r}")


def entropy_value(x, space: SimplexProduct) -> float:
    """Prox-function ``sum_j d_j (d_j ln n_j + sum_i z_i ln(z_i / d_j))`` with 0 ln 0 = 0."""
    x = np.asarray(x, dtype=float)
    d = space.coordinate_masses
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(x > 0, x * np.log(x / d), 0.0)
    per_block = np.asarray(space.masses) * np.log(space.sizes) + space.block_sums(terms)
    return float(np.dot(space.masses, per_block))


def bregman(x, y, space: SimplexProduct) -> float:
    """Bregman divergence ``V_x(y)`` of the prox-function (a mass-weighted KL)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0):
        raise ValueError("bregman needs a strictly positive base point")
    d = space.coordinate_masses
    grad = d * (np.log(x / d) + 1.0)
    return entropy_value(y, space) - entropy_value(x, space) - float(np.dot(grad, y - x))


@dataclass
class NoiseModel:
    """Inexact oracle noise: symmetric +-sigma flips plus a fixed bias of sup-norm delta."""

    delta: float = 0.0
    sigma: float = 0.0
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.delta < 0 or self.sigma < 0:
            raise ValueError("delta and sigma must be nonnegative")

    def bias_vector(self, dim: int) -> np.ndarray:
        if self.bias is not None:
            b = np.asarray(self.bias, dtype=float)
            if b.shape != (dim,) or np.max(np.abs(b), initial=0.0) > self.delta + 1e-15:
                raise ValueError("bias must have the problem dimension and sup-norm <= delta")
            return b
        # alternating signs so the bias is not a removable per-block shift
        return self.delta * (-1.0) ** np.arange(dim)


@dataclass
class GradientOracle:
    """Stochastic delta-inexact gradient oracle.

    ``gradient(k, x)`` returns the exact gradient of the k-th loss (k from 1).
    The reported vector is ``clip(gradient + zeta, -M, M) + bias``.
    """

    gradient: Callable[[int, np.ndarray], np.ndarray]
    bound: float
    noise: Optional[NoiseModel] = None

    def __call__(self, k: int, x: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        exact = np.asarray(self.gradient(k, x), dtype=float)
        if self.noise is None or (self.noise.sigma == 0 and self.noise.delta == 0):
            return exact, exact
        g = exact
        if self.noise.sigma > 0:
            flips = rng.integers(0, 2, size=exact.shape) * 2.0 - 1.0
            g = np.clip(exact + self.noise.sigma * flips, -self.bound, self.bound)
        if self.noise.delta > 0:
            g = g + self.noise.bias_vector(exact.size)
        return g, exact

    @property
    def delta(self) -> float:
        return 0.0 if self.noise is None else self.noise.delta


@dataclass
class MdState:
    iterate: np.ndarray
    average: np.ndarray
    cumulative: np.ndarray
    step: float
    iteration: int = 1

    @classmethod
    def start(cls, space: SimplexProduct, alpha: float) -> "MdState":
        if not alpha > 0:
            raise ValueError("step size must be positive")
        x = space.uniform()
        return cls(x, x.copy(), np.zeros(space.dim), float(alpha))

    def advance(self, g, space: SimplexProduct) -> None:
        self.cumulative += g
        self.iterate = cumulative_iterate(self.cumulative, self.step, space)
        self.iteration += 1
        self.average += (self.iterate - self.average) / self.iteration


@dataclass
class MdTrajectory:
    alpha: float
    iterates: np.ndarray
    average: np.ndarray
    gradients: np.ndarray
    exact_gradients: np.ndarray
    losses: Optional[np.ndarray]
    max_block_error: float
    seed: int


def run_md(
    oracle: GradientOracle,
    space: SimplexProduct,
    N: int,
    alpha: Optional[float] = None,
    seed: int = 0,
    loss: Optional[Callable[[int, np.ndarray], float]] = None,
    record: bool = True,
) -> MdTrajectory:
    """Run N rounds of mirror descent from the uniform point.

    Iterates are recomputed from the summed observed gradients each round,
    which is algebraically the same as chaining :func:`md_step_product`.
    With ``alpha=None`` the step is ``(R/M) sqrt(2/N)`` for ``R^2 =
    sum_j d_j^2 ln n_j``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if alpha is None:
        alpha = step_size("product", N, oracle.bound, R=math.sqrt(space.radius_sq))
    rng = np.random.default_rng(seed)
    state = MdState.start(space, alpha)
    limit = oracle.bound + oracle.delta + 1e-12

    dim = space.dim
    iterates = np.empty((N, dim)) if record else np.empty((0, dim))
    grads = np.empty((N, dim)) if record else np.empty((0, dim))
    exact_grads = np.empty((N, dim)) if record else np.empty((0, dim))
    losses = np.empty(N) if loss is not None else None
    worst = 0.0

    for k in range(1, N + 1):
        x = state.iterate
        worst = max(worst, space.max_block_error(x))
        g, exact = oracle(k, x, rng)
        if np.max(np.abs(g)) > limit:
            raise OracleError(f"oracle reported |g|_inf={np.max(np.abs(g)):.6g} above M + delta = {limit:.6g}")
        if record:
            iterates[k - 1] = x
            grads[k - 1] = g
            exact_grads[k - 1] = exact
        if losses is not None:
            losses[k - 1] = loss(k, x)
        if k < N:
            state.advance(g, space)

    return MdTrajectory(
        alpha=float(alpha),
        iterates=iterates,
        average=state.average.copy(),
        gradients=grads,
        exact_gradients=exact_grads,
        losses=losses,
        max_block_error=worst,
        seed=seed,
    )


@dataclass
class RegretLedger:
    """Realized losses and what is needed for the hindsight comparator.

    ``mode`` is ``"linear"`` (losses <l^k, x>) or ``"fixed"`` (one convex loss
    with a known minimum ``psi_star``).
    """

    mode: Optional[str] = None
    realized: list = field(default_factory=list)
    loss_sum: Optional[np.ndarray] = None
    psi_star: Optional[float] = None

    def _set_mode(self, mode):
        if self.mode is None:
            self.mode = mode
        elif self.mode != mode:
            raise ValueError("cannot mix linear and fixed-loss records in one ledger")

    def record_linear(self, loss_vector, x) -> None:
        self._set_mode("linear")
        loss_vector = np.asarray(loss_vector, dtype=float)
        self.realized.append(float(np.dot(loss_vector, x)))
        self.loss_sum = loss_vector.copy() if self.loss_sum is None else self.loss_sum + loss_vector

    def record_value(self, value: float, psi_star: float) -> None:
        self._set_mode("fixed")
        if self.psi_star is not None and self.psi_star != psi_star:
            raise ValueError("comparator value changed mid-run")
        self.psi_star = float(psi_star)
        self.realized.append(float(value))

    @property
    def N(self) -> int:
        return len(self.realized)


def regret(ledger: RegretLedger, space: SimplexProduct) -> float:
    """Average pseudo-regret of the recorded plays against the best fixed point."""
    if ledger.N < 1:
        raise ValueError("empty regret ledger")
    N = ledger.N
    played = float(np.sum(ledger.realized)) / N
    if ledger.mode == "fixed":
        return played - ledger.psi_star
    # a linear functional on a product of simplexes is minimised at per-block vertices
    best = float(np.dot(space.masses, space.block_min(ledger.loss_sum)))
    return played - best / N


@dataclass(frozen=True)
class CertifiedBound:
    expectation: float
    high_prob: Optional[float]


def certified_bound(
    kind: str,
    N: int,
    M: float,
    space: SimplexProduct,
    delta: float = 0.0,
    sigma: Optional[float] = None,
) -> CertifiedBound:
    """Regret bounds for the tuned step size.

    ``simplex``/``vertex`` on the unit simplex, ``product`` on a product
    of simplexes, ``general`` with ``R^2`` the prox range and ``R~`` the
    diameter of Q. ``sigma`` is the failure probability of the
    high-probability bound.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if sigma is not None and not 0 < sigma < 1:
        raise ValueError("sigma must lie in (0, 1)")
    log_term = math.sqrt(math.log(1.0 / sigma)) if sigma is not None else None
    root = math.sqrt(2.0 / N)

    if kind in ("simplex", "vertex"):
        if space.sizes != (space.sizes[0],) or space.masses != (1.0,):
            raise ValueError(f"{kind} bound is for the unit simplex")
        ln_n = math.log(space.sizes[0])
        expectation = M * math.sqrt(2.0 * ln_n / N) + 2.0 * delta
        c = 4.0 if kind == "simplex" else 6.0
        hp = None if log_term is None else M * root * (math.sqrt(ln_n) + c * log_term) + 2.0 * delta
    elif kind == "product":
        R = math.sqrt(space.radius_sq)
        mass_norm = math.sqrt(sum(d * d for d in space.masses))
        expectation = M * root * R + 2.0 * delta * mass_norm
        hp = None if log_term is None else M * root * (R + 4.0 * mass_norm * log_term) + 2.0 * delta * mass_norm
    elif kind == "general":
        R = math.sqrt(space.radius_sq)
        diam = space.diameter
        expectation = M * R * root + diam * delta
        hp = None if log_term is None else M * root * (R + 2.0 * diam * log_term) + diam * delta
    else:
        raise ValueError(f"unknown bound kind {kind!r}")
    return CertifiedBound(expectation, hp)


def anytime_bound(k: int, alpha: float, M: float, space: SimplexProduct, delta: float = 0.0) -> float:
    """Regret bound after ``k`` rounds at a fixed step: R^2/(alpha k) + alpha M^2 / 2 + R~ delta.

    Equals the product expectation bound at the tuned horizon when delta = 0.
    """
    return space.radius_sq / (alpha * k) + 0.5 * alpha * M * M + space.diameter * delta


def pooled_route_bound(M: float, N: int, space: SimplexProduct) -> float:
    """Alternative route-choice bound with per-pair step sizes (reported, not certified).

    ``M / sqrt(N) * max_j ln n_j / sqrt(2 min_j ln n_j) * (sum_j d_j^2 + 1)``;
    undefined (nan) when some pair has a single route.
    """
    logs = [math.log(n) for n in space.sizes]
    if min(logs) <= 0:
        return float("nan")
    return M / math.sqrt(N) * max(logs) / math.sqrt(2.0 * min(logs)) * (sum(d * d for d in space.masses) + 1.0)
