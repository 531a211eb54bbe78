"""Transport network with path flows, edge latencies and the Beckmann potential.

Every latency kind is stored as ``tau(f) = a + b * f**p`` so that edge costs
and their antiderivatives are evaluated in closed form for the whole edge set
at once:

    constant  c                      -> a=c,  b=0,                     p=1
    affine    a + b f                -> a,    b,                       p=1
    bpr       t0 (1 + k (f/cap)^pw)  -> a=t0, b=t0 k / cap**pw,        p=pw
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

FEASIBILITY_TOL = 1e-9


class NetworkError(ValueError):
    """Raised for malformed network documents or inconsistent path data."""


@dataclass(frozen=True)
class CostFunction:
    kind: str
    params: dict

    def __post_init__(self):
        required = {
            "constant": ("c",),
            "affine": ("a", "b"),
            "bpr": ("t0", "cap", "coeff", "power"),
        }
        if self.kind not in required:
            raise NetworkError(f"unknown cost kind {self.kind!r}")
        missing = [k for k in required[self.kind] if k not in self.params]
        if missing:
            raise NetworkError(f"{self.kind} cost is missing parameters {missing}")
        for k in required[self.kind]:
            v = self.params[k]
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise NetworkError(f"cost parameter {k} must be a finite number")
        p = self.params
        if self.kind == "constant" and p["c"] < 0:
            raise NetworkError("constant cost must be nonnegative")
        if self.kind == "affine" and (p["a"] < 0 or p["b"] < 0):
            raise NetworkError("affine cost needs a >= 0 and b >= 0 (nonmonotone cost)")
        if self.kind == "bpr":
            if p["t0"] <= 0 or p["cap"] <= 0:
                raise NetworkError("bpr cost needs t0 > 0 and cap > 0")
            if p["coeff"] < 0 or p["power"] < 1:
                raise NetworkError("bpr cost needs coeff >= 0 and power >= 1 (nonmonotone cost)")

    def coefficients(self) -> tuple[float, float, float]:
        """Return ``(a, b, p)`` with ``tau(f) = a + b * f**p``."""
        p = self.params
        if self.kind == "constant":
            return float(p["c"]), 0.0, 1.0
        if self.kind == "affine":
            return float(p["a"]), float(p["b"]), 1.0
        return (
            float(p["t0"]),
            float(p["t0"]) * float(p["coeff"]) / float(p["cap"]) ** float(p["power"]),
            float(p["power"]),
        )

    def __call__(self, f):
        a, b, p = self.coefficients()
        return a + b * np.power(f, p)

    def integral(self, f):
        """Antiderivative from 0 to ``f``."""
        a, b, p = self.coefficients()
        return a * f + b * np.power(f, p + 1.0) / (p + 1.0)


@dataclass(frozen=True)
class Edge:
    id: str
    tail: str
    head: str
    cost: CostFunction


@dataclass(frozen=True)
class OdPair:
    origin: str
    destination: str
    demand: float


@dataclass(frozen=True)
class Path:
    od: int
    edges: tuple[str, ...]


@dataclass(frozen=True)
class DerivedBounds:
    edge_cost_bound: float
    path_cost_bound: float
    gradient_bound: float
    entropy_radius_sq: float

    @property
    def trivial(self) -> bool:
        # every OD pair has a single route, nothing to optimise
        return self.entropy_radius_sq == 0.0


@dataclass(frozen=True, eq=False)
class Network:
    """Immutable network; paths are stored contiguously block by block.

    Block ``j`` holds the paths of ``od_pairs[j]``, found at
    ``paths[block_slices[j]]``.
    """

    nodes: tuple[str, ...]
    edges: tuple[Edge, ...]
    od_pairs: tuple[OdPair, ...]
    paths: tuple[Path, ...]
    max_path_edges: int
    incidence: np.ndarray = field(init=False, repr=False)
    demands: np.ndarray = field(init=False, repr=False)
    block_sizes: np.ndarray = field(init=False, repr=False)
    block_starts: np.ndarray = field(init=False, repr=False)
    path_block: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        _validate(self)
        edge_index = {e.id: i for i, e in enumerate(self.edges)}
        inc = np.zeros((len(self.edges), len(self.paths)))
        for p, path in enumerate(self.paths):
            for eid in path.edges:
                inc[edge_index[eid], p] = 1.0
        sizes = np.array([sum(1 for p in self.paths if p.od == j) for j in range(len(self.od_pairs))], dtype=int)
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int) if len(sizes) else np.zeros(0, dtype=int)
        coeffs = np.array([e.cost.coefficients() for e in self.edges]).reshape(-1, 3)
        for name, value in (
            ("incidence", inc),
            ("demands", np.array([od.demand for od in self.od_pairs], dtype=float)),
            ("block_sizes", sizes),
            ("block_starts", starts),
            ("path_block", np.array([p.od for p in self.paths], dtype=int)),
            ("_a", coeffs[:, 0].copy()),
            ("_b", coeffs[:, 1].copy()),
            ("_p", coeffs[:, 2].copy()),
        ):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    @property
    def n_od(self) -> int:
        return len(self.od_pairs)

    @property
    def block_slices(self) -> list[slice]:
        return [slice(s, s + n) for s, n in zip(self.block_starts, self.block_sizes)]

    @property
    def path_demands(self) -> np.ndarray:
        """Demand of the OD pair owning each path."""
        return self.demands[self.path_block]

    def _check_dim(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_paths,):
            raise NetworkError(f"path flow has shape {x.shape}, expected ({self.n_paths},)")
        return x

    def edge_flows(self, x) -> np.ndarray:
        return self.incidence @ self._check_dim(x)

    def edge_costs(self, f) -> np.ndarray:
        return self._a + self._b * np.power(f, self._p)

    def path_costs(self, x) -> np.ndarray:
        return self.edge_costs(self.edge_flows(x)) @ self.incidence

    def potential(self, x) -> float:
        f = self.edge_flows(x)
        return float(np.sum(self._a * f + self._b * np.power(f, self._p + 1.0) / (self._p + 1.0)))

    def potentials(self, X) -> np.ndarray:
        """Potential of every row of a (K, P) array of path flows."""
        F = np.asarray(X, dtype=float) @ self.incidence.T
        return np.sum(self._a * F + self._b * np.power(F, self._p + 1.0) / (self._p + 1.0), axis=1)

    def potential_gradient(self, x) -> np.ndarray:
        # the gradient of the potential in path coordinates is the path cost vector
        return self.path_costs(x)

    def feasible_uniform(self) -> np.ndarray:
        return self.demands[self.path_block] / self.block_sizes[self.path_block]

    def block_sums(self, x) -> np.ndarray:
        return np.bincount(self.path_block, weights=self._check_dim(x), minlength=self.n_od)

    def is_feasible(self, x, tol: float = FEASIBILITY_TOL) -> bool:
        x = self._check_dim(x)
        return bool(np.all(x >= 0) and np.all(np.abs(self.block_sums(x) - self.demands) <= tol))

    def normalize_flow(self, x) -> np.ndarray:
        """Rescale each block of a nonnegative vector to its demand."""
        x = self._check_dim(x)
        if np.any(x < 0):
            raise NetworkError("path flows must be nonnegative")
        sums = self.block_sums(x)
        if np.any(sums <= 0):
            raise NetworkError("every OD block needs positive total flow")
        return x * (self.demands / sums)[self.path_block]

    @property
    def bounds(self) -> DerivedBounds:
        f_max = float(self.demands.sum())
        edge_bound = float(np.max(self.edge_costs(np.full(len(self.edges), f_max)))) if self.edges else 0.0
        path_bound = edge_bound * self.max_path_edges
        return DerivedBounds(
            edge_cost_bound=edge_bound,
            path_cost_bound=path_bound,
            gradient_bound=path_bound * math.sqrt(self.n_od),
            entropy_radius_sq=float(np.sum(self.demands**2 * np.log(self.block_sizes))),
        )


def _validate(net: Network) -> None:
    node_set = set(net.nodes)
    if len(node_set) != len(net.nodes):
        raise NetworkError("duplicate node ids")
    edge_by_id = {}
    for e in net.edges:
        if e.id in edge_by_id:
            raise NetworkError(f"duplicate edge id {e.id!r}")
        for end in (e.tail, e.head):
            if end not in node_set:
                raise NetworkError(f"edge {e.id!r} references unknown node {end!r}")
        edge_by_id[e.id] = e
    for j, od in enumerate(net.od_pairs):
        for end in (od.origin, od.destination):
            if end not in node_set:
                raise NetworkError(f"OD pair {j} references unknown node {end!r}")
        if not od.demand > 0:
            raise NetworkError("demand must be positive")
        if od.origin == od.destination:
            raise NetworkError(f"OD pair {j} has origin == destination")
    if net.max_path_edges < 1:
        raise NetworkError("max_path_edges must be >= 1")
    prev_od = -1
    seen = set()
    for path in net.paths:
        if not 0 <= path.od < len(net.od_pairs):
            raise NetworkError(f"path refers to unknown OD index {path.od}")
        if path.od < prev_od:
            raise NetworkError("paths must be grouped by OD index")
        prev_od = path.od
        if not path.edges:
            raise NetworkError("empty path")
        if len(path.edges) > net.max_path_edges:
            raise NetworkError(f"path {list(path.edges)} exceeds max_path_edges={net.max_path_edges}")
        if (path.od, path.edges) in seen:
            raise NetworkError(f"duplicate path {list(path.edges)}")
        seen.add((path.od, path.edges))
        od = net.od_pairs[path.od]
        at = od.origin
        for eid in path.edges:
            if eid not in edge_by_id:
                raise NetworkError(f"path references unknown edge {eid!r}")
            e = edge_by_id[eid]
            if e.tail != at:
                raise NetworkError(f"path {list(path.edges)} is not connected at edge {eid!r}")
            at = e.head
        if at != od.destination:
            raise NetworkError(f"path {list(path.edges)} does not end at {od.destination!r}")
    for j in range(len(net.od_pairs)):
        if not any(p.od == j for p in net.paths):
            raise NetworkError(f"OD pair {j} has an empty path block")


def enumerate_paths(nodes, edges, od_pairs, max_edges: int) -> list[list[Path]]:
    """All simple directed paths with at most ``max_edges`` edges, per OD pair.

    Outgoing edges are explored in document order, so each block comes out in
    lexicographic order of edge positions.
    """
    if max_edges < 1:
        raise NetworkError("max_edges must be >= 1")
    out = {v: [] for v in nodes}
    for e in edges:
        out[e.tail].append(e)

    blocks = []
    for j, od in enumerate(od_pairs):
        found = []

        def dfs(node, visited, trail):
            if node == od.destination:
                found.append(Path(j, tuple(trail)))
                return
            if len(trail) == max_edges:
                return
            for e in out[node]:
                if e.head not in visited:
                    visited.add(e.head)
                    trail.append(e.id)
                    dfs(e.head, visited, trail)
                    trail.pop()
                    visited.discard(e.head)

        dfs(od.origin, {od.origin}, [])
        if not found:
            raise NetworkError(f"OD pair {j} ({od.origin}->{od.destination}) has no path within {max_edges} edges")
        blocks.append(found)
    return blocks


def parse_network(doc: dict) -> Network:
    """Build a validated :class:`Network` from a decoded JSON document."""
    if not isinstance(doc, dict):
        raise NetworkError("network document must be a JSON object")
    try:
        nodes = tuple(str(v) for v in doc["nodes"])
        allow_loops = bool(doc.get("allow_self_loops", False))
        edges = []
        for item in doc["edges"]:
            cost = dict(item["cost"])
            kind = cost.pop("kind")
            e = Edge(str(item["id"]), str(item["tail"]), str(item["head"]), CostFunction(kind, cost))
            if e.tail == e.head and not allow_loops:
                raise NetworkError(f"self-loop on edge {e.id!r}")
            edges.append(e)
        od_pairs = []
        for item in doc["od_pairs"]:
            demand = item["demand"]
            if not isinstance(demand, (int, float)) or not demand > 0:
                raise NetworkError("demand must be positive")
            od_pairs.append(OdPair(str(item["origin"]), str(item["destination"]), float(demand)))
        raw_paths = doc.get("paths")
        max_edges = doc.get("max_path_edges")
    except (KeyError, TypeError) as exc:
        raise NetworkError(f"malformed network document: {exc!r}") from exc

    node_set = set(nodes)
    for e in edges:
        for end in (e.tail, e.head):
            if end not in node_set:
                raise NetworkError(f"edge {e.id!r} references unknown node {end!r}")
    for j, od in enumerate(od_pairs):
        for end in (od.origin, od.destination):
            if end not in node_set:
                raise NetworkError(f"OD pair {j} references unknown node {end!r}")

    if max_edges is not None and (not isinstance(max_edges, int) or max_edges < 1):
        raise NetworkError("max_path_edges must be a positive integer")

    if raw_paths is not None:
        try:
            paths = [Path(int(p["od"]), tuple(str(e) for e in p["edges"])) for p in raw_paths]
        except (KeyError, TypeError, ValueError) as exc:
            raise NetworkError(f"malformed path entry: {exc!r}") from exc
        paths.sort(key=lambda p: p.od)
        if max_edges is None:
            max_edges = max((len(p.edges) for p in paths), default=1)
    else:
        bound = max_edges if max_edges is not None else max(len(nodes) - 1, 1)
        blocks = enumerate_paths(nodes, edges, od_pairs, bound)
        paths = [p for block in blocks for p in block]
        if max_edges is None:
            max_edges = max((len(p.edges) for p in paths), default=1)

    return Network(nodes, tuple(edges), tuple(od_pairs), tuple(paths), int(max_edges))


def load_network(source) -> Network:
    """Load a network from JSON text, a file path, or an already decoded dict.

    A string not starting with ``{`` is taken as a file path.
    """
    if isinstance(source, dict):
        return parse_network(source)
    if isinstance(source, str) and not source.lstrip().startswith("{"):
        source = FsPath(source)
    if isinstance(source, FsPath):
        try:
            text = source.read_text(encoding="utf-8")
        except OSError as exc:
            raise NetworkError(f"cannot read network file {str(source)!r}: {exc}") from exc
    else:
        text = str(source)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkError(f"malformed document: {exc}") from exc
    return parse_network(doc)
