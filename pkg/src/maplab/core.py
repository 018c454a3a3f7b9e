"""Metric spaces, request phases, cost accounting and instance I/O.

Allocations are plain numpy vectors indexed by metric points.  For tree
metrics the points are the leaves (in the order of ``TreeMetric.leaves``);
internal-vertex coordinates are always derived from the leaf vector via
``TreeMetric.expand`` and never stored.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

TOL_SIMPLEX = 1e-9


class InputError(ValueError):
    """Malformed instance, metric or argument."""


class InvariantError(RuntimeError):
    """A state invariant of an online algorithm was violated."""


class ResourceError(RuntimeError):
    """A computation would exceed its configured resource budget."""


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StarMetric:
    """Weighted star: d(i, j) = w_i + w_j for i != j."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or len(w) < 1:
            raise InputError("star weights must be a non-empty vector")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise InputError("star weights must be strictly positive")
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return len(self.weights)

    def norm(self, z) -> float:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.n,):
            raise InputError(f"displacement has shape {z.shape}, expected ({self.n},)")
        return float(np.dot(self.weights, np.abs(z)))

    def distance_matrix(self) -> np.ndarray:
        d = self.weights[:, None] + self.weights[None, :]
        np.fill_diagonal(d, 0.0)
        return d

    def diameter(self) -> float:
        if self.n < 2:
            return 0.0
        w = np.sort(self.weights)
        return float(w[-1] + w[-2])

    def is_uniform(self) -> bool:
        return bool(np.allclose(self.weights, self.weights[0], rtol=0, atol=1e-15))

    def to_json(self) -> dict:
        return {"type": "star", "weights": self.weights.tolist()}


class TreeMetric:
    """Rooted weighted tree whose leaves are the metric points.

    ``parents[u]`` is the parent of vertex ``u`` (``-1`` for the root) and
    ``weights[u]`` the length of the edge ``(u, parents[u])``; the root's
    entry is ignored.  ``leaves`` fixes the order of the metric points.
    """

    def __init__(self, parents: Sequence[int], weights: Sequence[float],
                 leaves: Sequence[int] | None = None):
        parents = [int(p) for p in parents]
        nv = len(parents)
        if nv < 2:
            raise InputError("a tree metric needs at least two vertices")
        if len(weights) != nv:
            raise InputError("parents and weights must have equal length")
        roots = [u for u, p in enumerate(parents) if p < 0]
        if len(roots) != 1:
            raise InputError(f"tree must have exactly one root, found {len(roots)}")
        self.root = roots[0]
        for u, p in enumerate(parents):
            if p >= nv:
                raise InputError(f"parent index {p} out of range")
        children: list[list[int]] = [[] for _ in range(nv)]
        for u, p in enumerate(parents):
            if p >= 0:
                children[p].append(u)
        # BFS from the root; every vertex must be reached exactly once
        order = [self.root]
        for u in order:
            order.extend(children[u])
            if len(order) > nv:
                break
        if len(order) != nv or len(set(order)) != nv:
            raise InputError("parent map is cyclic or disconnected")
        w = np.asarray(weights, dtype=float)
        for u in range(nv):
            if u != self.root and not (w[u] > 0 and np.isfinite(w[u])):
                raise InputError(f"edge weight of vertex {u} must be strictly positive")
        childless = [u for u in range(nv) if not children[u]]
        if leaves is None:
            leaves = childless
        leaves = [int(v) for v in leaves]
        if sorted(leaves) != sorted(childless):
            raise InputError("designated leaves must be exactly the childless vertices")

        self.parents = np.asarray(parents, dtype=int)
        self.weights = w.copy()
        self.weights[self.root] = 0.0
        self.children = children
        self.leaves = leaves
        self.order = order                       # root first, parents before children
        self.internal = [u for u in order if children[u]]
        self.nonroot = [u for u in range(nv) if u != self.root]
        self.leaf_pos = {v: i for i, v in enumerate(leaves)}
        # membership[u, j] = 1 iff leaf j lies in the subtree of u
        member = np.zeros((nv, len(leaves)))
        for j, v in enumerate(leaves):
            u = v
            while u >= 0:
                member[u, j] = 1.0
                u = parents[u]
        self.membership = member
        self.n_leaves_below = member.sum(axis=1)
        self._nonroot_idx = np.asarray(self.nonroot, dtype=int)

    @property
    def n(self) -> int:
        return len(self.leaves)

    @property
    def n_vertices(self) -> int:
        return len(self.parents)

    def expand(self, x_leaves) -> np.ndarray:
        """Full vertex vector with x_u = sum of leaf coordinates below u."""
        x = np.asarray(x_leaves, dtype=float)
        if x.shape != (self.n,):
            raise InputError(f"leaf vector has shape {x.shape}, expected ({self.n},)")
        return self.membership @ x

    def norm(self, z_leaves) -> float:
        zu = self.expand(z_leaves)
        idx = self._nonroot_idx
        return float(np.dot(self.weights[idx], np.abs(zu[idx])))

    def depth_distance(self) -> np.ndarray:
        """Weighted distance of every vertex from the root."""
        dist = np.zeros(self.n_vertices)
        for u in self.order[1:]:
            dist[u] = dist[self.parents[u]] + self.weights[u]
        return dist

    def path_distance(self, u: int, v: int) -> float:
        anc = {}
        a, d = u, 0.0
        while a >= 0:
            anc[a] = d
            d += self.weights[a] if self.parents[a] >= 0 else 0.0
            a = self.parents[a]
        b, d = v, 0.0
        while b not in anc:
            d += self.weights[b]
            b = self.parents[b]
        return d + anc[b]

    def distance_matrix(self) -> np.ndarray:
        n = self.n
        d = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                d[i, j] = d[j, i] = self.path_distance(self.leaves[i], self.leaves[j])
        return d

    def diameter(self) -> float:
        return float(self.distance_matrix().max()) if self.n > 1 else 0.0

    def to_json(self) -> dict:
        w = self.weights.tolist()
        return {"type": "tree", "parents": self.parents.tolist(), "weights": w,
                "leaves": list(self.leaves)}


Metric = Union[StarMetric, TreeMetric]


def star_as_tree(metric: StarMetric) -> TreeMetric:
    """The same weighted star written as a depth-one tree rooted at vertex 0."""
    n = metric.n
    return TreeMetric([-1] + [0] * n, [0.0] + metric.weights.tolist(),
                      list(range(1, n + 1)))


def norm(metric: Metric, z) -> float:
    """Movement norm of a displacement of the metric points."""
    return metric.norm(z)


# ---------------------------------------------------------------------------
# cost functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RequestPhase:
    """Hinge cost [s - x_r]_+ active for at most ``T`` time units."""

    r: int
    s: float
    T: float

    def __post_init__(self):
        if not 0.0 <= self.s <= 1.0:
            raise InputError(f"intercept s={self.s} outside [0, 1]")
        if not self.T > 0:
            raise InputError(f"duration T={self.T} must be positive")
        if self.r < 0:
            raise InputError("point index must be non-negative")

    def charge(self, xr: float) -> float:
        return max(self.s - xr, 0.0)

    def to_json(self) -> dict:
        return {"r": self.r, "s": self.s, "T": self.T}


@dataclass(frozen=True)
class StepPhase:
    """Non-increasing step cost at leaf ``r``.

    ``steps`` is a list of ``(threshold, value)`` pairs with increasing
    thresholds and non-increasing values; the charge at ``x`` is the value of
    the first step whose threshold exceeds ``x`` and 0 past the last one.
    """

    r: int
    steps: tuple
    T: float

    def __post_init__(self):
        steps = tuple((float(a), float(v)) for a, v in self.steps)
        object.__setattr__(self, "steps", steps)
        if not self.T > 0:
            raise InputError(f"duration T={self.T} must be positive")
        for (a0, v0), (a1, v1) in zip(steps, steps[1:]):
            if not a1 > a0:
                raise InputError("step thresholds must be strictly increasing")
            if v1 > v0:
                raise InputError("step values must be non-increasing")
        if any(v < 0 for _, v in steps):
            raise InputError("step values must be non-negative")

    def charge(self, xr: float) -> float:
        for a, v in self.steps:
            if xr < a:
                return v
        return 0.0

    def next_threshold(self, xr: float) -> float | None:
        for a, _ in self.steps:
            if xr < a:
                return a
        return None

    def to_json(self) -> dict:
        return {"r": self.r, "steps": [list(p) for p in self.steps], "T": self.T}


Phase = Union[RequestPhase, StepPhase]


def service_rate(phase: Phase, x) -> float:
    """Instantaneous online charge of ``phase`` at allocation ``x``."""
    return phase.charge(float(np.asarray(x)[phase.r]))


def offline_cost_rate(phase: Phase, y) -> float:
    """Instantaneous offline service cost at allocation ``y``."""
    return phase.charge(float(np.asarray(y)[phase.r]))


# ---------------------------------------------------------------------------
# instances
# ---------------------------------------------------------------------------

@dataclass
class Instance:
    metric: Metric
    phases: list
    x0: np.ndarray | None = None
    monotone: str = "decreasing"

    def __post_init__(self):
        for ph in self.phases:
            if ph.r >= self.metric.n:
                raise InputError(f"phase point {ph.r} outside metric of size {self.metric.n}")
        if self.x0 is not None:
            self.x0 = np.asarray(self.x0, dtype=float)
            if self.x0.shape != (self.metric.n,):
                raise InputError("x0 has wrong dimension")
            if abs(self.x0.sum() - 1.0) > TOL_SIMPLEX:
                raise InputError("x0 must sum to 1")
        if self.monotone not in ("decreasing", "increasing"):
            raise InputError("monotone must be 'decreasing' or 'increasing'")

    @property
    def n(self) -> int:
        return self.metric.n

    def start(self) -> np.ndarray:
        if self.x0 is not None:
            return self.x0.copy()
        return np.full(self.n, 1.0 / self.n)

    def with_durations(self, durations: Sequence[float]) -> "Instance":
        """Copy with each phase's duration replaced; zero-length phases dropped."""
        phases = []
        for ph, d in zip(self.phases, durations):
            if d > 0:
                if isinstance(ph, RequestPhase):
                    phases.append(RequestPhase(ph.r, ph.s, float(d)))
                else:
                    phases.append(StepPhase(ph.r, ph.steps, float(d)))
        return Instance(self.metric, phases, self.x0, self.monotone)

    def to_json(self) -> dict:
        out = {"metric": self.metric.to_json(),
               "phases": [ph.to_json() for ph in self.phases]}
        if self.x0 is not None:
            out["x0"] = self.x0.tolist()
        if self.monotone != "decreasing":
            out["monotone"] = self.monotone
        return out


def metric_from_json(d: dict) -> Metric:
    kind = d.get("type")
    if kind == "star":
        return StarMetric(np.asarray(d["weights"], dtype=float))
    if kind == "tree":
        return TreeMetric(d["parents"], d["weights"], d.get("leaves"))
    raise InputError(f"unknown metric type {kind!r}")


def phase_from_json(d: dict) -> Phase:
    if "steps" in d:
        return StepPhase(int(d["r"]), tuple(tuple(p) for p in d["steps"]), float(d["T"]))
    return RequestPhase(int(d["r"]), float(d["s"]), float(d["T"]))


def instance_from_json(d: dict) -> Instance:
    try:
        metric = metric_from_json(d["metric"])
        phases = [phase_from_json(p) for p in d.get("phases", [])]
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed instance: {exc}") from exc
    return Instance(metric, phases, d.get("x0"), d.get("monotone", "decreasing"))


def load_instance(path) -> Instance:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read instance {path}: {exc}") from exc
    return instance_from_json(data)


def dump_instance(inst: Instance, path) -> None:
    Path(path).write_text(json.dumps(inst.to_json(), indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# ledgers and traces
# ---------------------------------------------------------------------------

@dataclass
class PhaseCost:
    phase: int
    duration: float
    service: float
    movement: float


@dataclass
class CostLedger:
    entries: list = field(default_factory=list)

    def add(self, phase: int, duration: float, service: float, movement: float):
        if service < 0 or movement < 0:
            raise InvariantError("phase costs must be non-negative")
        self.entries.append(PhaseCost(phase, float(duration), float(service), float(movement)))

    @property
    def service(self) -> float:
        return float(sum(e.service for e in self.entries))

    @property
    def movement(self) -> float:
        return float(sum(e.movement for e in self.entries))

    @property
    def total(self) -> float:
        return self.service + self.movement

    @property
    def durations(self) -> list:
        return [e.duration for e in self.entries]


@dataclass
class TraceRecord:
    t: float
    phase: int
    x: np.ndarray
    aux: np.ndarray          # baseline b (stars) or multipliers lambda (trees)
    alpha: float
    service: float           # cumulative
    movement: float          # cumulative
    pos_movement: float = 0.0
    lam_root_int: float = 0.0
    potentials: dict = field(default_factory=dict)


def write_trace_csv(trace: Sequence[TraceRecord], path, potentials: Sequence[str] = ()):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "alpha", "service_cum", "movement_cum", *potentials])
        for rec in trace:
            w.writerow([repr(rec.t), repr(rec.alpha), repr(rec.service), repr(rec.movement),
                        *(repr(rec.potentials.get(k, float("nan"))) for k in potentials)])


def path_cost(inst: Instance, path: Sequence, start=None) -> tuple[float, float]:
    """(service, movement) of a piecewise-constant path, one allocation per phase.

    The path moves at the start of each phase and holds for the phase's full
    duration.
    """
    prev = inst.start() if start is None else np.asarray(start, dtype=float)
    service = movement = 0.0
    for ph, y in zip(inst.phases, path):
        y = np.asarray(y, dtype=float)
        movement += inst.metric.norm(y - prev)
        service += ph.T * offline_cost_rate(ph, y)
        prev = y
    return service, movement
