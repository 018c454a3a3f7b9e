"""Offline optimum on a grid, simple offline baselines, the adaptive lower-bound
adversary and random instance families.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .core import (Instance, InputError, RequestPhase, ResourceError, StarMetric, StepPhase,
                   TreeMetric, offline_cost_rate)
from .integrator import IntegratorConfig
from .reductions import encode_kserver, encode_mts
from .tree import TreeRunner, as_tree

MAX_DP_ENTRIES = 10_000_000


# ---------------------------------------------------------------------------
# grid dynamic program
# ---------------------------------------------------------------------------

class SimplexGrid:
    """All points of {0, 1/g, ..., 1}^n summing to 1, with neighbour tables.

    ``pred[(i, j)]`` maps each point with c_j >= 1 to the point that has one
    more unit at i and one less at j, i.e. the point a unit transfer i -> j
    starts from.
    """

    def __init__(self, n: int, g: int):
        self.n, self.g = n, g
        bars = np.array(list(combinations(range(g + n - 1), n - 1)), dtype=np.int64)
        bars = bars.reshape(-1, n - 1)
        edges = np.hstack([np.full((len(bars), 1), -1), bars,
                           np.full((len(bars), 1), g + n - 1)])
        self.counts = np.diff(edges, axis=1) - 1
        self.radix = (g + 1) ** np.arange(n, dtype=np.int64)
        codes = self.counts @ self.radix
        self.order = np.argsort(codes)
        self.codes = codes[self.order]
        self.points = self.counts / g
        self.levels = [[np.flatnonzero(self.counts[:, j] == m) for m in range(g + 1)]
                       for j in range(n)]
        self._pred = {}

    def __len__(self):
        return len(self.counts)

    def lookup(self, codes):
        return self.order[np.searchsorted(self.codes, codes)]

    def pred(self, i: int, j: int) -> np.ndarray:
        if (i, j) not in self._pred:
            out = np.full(len(self), -1, dtype=np.int64)
            ok = self.counts[:, j] >= 1
            out[ok] = self.lookup(self.counts[ok] @ self.radix + self.radix[i] - self.radix[j])
            self._pred[(i, j)] = out
        return self._pred[(i, j)]


def _move_norms(metric, points: np.ndarray, x0: np.ndarray) -> np.ndarray:
    z = points - x0[None, :]
    if isinstance(metric, StarMetric):
        return np.abs(z) @ metric.weights
    return np.abs(z @ metric.membership.T) @ metric.weights


def _distance_transform(grid: SimplexGrid, V: np.ndarray, D: np.ndarray):
    """min over y' of V(y') + d(y, y') with argmin origins, by unit transfers.

    One sweep over all ordered pairs suffices: a transport plan between two
    grid points can be executed pair by pair in any fixed order while every
    intermediate point stays on the grid.
    """
    V = V.copy()
    origin = np.arange(len(V))
    n, g = grid.n, grid.g
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            c = D[i, j] / g
            pred = grid.pred(i, j)
            for m in range(1, g + 1):
                pts = grid.levels[j][m]
                if len(pts) == 0:
                    continue
                src = pred[pts]
                cand = V[src] + c
                better = cand < V[pts]
                if better.any():
                    sel = pts[better]
                    V[sel] = cand[better]
                    origin[sel] = origin[src[better]]
    return V, origin


def _phase_rates(ph, grid: SimplexGrid) -> np.ndarray:
    vals = np.array([ph.charge(m / grid.g) for m in range(grid.g + 1)])
    return vals[grid.counts[:, ph.r]]


@dataclass
class OracleResult:
    cost: float
    path: list                      # offline allocation per phase
    grid: int
    service: float = 0.0
    movement: float = 0.0


def dp_oracle(inst: Instance, g: int = 40, start=None) -> OracleResult:
    """Exact offline optimum over grid allocations moving once per phase start."""
    n = inst.n
    if g < 1:
        raise InputError("grid resolution must be positive")
    if n > 5:
        raise InputError("the grid oracle supports at most 5 points")
    m = len(inst.phases)
    size = math.comb(g + n - 1, n - 1)
    if size * max(1, m) > MAX_DP_ENTRIES:
        raise ResourceError(f"DP needs {size * max(1, m)} entries (> {MAX_DP_ENTRIES}); "
                            "use a smaller grid or fewer points")
    if m == 0:
        return OracleResult(0.0, [], g)
    metric = inst.metric
    x0 = inst.start() if start is None else np.asarray(start, dtype=float)
    grid = SimplexGrid(n, g)
    D = metric.distance_matrix()
    V = _move_norms(metric, grid.points, x0) + inst.phases[0].T * _phase_rates(inst.phases[0], grid)
    back = []
    for ph in inst.phases[1:]:
        V, origin = _distance_transform(grid, V, D)
        back.append(origin)
        V = V + ph.T * _phase_rates(ph, grid)
    idx = int(np.argmin(V))
    cost = float(V[idx])
    path_idx = [idx]
    for origin in reversed(back):
        idx = int(origin[idx])
        path_idx.append(idx)
    path = [grid.points[i].copy() for i in reversed(path_idx)]
    serv, move = _path_cost(inst, path, x0)
    return OracleResult(cost, path, g, serv, move)


def _path_cost(inst: Instance, path, x0):
    prev = x0
    serv = move = 0.0
    for ph, y in zip(inst.phases, path):
        move += inst.metric.norm(y - prev)
        serv += ph.T * offline_cost_rate(ph, y)
        prev = y
    return serv, move


def stay_put_baseline(inst: Instance, y) -> float:
    """Move once to ``y`` and serve every phase there."""
    y = np.asarray(y, dtype=float)
    cost = inst.metric.norm(y - inst.start())
    for ph in inst.phases:
        cost += ph.T * offline_cost_rate(ph, y)
    return float(cost)


def competitive_ratio(online: float, offline: float, floor: float = 0.0) -> float:
    """(online - floor) / offline; 0 when the numerator is not positive."""
    num = online - floor
    if num <= 0:
        return 0.0
    if offline <= 0:
        return math.inf
    return num / offline


# ---------------------------------------------------------------------------
# lower-bound adversary
# ---------------------------------------------------------------------------

@dataclass
class AdversaryResult:
    n: int
    rounds: int
    requests: list
    online_service: float
    online_movement: float
    offline: float
    i_star: int
    instance: Instance = field(repr=False, default=None)

    @property
    def online(self) -> float:
        return self.online_service + self.online_movement

    @property
    def ratio(self) -> float:
        return self.online / self.offline


def lower_bound_step(n: int) -> tuple:
    """The step cost 1/n^2 * [z < 1/(n-1)] as (threshold, value) pairs."""
    return ((1.0 / (n - 1), 1.0 / n ** 2),)


def adversary_nonconvex(n: int, rounds: int, cfg: IntegratorConfig | None = None,
                        T: float = 1.0) -> AdversaryResult:
    """Adaptive step-cost adversary against the tree algorithm.

    The metric is a star with all distances 1.  Each round requests the
    point of smallest current mass (lowest index on ties).  The offline
    benchmark stays put with zero mass at the least requested point and
    1/(n-1) everywhere else.
    """
    if n < 2:
        raise InputError("the adversary needs at least two points")
    metric = StarMetric(np.full(n, 0.5))
    cfg = cfg or IntegratorConfig(record=False)
    runner = TreeRunner(as_tree(metric), np.full(n, 1.0 / n), cfg, check=False)
    steps = lower_bound_step(n)
    requests, phases = [], []
    for k in range(rounds):
        r = int(np.argmin(runner.x))
        ph = StepPhase(r, steps, T)
        requests.append(r)
        phases.append(ph)
        runner.run_phase(k, ph)
    counts = np.bincount(requests, minlength=n)
    i_star = int(np.argmin(counts))
    y = np.full(n, 1.0 / (n - 1))
    y[i_star] = 0.0
    inst = Instance(metric, phases)
    return AdversaryResult(n, rounds, requests, runner.ledger.service, runner.ledger.movement,
                           stay_put_baseline(inst, y), i_star, inst)


# ---------------------------------------------------------------------------
# random families
# ---------------------------------------------------------------------------

FAMILIES = ("uniform-hinge", "weighted-hinge", "scale-free", "mts", "tree-step")


def random_tree(n_leaves: int, rng: np.random.Generator, max_vertices: int = 12) -> TreeMetric:
    """Random recursive tree with exactly ``n_leaves`` leaves and unit-scale weights."""
    if n_leaves < 1:
        raise InputError("need at least one leaf")
    lo = n_leaves + 1
    if lo > max_vertices:
        raise InputError("too many leaves for the vertex budget")
    while True:
        nv = int(rng.integers(lo, max_vertices + 1))
        parents = [-1] + [int(rng.integers(0, v)) for v in range(1, nv)]
        has_child = set(parents[1:])
        leaves = [v for v in range(nv) if v not in has_child]
        if len(leaves) == n_leaves:
            weights = [0.0] + [float(w) for w in rng.uniform(0.25, 1.5, nv - 1)]
            return TreeMetric(parents, weights, leaves)


def _hinges(n, m, rng):
    return [RequestPhase(int(rng.integers(n)), float(rng.uniform(0.2, 1.0)),
                         float(rng.uniform(0.5, 3.0))) for _ in range(m)]


def _paging_hinges(n, m, rng):
    """Random points asking for about 1/(n-1) of the mass (fractional paging, n-1 slots)."""
    top = 1.0 / max(n - 1, 1)
    return [RequestPhase(int(rng.integers(n)), float(min(1.0, top * rng.uniform(0.9, 1.1))),
                         float(rng.uniform(1.0, 4.0))) for _ in range(m)]


def random_instance(n: int, phases: int, seed: int, family: str = "weighted-hinge",
                    return_meta: bool = False, block: int = 3):
    """Reproducible random instance of the given family.

    ``scale-free`` emits fractional 2-server requests under offsets that are
    re-drawn every ``block`` requests; ``phases`` then counts requests.
    """
    rng = np.random.default_rng(seed)
    meta: dict = {"family": family, "seed": seed}
    if family == "uniform-hinge":
        inst = Instance(StarMetric(np.ones(n)), _hinges(n, phases, rng))
    elif family == "weighted-hinge":
        w = rng.uniform(0.5, 2.0, n)
        inst = Instance(StarMetric(w), _paging_hinges(n, phases, rng))
    elif family == "scale-free":
        metric = StarMetric(np.ones(n))
        out, offsets = [], []
        for lo in range(0, phases, block):
            a = rng.dirichlet(np.ones(n)) * rng.uniform(0.0, 0.9)
            reqs = [int(r) for r in rng.integers(0, n, min(block, phases - lo))]
            enc = encode_kserver(reqs, 2 if n > 2 else 1, metric, a, hold_T=5.0)
            out.extend(enc.instance.phases)
            offsets.append(a.tolist())
        inst = Instance(metric, out)
        meta["offsets"] = offsets
    elif family == "mts":
        costs = []
        for _ in range(phases):
            c = rng.uniform(0.0, 1.0, n) * (rng.random(n) < 0.5)
            costs.append(c.tolist())
        inst = encode_mts(costs, StarMetric(np.ones(n))).instance
        meta["costs"] = costs
    elif family == "tree-step":
        tree = random_tree(n, rng, max(12, n + 1))
        out = []
        for _ in range(phases):
            k = int(rng.integers(1, 4))
            th = np.sort(rng.uniform(0.05, 1.0, k))
            vals = np.sort(rng.uniform(0.05, 1.0, k))[::-1]
            out.append(StepPhase(int(rng.integers(n)), tuple(zip(th.tolist(), vals.tolist())),
                                 float(rng.uniform(0.5, 3.0))))
        inst = Instance(tree, out)
    else:
        raise InputError(f"unknown family {family!r}; choose from {FAMILIES}")
    return (inst, meta) if return_meta else inst


def random_offline_path(inst: Instance, rng: np.random.Generator) -> list:
    """Random piecewise-constant offline trajectory: a new point every few phases."""
    n = inst.n
    out, y = [], rng.dirichlet(np.ones(n))
    for _ in inst.phases:
        if rng.random() < 0.4:
            y = rng.dirichlet(np.ones(n))
        out.append(y.copy())
    return out


def stress_offline_path(inst: Instance, run, rng: np.random.Generator, eps: float = 1e-3) -> list:
    """Offline points with one coordinate just around the online baseline b_i.

    The baseline is read at each phase start; the remaining mass is spread
    over the other points at random.  Stresses the [b_i - y_i]_+ kinks.
    """
    n = inst.n
    starts, prev = {}, run.trace[0]
    for rec in run.trace:
        if rec.phase >= 0 and rec.phase not in starts:
            starts[rec.phase] = prev
        prev = rec
    out, last = [], run.trace[0]
    for k, _ in enumerate(inst.phases):
        rec = starts.get(k, last)
        last = rec
        i = int(rng.integers(n))
        yi = float(np.clip(rec.aux[i] + rng.uniform(-eps, eps), 0.0, 1.0))
        rest = rng.dirichlet(np.ones(n - 1)) * (1.0 - yi) if n > 1 else np.zeros(0)
        out.append(np.insert(rest, i, yi))
    return out
