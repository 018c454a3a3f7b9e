"""Instance transformations: cost normalization, monotonicity flip, discretization,
non-negativity penalties, and encoders for metrical task systems and
fractional k-server.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import Instance, InputError, RequestPhase, StarMetric, TraceRecord


# ---------------------------------------------------------------------------
# hinge normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Hinge:
    """Cost ``slope * [s - x]_+``; ``slope == 0`` is the zero cost."""

    s: float
    slope: float = 1.0

    def __call__(self, x):
        return self.slope * max(self.s - x, 0.0)


def linearize_convex(c: Callable[[float], float], x_r: float,
                     dc: Callable[[float], float] | None = None,
                     h: float = 1e-7) -> Hinge:
    """Tangent hinge of a convex non-increasing cost at ``x_r``.

    Returns the intercept (clamped to [0, 1]) of the tangent line and its
    absolute slope, which becomes the duration multiplier of a unit hinge.
    The derivative is taken from ``dc`` when given, else by a central
    difference with step ``h``.
    """
    value = float(c(x_r))
    if not np.isfinite(value):
        raise InputError(f"cost is not finite at {x_r}")
    slope = float(dc(x_r)) if dc is not None else (c(x_r + h) - c(x_r - h)) / (2 * h)
    if slope > 0:
        raise InputError(f"cost is increasing at {x_r} (slope {slope:.3g})")
    if slope == 0:
        return Hinge(0.0, 0.0)
    m = -slope
    return Hinge(float(min(max(x_r + value / m, 0.0), 1.0)), m)


def hinge_phase(r: int, hinge: Hinge, T: float) -> RequestPhase:
    """Unit-slope phase equivalent to ``hinge`` applied for ``T`` time units."""
    if hinge.slope == 0:
        return RequestPhase(r, 0.0, T)
    return RequestPhase(r, hinge.s, T * hinge.slope)


def split_single_location(costs: Sequence[Hinge], T: float, N: int) -> list:
    """Replace a separable cost over all points by N cyclic rounds of single-point phases."""
    if N < 1:
        raise InputError("repetition count must be at least 1")
    out = []
    for _ in range(N):
        for i, hinge in enumerate(costs):
            out.append(hinge_phase(i, hinge, T / N))
    return out


# ---------------------------------------------------------------------------
# monotonicity flip
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlipMap:
    """Affine bijection x_hat = (1 - x) / (n - 1) between the two cost orientations."""

    n: int

    def forward(self, x) -> np.ndarray:
        return (1.0 - np.asarray(x, dtype=float)) / (self.n - 1)

    def backward(self, xh) -> np.ndarray:
        return 1.0 - (self.n - 1) * np.asarray(xh, dtype=float)

    @property
    def scale(self) -> float:
        """Cost factor of the transformed instance relative to the original."""
        return 1.0 / (self.n - 1)


def flip_monotonicity(inst: Instance) -> tuple[Instance, FlipMap]:
    """Turn non-decreasing hinges [x_r - s]_+ into non-increasing ones.

    Each phase keeps its point and duration; the intercept becomes
    (1 - s) / (n - 1).
    """
    n = inst.n
    if n < 2:
        raise InputError("flipping needs at least two points")
    fm = FlipMap(n)
    phases = [RequestPhase(ph.r, (1.0 - ph.s) / (n - 1), ph.T) for ph in inst.phases]
    x0 = fm.forward(inst.start())
    return Instance(inst.metric, phases, x0, "decreasing"), fm


def increasing_charge(ph: RequestPhase, xr: float) -> float:
    return max(xr - ph.s, 0.0)


# ---------------------------------------------------------------------------
# continuous -> discrete
# ---------------------------------------------------------------------------

@dataclass
class DiscreteAnswer:
    points: list            # one allocation per phase
    times: list             # time of the chosen sample
    movement: float         # sum of jump norms


def discretize_trajectory(inst: Instance, trace: Sequence[TraceRecord]) -> DiscreteAnswer:
    """Per phase, pick the recorded state with the smallest charge (earliest on ties).

    A phase without samples of its own (it ended immediately) uses the state
    at its start.
    """
    if not trace:
        raise InputError("empty trace")
    by_phase: dict = {}
    for rec in trace:
        by_phase.setdefault(rec.phase, []).append(rec)
    prev = inst.start()
    last = trace[0]
    points, times = [], []
    movement = 0.0
    for k, ph in enumerate(inst.phases):
        window = by_phase.get(k) or [last]
        charges = np.array([ph.charge(float(rec.x[ph.r])) for rec in window])
        best = window[int(np.argmin(charges))]
        points.append(best.x.copy())
        times.append(best.t)
        movement += inst.metric.norm(best.x - prev)
        prev = best.x
        last = window[-1]
    return DiscreteAnswer(points, times, movement)


# ---------------------------------------------------------------------------
# non-negativity penalty
# ---------------------------------------------------------------------------

def nonneg_penalty(inst: Instance, a: float = 1e3) -> Instance:
    """Follow every phase by one penalty phase a*[-x_i]_+ per point.

    A penalty a*[0 - x_i]_+ over time T is the unit hinge at intercept 0
    over time a*T.  ``a == 0`` returns the instance unchanged.
    """
    if a < 0:
        raise InputError("penalty slope must be non-negative")
    if a == 0:
        return Instance(inst.metric, list(inst.phases), inst.x0, inst.monotone)
    phases = []
    for ph in inst.phases:
        phases.append(ph)
        phases.extend(RequestPhase(i, 0.0, a * ph.T) for i in range(inst.n))
    return Instance(inst.metric, phases, inst.x0, inst.monotone)


# ---------------------------------------------------------------------------
# metrical task systems
# ---------------------------------------------------------------------------

@dataclass
class MTSEncoding:
    instance: Instance
    flip: FlipMap
    blocks: list            # phase-index range of each MTS step

    def to_mts(self, xh) -> np.ndarray:
        return self.flip.backward(xh)

    def step_points(self, path) -> list:
        """MTS-domain state per step from one encoded allocation per phase.

        Steps that produced no phase inherit the previous state.
        """
        out, prev = [], self.flip.backward(self.instance.start())
        for lo, hi in self.blocks:
            if hi > lo:
                prev = self.flip.backward(path[hi - 1])
            out.append(prev)
        return out


def encode_mts(costs: Sequence[Sequence[float]], metric: StarMetric | None = None,
               x0=None) -> MTSEncoding:
    """Encode linear task costs <c_t, x> as non-increasing hinge phases.

    c_{t,i} x_i is the non-decreasing hinge [x_i - 0]_+ held for c_{t,i}
    time units, which the monotonicity flip turns into the hinge at
    intercept 1/(n-1).  Zero entries emit nothing.
    """
    costs = [np.asarray(c, dtype=float) for c in costs]
    if metric is None:
        if not costs:
            raise InputError("need a metric or at least one cost vector")
        metric = StarMetric(np.full(len(costs[0]), 0.5))
    n = metric.n
    if n < 2:
        raise InputError("task systems need at least two states")
    phases, blocks = [], []
    for c in costs:
        if c.shape != (n,) or np.any(c < 0):
            raise InputError("cost vectors must be non-negative with one entry per state")
        lo = len(phases)
        phases.extend(RequestPhase(i, 0.0, float(v)) for i, v in enumerate(c) if v > 0)
        blocks.append((lo, len(phases)))
    raw = Instance(metric, phases, x0, "increasing")
    flipped, fm = flip_monotonicity(raw)
    return MTSEncoding(flipped, fm, blocks)


def mts_cost(metric: StarMetric, costs: Sequence[Sequence[float]], states: Sequence,
             x0) -> tuple[float, float]:
    """(service, movement) of a fractional task-system schedule, evaluated directly."""
    prev = np.asarray(x0, dtype=float)
    service = movement = 0.0
    for c, x in zip(costs, states):
        x = np.asarray(x, dtype=float)
        movement += metric.norm(x - prev)
        service += float(np.dot(c, np.maximum(x, 0.0)))
        prev = x
    return service, movement


# ---------------------------------------------------------------------------
# fractional k-server
# ---------------------------------------------------------------------------

@dataclass
class KServerEncoding:
    instance: Instance
    k: int
    offsets: np.ndarray
    request_phases: list    # index of the request phase of each request

    @property
    def scale(self) -> float:
        return 1.0 - float(self.offsets.sum())

    def recover(self, x) -> np.ndarray:
        return recover_servers(x, self.offsets, self.k)


def recover_servers(x, offsets, k: int) -> np.ndarray:
    """Server mass z = k (x - a) / s from an offset-encoded allocation."""
    a = np.asarray(offsets, dtype=float)
    return k * (np.asarray(x, dtype=float) - a) / (1.0 - a.sum())


def encode_kserver(requests: Sequence[int], k: int, metric: StarMetric,
                   offsets=None, hold_T: float = 200.0, z0=None) -> KServerEncoding:
    """Encode fractional k-server requests as hold phases.

    The infinite cost of x_r < 1/k is emulated by one long hinge phase at
    that threshold; the algorithm stops it once the charge reaches its
    hold level.  With offsets a, the allocation lives in the region
    a + s * simplex (s = 1 - sum a): requests force x_r >= a_r + s/k and
    floor phases forcing x_j >= a_j follow every request.
    """
    n = metric.n
    if k < 1:
        raise InputError("k must be at least 1")
    a = np.zeros(n) if offsets is None else np.asarray(offsets, dtype=float)
    if a.shape != (n,) or np.any(a < 0) or np.any(a > 1):
        raise InputError("offsets must lie in [0, 1], one per point")
    s = 1.0 - float(a.sum())
    if not s > 0:
        raise InputError(f"offsets sum to {a.sum():.6g}; need < 1")
    z0 = np.full(n, float(k) / n) if z0 is None else np.asarray(z0, dtype=float)
    x0 = a + s * z0 / k
    phases, req_idx = [], []
    for r in requests:
        if not 0 <= r < n:
            raise InputError(f"request {r} outside the metric")
        req_idx.append(len(phases))
        phases.append(RequestPhase(int(r), float(min(a[r] + s / k, 1.0)), hold_T))
        phases.extend(RequestPhase(j, float(a[j]), hold_T) for j in range(n) if a[j] > 0)
    return KServerEncoding(Instance(metric, phases, x0), k, a, req_idx)
