"""Rate/baseline dynamics for MAP on uniform metrics (unit-weight stars).

Each point carries a baseline b_i > x_i; the gap rho_i = b_i - x_i is the
rate at which x_i is drained when another point is charged, and
S = sum(rho) acts as the current scale estimate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Instance, InputError, InvariantError, StarMetric
from .integrator import IntegratorConfig, PhaseDynamics, RunResult, run_phases


@dataclass
class UniformState:
    x: np.ndarray
    b: np.ndarray

    @property
    def rho(self) -> np.ndarray:
        return self.b - self.x

    @property
    def S(self) -> float:
        return float(self.rho.sum())

    @property
    def delta(self) -> float:
        return 1.0 / len(self.x)

    @classmethod
    def initial(cls, x) -> "UniformState":
        x = np.asarray(x, dtype=float)
        return cls(x.copy(), x + 1.0 / len(x))


def drain_shares(rho: np.ndarray) -> np.ndarray:
    """(rho_i + delta S) / (2S); these always sum to 1."""
    S = rho.sum()
    if not S > 0:
        raise InvariantError(f"scale S={S} must be positive")
    return (rho + S / len(rho)) / (2.0 * S)


def uniform_derivative(state: UniformState, r: int, alpha: float):
    """Instantaneous (x', b') when charge ``alpha`` is applied at point ``r``."""
    if alpha < 0:
        raise InputError("charge must be non-negative")
    rho = state.b - state.x
    k = drain_shares(rho)
    dx = -alpha * k
    dx[r] += alpha
    db = np.zeros_like(dx)
    if alpha > rho[r]:
        db[r] = alpha
    elif alpha < rho[r]:
        db[r] = -alpha
    return dx, db


def rho_derivative(state: UniformState, r: int, alpha: float) -> np.ndarray:
    """Closed form of rho' used as a cross-check on uniform_derivative."""
    rho = state.b - state.x
    out = alpha * drain_shares(rho)
    if rho[r] > alpha:
        out[r] -= 2 * alpha
    return out


class UniformPhase(PhaseDynamics):
    def __init__(self, r: int, s: float, weights: np.ndarray):
        self.r, self.s, self.weights = r, s, weights

    def field(self, x, b, mode):
        alpha = self.alpha(x)
        rho = b - x
        S = rho.sum()
        dx = (-alpha / (2.0 * S)) * (rho + S / len(rho))
        dx[self.r] += alpha
        db = np.zeros_like(dx)
        db[self.r] = alpha * mode
        return dx, db

    def switch(self, x, b):
        return self.alpha(x) - (b[self.r] - x[self.r])

    def _switch_rate(self, x, b, mode):
        return -self.alpha(x) * mode

    def project(self, x, b):
        b = b.copy()
        b[self.r] = x[self.r] + self.alpha(x)
        return x, b

    def surface_tol_abs(self, x, b):
        return 1e-12 * max(1.0, float(np.sum(b - x)))

    def check(self, x, b):
        gap = b - x
        if np.any(gap <= -1e-12):
            raise InvariantError(f"baseline fell below allocation: b-x={gap.tolist()}")


def _check_uniform(inst: Instance) -> StarMetric:
    m = inst.metric
    if not isinstance(m, StarMetric) or not m.is_uniform():
        raise InputError("the uniform algorithm needs a star with equal weights")
    return m


def run_uniform(inst: Instance, init: UniformState | None = None,
                cfg: IntegratorConfig | None = None) -> RunResult:
    """Integrate the uniform-metric algorithm over every phase of ``inst``."""
    metric = _check_uniform(inst)
    cfg = cfg or IntegratorConfig()
    state = init or UniformState.initial(inst.start())
    if np.any(state.b <= state.x):
        raise InvariantError("initial baseline must exceed the allocation")
    w = metric.weights
    return run_phases(inst, lambda ph: UniformPhase(ph.r, ph.s, w),
                      state.x.copy(), state.b.copy(), cfg)
