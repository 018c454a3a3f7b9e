"""Refined algorithm on weighted stars: mirror descent with a time-varying regularizer.

The regularizer depends on the baseline b, so the Hessian is diagonal with
entries w_i / (eta (b_i - x_i + delta S)) and the induced dynamics move x
at a speed set by the gap b_r - x_r, independent of the charge itself.
The baseline absorbs the charge: it rises at rate alpha / w_r while the
gap is at most 2 alpha, and otherwise contracts at rate gap / (2 w_r).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Instance, InputError, InvariantError, StarMetric
from .integrator import IntegratorConfig, PhaseDynamics, RunResult, run_phases


@dataclass(frozen=True)
class WStarParams:
    epsilon: float
    n: int

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InputError("epsilon must be positive")
        if self.n < 1:
            raise InputError("star size must be positive")

    @property
    def delta(self) -> float:
        # 1 / max(n^2, e^{3/eps}) computed in log space to avoid overflow
        return math.exp(-max(2.0 * math.log(self.n), 3.0 / self.epsilon)) if self.n > 1 \
            else math.exp(-3.0 / self.epsilon)

    @property
    def log_ratio(self) -> float:
        """log((1 + delta) / delta)."""
        d = self.delta
        return math.log1p(d) - math.log(d)

    @property
    def eta(self) -> float:
        return (1.0 + self.delta) * self.log_ratio

    @property
    def beta(self) -> float:
        return 1.0 + 2.0 / self.eta

    def as_dict(self) -> dict:
        return {"epsilon": self.epsilon, "n": self.n, "delta": self.delta,
                "eta": self.eta, "beta": self.beta}


@dataclass
class WStarState:
    x: np.ndarray
    b: np.ndarray

    @property
    def S(self) -> float:
        return float(np.sum(self.b - self.x))

    def gamma(self, weights, delta) -> float:
        S = self.S
        return float(np.sum((self.b - self.x + delta * S) / (weights * S)))

    @classmethod
    def initial(cls, x) -> "WStarState":
        x = np.asarray(x, dtype=float)
        return cls(x.copy(), np.minimum(2.0, x + 1.0 / len(x)))


def _x_rate(x, b, w, r, eta, delta):
    gap = b - x
    S = gap.sum()
    share = (gap + delta * S) / (w * S)
    gamma = share.sum()
    dx = -share / gamma
    dx[r] += 1.0
    return (eta * gap[r] / w[r]) * dx


def wstar_derivative(state: WStarState, weights, params: WStarParams, r: int, alpha: float):
    """Instantaneous (x', b') for a positive charge ``alpha`` at point ``r``."""
    if not alpha > 0:
        raise InputError("charge must be positive")
    x, b = state.x, state.b
    w = np.asarray(weights, dtype=float)
    gap = b - x
    if np.any(gap <= 0):
        raise InvariantError("baseline must exceed allocation")
    dx = _x_rate(x, b, w, r, params.eta, params.delta)
    db = np.zeros_like(dx)
    if gap[r] <= 2 * alpha:
        db[r] = alpha / w[r]
    else:
        db[r] = -gap[r] / (2 * w[r])
    return dx, db


def md_consistency_check(state: WStarState, weights, params: WStarParams, r: int,
                         alpha: float = 1.0) -> float:
    """Max-norm residual of  H x' - f + lambda * 1  for the induced dynamics.

    H is the diagonal Hessian of the regularizer, f the control vector and
    lambda the normal-cone multiplier of the simplex.
    """
    w = np.asarray(weights, dtype=float)
    x, b = state.x, state.b
    eta, delta = params.eta, params.delta
    dx, _ = wstar_derivative(state, w, params, r, alpha)
    gap = b - x
    S = gap.sum()
    hess = w / (eta * (gap + delta * S))
    a = gap[r] / (gap[r] + delta * S)
    f = np.zeros_like(x)
    f[r] = a
    gamma = float(np.sum((gap + delta * S) / (w * S)))
    lam = a * (gap[r] + delta * S) / (gamma * w[r] * S)
    return float(np.max(np.abs(hess * dx - f + lam)))


class WStarPhase(PhaseDynamics):
    def __init__(self, r: int, s: float, weights: np.ndarray, params: WStarParams,
                 excess: np.ndarray | None = None):
        self.r, self.s, self.weights = r, s, weights
        self.eta, self.delta = params.eta, params.delta
        # running max of [-x_i]_+; b_r may rise to 2 - x_r, which exceeds 2 by that much
        self.excess = np.zeros(len(weights)) if excess is None else excess

    def field(self, x, b, mode):
        r, w = self.r, self.weights
        dx = _x_rate(x, b, w, r, self.eta, self.delta)
        db = np.zeros_like(dx)
        gap_r = b[r] - x[r]
        if mode < 0:
            db[r] = self.alpha(x) / w[r]
        elif mode > 0:
            db[r] = -gap_r / (2 * w[r])
        else:
            db[r] = -dx[r]       # keeps b_r - x_r - 2 alpha fixed
        return dx, db

    def switch(self, x, b):
        return (b[self.r] - x[self.r]) - 2.0 * self.alpha(x)

    def _switch_rate(self, x, b, mode):
        dx, db = self.field(x, b, mode)
        return db[self.r] + dx[self.r]

    def project(self, x, b):
        b = b.copy()
        b[self.r] = x[self.r] + 2.0 * self.alpha(x)
        return x, b

    def surface_tol_abs(self, x, b):
        return 1e-12 * max(1.0, float(np.sum(b - x)))

    def check(self, x, b):
        gap = b - x
        if np.any(gap <= -1e-12):
            raise InvariantError(f"baseline fell below allocation: b-x={gap.tolist()}")
        np.maximum(self.excess, -x, out=self.excess)
        if np.any(b > 2.0 + self.excess + 1e-9):
            raise InvariantError(f"baseline exceeded 2 - min x: b={b.tolist()}")


def run_wstar(inst: Instance, params: WStarParams | None = None,
              init: WStarState | None = None, cfg: IntegratorConfig | None = None,
              epsilon: float = 0.25) -> RunResult:
    m = inst.metric
    if not isinstance(m, StarMetric):
        raise InputError("the weighted-star algorithm needs a star metric")
    params = params or WStarParams(epsilon, m.n)
    cfg = cfg or IntegratorConfig()
    state = init or WStarState.initial(inst.start())
    if np.any(state.b <= state.x) or np.any(state.b > 2.0):
        raise InvariantError("initial baseline must lie in (x_i, 2]")
    w = m.weights
    excess = np.maximum(-state.x, 0.0)
    return run_phases(inst, lambda ph: WStarPhase(ph.r, ph.s, w, params, excess),
                      state.x.copy(), state.b.copy(), cfg)
