"""Adaptive RK4 with regime-switch and stopping events for the star algorithms.

Both star algorithms share the same structure: a state (x, b), a hinge
charge alpha = [s - x_r]_+ that decreases as x_r grows, and a baseline
update that is discontinuous across a switching surface g(x, b) = 0.  The
integrator never steps across the surface.  A crossing is located by
bisection on the step length, and once on the surface the dynamics either
pass through (transversal crossing) or slide along it (Filippov sliding
mode) depending on the side fields.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CostLedger, InvariantError, TraceRecord


class StepUnderflow(RuntimeError):
    """The adaptive step fell below ``h_min``."""


@dataclass
class IntegratorConfig:
    h_init: float = 1e-3
    h_min: float = 1e-12
    h_max: float = 50.0
    tol: float = 1e-2            # max coordinate change per step, relative to the scale S
    bisect_tol: float = 1e-10    # time resolution of located events
    eps_hold: float = 1e-8       # phase ends once the charge drops to this level
    surface_tol: float = 1e-12   # |g| below this counts as on the switching surface
    err_tol: float = 1e-8        # step-doubling error allowed per unit of time
    record: bool = True          # keep every accepted step in the trace


class PhaseDynamics:
    """Interface implemented by the per-phase dynamics of each star algorithm.

    ``mode`` is +1 / -1 for the two sides of the switching surface and 0 for
    motion along it.
    """

    r: int
    s: float
    weights: np.ndarray

    def alpha(self, x) -> float:
        return max(self.s - x[self.r], 0.0)

    def field(self, x, b, mode):  # pragma: no cover - abstract
        raise NotImplementedError

    def switch(self, x, b) -> float:  # pragma: no cover - abstract
        raise NotImplementedError

    def surface_mode(self, x, b) -> int:
        """Mode to follow from a point on the switching surface."""
        gp = self._switch_rate(x, b, +1)
        gm = self._switch_rate(x, b, -1)
        if gp < 0 < gm or (gp <= 0 and gm >= 0):
            return 0
        if gp > 0:
            return +1
        return -1

    def _switch_rate(self, x, b, mode) -> float:  # pragma: no cover - abstract
        raise NotImplementedError

    def project(self, x, b):
        """Snap the state exactly onto the switching surface (sliding mode)."""
        return x, b

    def scale(self, x, b) -> float:
        return float(np.sum(b - x))

    def check(self, x, b) -> None:
        pass

    def classify(self, x, b) -> int:
        g = self.switch(x, b)
        if abs(g) <= self.surface_tol_abs(x, b):
            return self.surface_mode(x, b)
        return 1 if g > 0 else -1

    def surface_tol_abs(self, x, b) -> float:
        return 1e-12


def _rates(dyn: PhaseDynamics, x, b, mode):
    dx, db = dyn.field(x, b, mode)
    w = dyn.weights
    wdx = w * dx
    return dx, db, dyn.alpha(x), float(np.abs(wdx).sum()), float(wdx[wdx > 0].sum())


def rk4_step(dyn: PhaseDynamics, x, b, h, mode, k1=None):
    """One classical RK4 step; returns new (x, b) and ledger increments."""
    if k1 is None:
        k1 = _rates(dyn, x, b, mode)
    dx1, db1, a1, m1, p1 = k1
    dx2, db2, a2, m2, p2 = _rates(dyn, x + 0.5 * h * dx1, b + 0.5 * h * db1, mode)
    dx3, db3, a3, m3, p3 = _rates(dyn, x + 0.5 * h * dx2, b + 0.5 * h * db2, mode)
    dx4, db4, a4, m4, p4 = _rates(dyn, x + h * dx3, b + h * db3, mode)
    c = h / 6.0
    xn = x + c * (dx1 + 2 * dx2 + 2 * dx3 + dx4)
    bn = b + c * (db1 + 2 * db2 + 2 * db3 + db4)
    serv = c * (a1 + 2 * a2 + 2 * a3 + a4)
    move = c * (m1 + 2 * m2 + 2 * m3 + m4)
    pos = c * (p1 + 2 * p2 + 2 * p3 + p4)
    # kill drift of sum(x) along the direction of motion
    resid = xn.sum() - x.sum()
    if resid != 0.0:
        mag = np.abs(dx1)
        tot = mag.sum()
        if tot > 0:
            xn = xn - resid * mag / tot
    return xn, bn, serv, move, pos


def _bisect(pred, h_lo, h_hi, tol):
    """Largest h in [h_lo, h_hi] (to tolerance) with pred(h) False; pred(h_hi) is True."""
    while h_hi - h_lo > tol:
        mid = 0.5 * (h_lo + h_hi)
        if pred(mid):
            h_hi = mid
        else:
            h_lo = mid
    return h_lo, h_hi


@dataclass
class PhaseResult:
    x: np.ndarray
    b: np.ndarray
    duration: float
    service: float
    movement: float
    pos_movement: float
    steps: int


def integrate_phase(dyn: PhaseDynamics, x, b, T: float, cfg: IntegratorConfig,
                    t0: float = 0.0, phase_idx: int = 0, trace: list | None = None,
                    totals=(0.0, 0.0, 0.0)) -> PhaseResult:
    """Integrate one phase until ``T`` elapses or the charge falls to ``eps_hold``.

    ``totals`` are the cumulative (service, movement, positive movement)
    before the phase; trace records carry cumulative values.
    """
    x = np.array(x, dtype=float)
    b = np.array(b, dtype=float)
    serv0, move0, pos0 = totals
    t = 0.0
    service = movement = pos_movement = 0.0
    steps = 0
    if dyn.alpha(x) <= cfg.eps_hold:
        return PhaseResult(x, b, 0.0, 0.0, 0.0, 0.0, 0)

    mode = dyn.classify(x, b)
    if mode == 0:
        x, b = dyn.project(x, b)
    h = cfg.h_init
    while t < T:
        k1 = _rates(dyn, x, b, mode)
        speed = max(float(np.abs(k1[0]).max()), float(np.abs(k1[1]).max()), 1e-300)
        limit = cfg.tol * dyn.scale(x, b)
        h = min(max(h, cfg.h_min), limit / speed, cfg.h_max, T - t)
        while True:
            xn, bn, ds, dm, dp = rk4_step(dyn, x, b, h, mode, k1)
            change = max(float(np.abs(xn - x).max()), float(np.abs(bn - b).max()))
            # the gaps b - x decay at stiff rates; never let one shrink by half in a step
            gaps_ok = bool(np.all(bn - xn > 0.5 * (b - x)))
            if (change <= 1.5 * limit and gaps_ok) or h <= cfg.h_min:
                if h <= cfg.h_min:
                    break
                # step doubling: two half steps estimate the local error
                full = (xn, bn, ds, dm, dp)
                xh, bh, s1, m1, p1 = rk4_step(dyn, x, b, 0.5 * h, mode, k1)
                xn, bn, s2, m2, p2 = rk4_step(dyn, xh, bh, 0.5 * h, mode)
                ds, dm, dp = s1 + s2, m1 + m2, p1 + p2
                err = max(float(np.abs(xn - full[0]).max()), float(np.abs(bn - full[1]).max()),
                          abs(ds - full[2]), abs(dm - full[3]), abs(dp - full[4]))
                if err <= cfg.err_tol * h and bool(np.all(bn - xn > 0.5 * (b - x))):
                    break
            h *= 0.5
        if h < cfg.h_min * 0.999 and T - t > cfg.h_min:
            raise StepUnderflow(f"step {h:.3e} below h_min at t={t0 + t:.6g}; "
                                f"x={x.tolist()} b={b.tolist()}")

        end_phase = False
        new_mode = mode
        # charge reaching the hold threshold
        if dyn.alpha(xn) <= cfg.eps_hold:
            def hit(hh):
                return dyn.alpha(rk4_step(dyn, x, b, hh, mode, k1)[0]) <= cfg.eps_hold
            _, h_hi = _bisect(hit, 0.0, h, cfg.bisect_tol)
            h = h_hi
            xn, bn, ds, dm, dp = rk4_step(dyn, x, b, h, mode, k1)
            end_phase = True
        # crossing of the switching surface
        if mode != 0:
            gn = dyn.switch(xn, bn)
            if gn * mode < 0:
                def crossed(hh):
                    xx, bb = rk4_step(dyn, x, b, hh, mode, k1)[:2]
                    return dyn.switch(xx, bb) * mode < 0
                h_lo, h_hi = _bisect(crossed, 0.0, h, cfg.bisect_tol)
                xs, bs = rk4_step(dyn, x, b, h_lo, mode, k1)[:2]
                new_mode = dyn.surface_mode(xs, bs)
                if new_mode == mode:
                    new_mode = -mode
                # sliding: stop on the surface; transversal: step just across it
                h = h_lo if new_mode == 0 else h_hi
                xn, bn, ds, dm, dp = rk4_step(dyn, x, b, h, mode, k1)
                end_phase = False
                if new_mode == 0:
                    xn, bn = dyn.project(xn, bn)
        else:
            new_mode = dyn.surface_mode(xn, bn)
            if new_mode == 0:
                xn, bn = dyn.project(xn, bn)

        if h <= 0.0:
            x, b, mode = xn, bn, new_mode
            continue
        dyn.check(xn, bn)
        x, b = xn, bn
        t += h
        service += ds
        movement += dm
        pos_movement += dp
        steps += 1
        mode = new_mode
        if trace is not None and (cfg.record or end_phase or t >= T):
            trace.append(TraceRecord(t0 + t, phase_idx, x.copy(), b.copy(), dyn.alpha(x),
                                     serv0 + service, move0 + movement, pos0 + pos_movement))
        if end_phase:
            break
        h *= 2.0
    if service < 0 or movement < 0:
        raise InvariantError("negative accumulated cost")
    return PhaseResult(x, b, t, service, movement, pos_movement, steps)


@dataclass
class RunResult:
    trace: list
    ledger: CostLedger
    x: np.ndarray
    aux: np.ndarray
    pos_movement: float = 0.0
    steps: int = 0


def run_phases(inst, make_dynamics, x, b, cfg: IntegratorConfig) -> RunResult:
    """Drive ``integrate_phase`` over every phase of a star instance."""
    from .core import InputError, RequestPhase

    ledger = CostLedger()
    trace = [TraceRecord(0.0, -1, x.copy(), b.copy(), 0.0, 0.0, 0.0, 0.0)]
    t = serv = move = pos = 0.0
    steps = 0
    for k, ph in enumerate(inst.phases):
        if not isinstance(ph, RequestPhase):
            raise InputError("star algorithms accept hinge phases only")
        dyn = make_dynamics(ph)
        res = integrate_phase(dyn, x, b, ph.T, cfg, t0=t, phase_idx=k, trace=trace,
                              totals=(serv, move, pos))
        x, b = res.x, res.b
        t += res.duration
        serv += res.service
        move += res.movement
        pos += res.pos_movement
        steps += res.steps
        ledger.add(k, res.duration, res.service, res.movement)
    return RunResult(trace, ledger, x, b, pos, steps)
