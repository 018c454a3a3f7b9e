"""Potential functions of the competitive analyses and a monitor that certifies
their differential inequalities along joint online/offline trajectories.

Within a phase the offline allocation y is fixed, so every inequality is
checked in integrated form over each accepted step:  the online costs
come from the run's ledger (exact integrals), the offline service is the
constant offline rate times the step length, and potential changes are
endpoint differences.  Offline moves happen only at phase starts and are
checked against the Lipschitz constant of the potential in y.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Instance, InvariantError, offline_cost_rate
from .tree import as_tree
from .wstar import WStarParams, WStarState, wstar_derivative

TOL_INEQ = 1e-5
ABS_SLACK = 1e-10


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

def potential_uniform(x, b, y) -> dict:
    x, b, y = (np.asarray(v, dtype=float) for v in (x, b, y))
    n = len(x)
    delta = 1.0 / n
    rho = b - x
    P = 0.0
    for i in range(n):
        if x[i] >= y[i]:
            u = b[i] - y[i]
            arg = (1 + delta) * u / (rho[i] + delta * u)
            if not arg > 0:
                raise InvariantError(f"log argument {arg} not positive at coordinate {i}")
            P += u * math.log(arg)
    Q = float(np.maximum(rho + 2 * (x - y), 0.0).sum())
    return {"P": P, "Q": Q, "Theta": 12 * P + 6 * Q}


def potential_wstar(x, b, y, weights, params: WStarParams) -> dict:
    x, b, y, w = (np.asarray(v, dtype=float) for v in (x, b, y, weights))
    n, delta, eta, beta = len(x), params.delta, params.eta, params.beta
    m = b - np.minimum(x, y)
    num = np.maximum(b - y, 0.0) + delta * m
    den = b - x + delta * m
    terms = (b - y + delta * m) * np.log(num / den) - (1 - n * delta) * x + y + b
    D = beta / eta * float(np.dot(w, terms))
    Psi = 2 * eta * float(np.dot(w, b))
    return {"D": D, "Psi": Psi}


def potential_tree(tree, x, y) -> dict:
    tree = as_tree(tree)
    xu = tree.expand(x)
    yu = tree.expand(y)
    idx = tree.nonroot
    w = tree.weights[idx]
    P = float(np.dot(w, np.maximum(xu[idx] - yu[idx], 0.0)))
    Q = -float(np.dot(tree.n_leaves_below[idx] * w, xu[idx]))
    return {"P": P, "Q": Q}


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------

def uniform_constant(n: int) -> float:
    """Competitive factor assembled from the two uniform-case lemmas.

    12 P' <= 12 (log((1+d)/d) + 3) Off' - 6 alpha min(L/S, 1) and
    6 Q' <= 24 Off' - 3 alpha [1 - 2L/S]_+, with online cost <= 3 alpha.
    """
    d = 1.0 / n
    return 12 * (math.log((1 + d) / d) + 3) + 24


def uniform_lipschitz(n: int) -> float:
    """Bound on |dTheta/dy_i| for unit weights."""
    d = 1.0 / n
    return 12 * (math.log((1 + d) / d) + 1) + 12


# ---------------------------------------------------------------------------
# Lipschitz probes for D
# ---------------------------------------------------------------------------

def wstar_lipschitz(params: WStarParams) -> float:
    """Exact sup of |dD/dy_i| / w_i, attained for y_i > b_i.

    Equals beta (L + 1) / eta with L = log((1+d)/d), which exceeds 1 + eps
    by about 2 eps^2 / 9 whenever d = exp(-3/eps).
    """
    upper = params.beta / params.eta * (params.log_ratio + 1)
    lower = params.beta / params.eta * ((1 + params.delta) * params.log_ratio - 1)
    return max(upper, lower)


def dD_dy_closed(x_i, b_i, y_i, w_i, params: WStarParams) -> float:
    """Partial derivative of D in y_i in each of its three smooth regimes."""
    d, k = params.delta, params.beta * w_i / params.eta
    if y_i > b_i:
        return k * (params.log_ratio + 1)
    if x_i < y_i < b_i:
        return k * math.log((1 + d) * (b_i - x_i) / (b_i - y_i + d * (b_i - x_i)))
    if y_i < x_i:
        u = b_i - y_i
        g = b_i - x_i
        return k * ((1 + d) * math.log((g + d * u) / ((1 + d) * u)) - d
                    + d * (1 + d) * u / (g + d * u))
    raise ValueError("derivative undefined at y_i in {x_i, b_i}")


def lipschitz_probe(x, b, y, i: int, weights, params: WStarParams, h: float = 1e-6) -> dict:
    """Central finite difference of D in y_i, compared to (1+eps) w_i."""
    x, b, y, w = (np.asarray(v, dtype=float) for v in (x, b, y, weights))
    out = {"i": i, "skipped": False}
    if min(abs(y[i] - b[i]), abs(y[i] - x[i])) < 10 * h:
        out["skipped"] = True
        out["notice"] = "probe point too close to a kink"
        return out
    yp, ym = y.copy(), y.copy()
    yp[i] += h
    ym[i] -= h
    deriv = (potential_wstar(x, b, yp, w, params)["D"]
             - potential_wstar(x, b, ym, w, params)["D"]) / (2 * h)
    bound = (1 + params.epsilon) * w[i]
    exact = wstar_lipschitz(params) * w[i]
    out.update(derivative=deriv, bound=bound, ok=abs(deriv) <= bound + 1e-4,
               bound_exact=exact, ok_exact=abs(deriv) <= exact + 1e-4,
               closed_form=dD_dy_closed(x[i], b[i], y[i], w[i], params))
    return out


# ---------------------------------------------------------------------------
# lower bounds on the potentials over a trace
# ---------------------------------------------------------------------------

def potential_floor(algo: str, inst: Instance, trace, params=None) -> float:
    """Analytic lower bound of the combined potential over the box spanned by a trace."""
    X = max(float(np.abs(r.x).max()) for r in trace)
    if algo == "uniform":
        return 0.0
    if algo == "wstar":
        w = inst.metric.weights
        n, d, eta, beta = len(w), params.delta, params.eta, params.beta
        return -beta / eta * float(np.sum(w * ((eta - 1) * (2 + X) + n * d * X)))
    tree = as_tree(inst.metric)
    neg = max(float(np.maximum(-r.x, 0).sum()) for r in trace)
    idx = tree.nonroot
    return -2 * float(np.sum(tree.n_leaves_below[idx] * tree.weights[idx])) * (1 + neg)


# ---------------------------------------------------------------------------
# the monitor
# ---------------------------------------------------------------------------

def realized_view(inst: Instance, run):
    """Instance with realized durations plus a run re-indexed onto it.

    Phases the run skipped carry no time and are dropped; trace records are
    copied with their phase index remapped (records of dropped phases get -1).
    Returns (instance, run, kept phase indices).
    """
    keep = [k for k, d in enumerate(run.ledger.durations) if d > 0]
    remap = {k: i for i, k in enumerate(keep)}
    trace = [dataclasses.replace(rec, phase=remap.get(rec.phase, -1)) for rec in run.trace]
    return (inst.with_durations(run.ledger.durations),
            dataclasses.replace(run, trace=trace), keep)


@dataclass
class InequalityReport:
    algo: str
    intervals: int = 0
    jumps: int = 0
    violations: list = field(default_factory=list)
    min_margin: float = math.inf
    constant: float | None = None
    constant_doubled: bool = False
    potential_min: float = math.inf
    potential_floor: float = -math.inf
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations and self.potential_min >= self.potential_floor

    def _margin(self, kind, margin, tol, **dump):
        self.min_margin = min(self.min_margin, margin)
        if margin < -tol:
            self.violations.append({"kind": kind, "margin": margin, **dump})

    def to_json(self) -> dict:
        return {"algo": self.algo, "intervals": self.intervals, "jumps": self.jumps,
                "violations": self.violations, "min_margin": self.min_margin,
                "constant": self.constant, "constant_doubled": self.constant_doubled,
                "potential_min": self.potential_min,
                "potential_floor": self.potential_floor, "notes": self.notes}


def _combined(algo, pots):
    if algo == "uniform":
        return pots["Theta"]
    if algo == "wstar":
        return pots["D"]
    return None


def _potentials(algo, inst, x, aux, y, params):
    if algo == "uniform":
        return potential_uniform(x, aux, y)
    if algo == "wstar":
        return potential_wstar(x, aux, y, inst.metric.weights, params)
    return potential_tree(inst.metric, x, y)


def check_inequalities(inst: Instance, run, offline_path, algo: str, params=None,
                       tol_ineq: float = TOL_INEQ, constant: float | None = None,
                       fault: float = 0.0, _retry: bool = True) -> InequalityReport:
    """Certify the potential-function inequalities of ``algo`` along ``run``.

    ``offline_path`` holds one offline allocation per phase (offline starts
    at the instance's start allocation and moves at each phase start).
    ``fault`` adds fault * t to every potential, for fault-injection tests.
    """
    if algo not in ("uniform", "wstar", "tree"):
        raise ValueError(f"unknown algorithm {algo!r}")
    if algo == "wstar" and params is None:
        params = WStarParams(0.25, inst.n)
    rep = InequalityReport(algo)
    metric = inst.metric
    n = inst.n
    if algo == "uniform":
        C = constant if constant is not None else uniform_constant(n)
        rep.constant = C
        lip = uniform_lipschitz(n) / float(metric.weights[0])
    elif algo == "wstar":
        rep.constant = 1 + params.epsilon
        lip = wstar_lipschitz(params)
    else:
        rep.constant = 2 * n - 1
        lip = 2 * n - 1
    tree = as_tree(metric) if algo == "tree" else None

    def combined(p):
        if algo == "tree":
            return (2 * n - 1) * p["P"] + 2 * p["Q"]
        return _combined(algo, p)

    trace = run.trace
    by_phase = {}
    for idx, rec in enumerate(trace):
        by_phase.setdefault(rec.phase, []).append(idx)
    cur = trace[0]
    y_prev = inst.start()
    for k, ph in enumerate(inst.phases):
        y = np.asarray(offline_path[k], dtype=float)
        # offline jump at the phase start
        p_old = _potentials(algo, inst, cur.x, cur.aux, y_prev, params)
        p_new = _potentials(algo, inst, cur.x, cur.aux, y, params)
        dmove = metric.norm(y - y_prev)
        rep.jumps += 1
        rep._margin("offline_jump", lip * dmove - (combined(p_new) - combined(p_old)),
                    ABS_SLACK * max(1.0, abs(combined(p_old))), phase=k, t=cur.t)
        y_prev = y
        off_rate = offline_cost_rate(ph, y)
        pots_prev = p_new
        for idx in by_phase.get(k, []):
            rec = trace[idx]
            dt = rec.t - cur.t
            pots = _potentials(algo, inst, rec.x, rec.aux, y, params)
            f_prev, f_cur = fault * cur.t, fault * rec.t
            dserv = rec.service - cur.service
            dmov = rec.movement - cur.movement
            tol = tol_ineq * dt + ABS_SLACK
            dump = {"phase": k, "t": rec.t, "dt": dt, "x": rec.x.tolist(),
                    "aux": rec.aux.tolist(), "y": y.tolist()}
            rep.intervals += 1
            if algo == "uniform":
                dTheta = pots["Theta"] + f_cur - pots_prev["Theta"] - f_prev
                rep._margin("uniform_pot", C * off_rate * dt - (dserv + dmov + dTheta), tol, **dump)
            elif algo == "wstar":
                dD = pots["D"] + f_cur - pots_prev["D"] - f_prev
                rep._margin("wstar_service", (1 + params.epsilon) * off_rate * dt - (dserv + dD),
                            tol, **dump)
                dpos = rec.pos_movement - cur.pos_movement
                dPsi = pots["Psi"] - pots_prev["Psi"]
                rep._margin("wstar_movement", 4 * params.eta * dserv - (dpos + dPsi),
                            tol, **dump)
                a = rec.alpha
                if a > 0:
                    dx, db = wstar_derivative(WStarState(rec.x, rec.aux), metric.weights,
                                              params, ph.r, a)
                    w = metric.weights
                    rate = float(np.dot(w, np.maximum(dx, 0))) + 2 * params.eta * float(np.dot(w, db))
                    rep._margin("wstar_movement_pointwise", 4 * params.eta * a - rate,
                                ABS_SLACK * max(1.0, 4 * params.eta * a), **dump)
            else:
                dP = pots["P"] + f_cur - pots_prev["P"] - f_prev
                dQ = pots["Q"] - pots_prev["Q"]
                dlam = rec.lam_root_int - cur.lam_root_int
                xl = [cur.x[ph.r], rec.x[ph.r]]
                ind = 1.0 if max(xl) >= y[ph.r] else 0.0
                rep._margin("tree_P", dserv * ind - dlam - dP, tol, **dump)
                qres = abs(dQ - (n * dlam - dserv))
                rep._margin("tree_Q", -qres, tol, **dump)
                # online cost counts increasing movement; decreasing movement
                # matches it up to a bounded additive term
                dpos = rec.pos_movement - cur.pos_movement
                rep._margin("tree_combined",
                            (2 * n - 1) * dserv * ind - (dserv + dpos + (2 * n - 1) * dP + 2 * dQ),
                            tol, **dump)
            rep.potential_min = min(rep.potential_min, combined(pots))
            pots_prev = pots
            cur = rec
    if algo == "tree":
        rep.potential_min = min(rep.potential_min,
                                combined(potential_tree(tree, trace[0].x, inst.start())))
    rep.potential_floor = potential_floor(algo, inst, trace, params)

    if algo == "uniform" and rep.violations and _retry and constant is None:
        retry = check_inequalities(inst, run, offline_path, algo, params, tol_ineq,
                                   constant=2 * C, fault=fault, _retry=False)
        retry.constant_doubled = True
        retry.notes.append(f"{len(rep.violations)} violations at C={C:.4g}; re-checked at 2C")
        return retry
    return rep
