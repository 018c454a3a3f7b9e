"""Weighted l2^2-regularized mirror descent on tree metrics.

With the regularizer 1/2 sum_u w_u x_u^2 the Hessian is diag(w) and the
dynamics read

    x_u' = (alpha * [u == leaf] + lambda_u - lambda_parent(u)) / w_u,

with one multiplier per internal vertex enforcing x_u = sum of children.
The multipliers scale linearly with alpha, so between changes of alpha the
allocation moves along a fixed direction.  Step-cost phases are therefore
integrated exactly, segment by segment, and hinge phases in closed form
(the charge decays exponentially along that direction).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (CostLedger, Instance, InputError, InvariantError, RequestPhase,
                   StarMetric, StepPhase, TraceRecord, TreeMetric, star_as_tree)
from .integrator import IntegratorConfig, RunResult


@dataclass
class TreeState:
    x: np.ndarray               # leaf coordinates
    lam: np.ndarray | None = None


def as_tree(metric) -> TreeMetric:
    if isinstance(metric, TreeMetric):
        return metric
    if isinstance(metric, StarMetric):
        return star_as_tree(metric)
    raise InputError("tree algorithm needs a star or tree metric")


def lagrange_solve(tree: TreeMetric, leaf: int, alpha: float):
    """Multipliers and vertex velocities for charge ``alpha`` at leaf index ``leaf``.

    Upward pass: every non-root vertex's velocity is affine in its parent's
    multiplier, x_u' = A_u + B_u * lambda_parent.  The root constraint then
    fixes lambda_root and a downward pass substitutes back.
    Returns (lam, dx) as full vertex vectors; lam is 0 on leaves and dx is 0
    at the root.
    """
    if not alpha > 0:
        raise InputError("charge must be positive")
    target = tree.leaves[leaf]
    nv = tree.n_vertices
    w = tree.weights
    A = np.zeros(nv)
    B = np.zeros(nv)
    c = np.zeros(nv)
    d = np.zeros(nv)
    for u in reversed(tree.order):
        kids = tree.children[u]
        if not kids:
            A[u] = (alpha if u == target else 0.0) / w[u]
            B[u] = -1.0 / w[u]
            continue
        sa = sum(A[v] for v in kids)
        sb = sum(B[v] for v in kids)
        if u == tree.root:
            if sb == 0:
                raise InvariantError("singular multiplier system")
            c[u] = -sa / sb
            continue
        denom = 1.0 / w[u] - sb
        c[u] = sa / denom
        d[u] = (1.0 / w[u]) / denom
        A[u] = c[u] / w[u]
        B[u] = (d[u] - 1.0) / w[u]
    lam = np.zeros(nv)
    for u in tree.order:
        if not tree.children[u]:
            continue
        lam[u] = c[u] if u == tree.root else c[u] + d[u] * lam[tree.parents[u]]
    dx = np.zeros(nv)
    for u in tree.nonroot:
        dx[u] = ((alpha if u == target else 0.0) + lam[u] - lam[tree.parents[u]]) / w[u]
    return lam, dx


def lagrange_solve_dense(tree: TreeMetric, leaf: int, alpha: float):
    """Same system solved as one dense KKT matrix (reference implementation)."""
    target = tree.leaves[leaf]
    nonroot = tree.nonroot
    internal = tree.internal
    ix = {u: i for i, u in enumerate(nonroot)}
    il = {u: len(nonroot) + i for i, u in enumerate(internal)}
    m = len(nonroot) + len(internal)
    M = np.zeros((m, m))
    rhs = np.zeros(m)
    for u in nonroot:
        row = ix[u]
        M[row, ix[u]] = tree.weights[u]
        if u in il:
            M[row, il[u]] -= 1.0
        M[row, il[tree.parents[u]]] += 1.0
        rhs[row] = alpha if u == target else 0.0
    for k, u in enumerate(internal):
        row = len(nonroot) + k
        if u != tree.root:
            M[row, ix[u]] = 1.0
        for v in tree.children[u]:
            M[row, ix[v]] -= 1.0
    sol = np.linalg.solve(M, rhs)
    lam = np.zeros(tree.n_vertices)
    dx = np.zeros(tree.n_vertices)
    for u in internal:
        lam[u] = sol[il[u]]
    for u in nonroot:
        dx[u] = sol[ix[u]]
    return lam, dx


def check_solution(tree: TreeMetric, leaf: int, alpha: float, lam, dx, slack=1e-12):
    """Raise if multipliers or flow directions break the structural lemmas."""
    for u in tree.internal:
        if lam[u] <= -slack:
            raise InvariantError(f"multiplier of vertex {u} is {lam[u]:.3e}")
    anc = tree.membership[:, leaf] > 0
    for u in tree.nonroot:
        if anc[u] and dx[u] < -slack:
            raise InvariantError(f"ancestor {u} of the requested leaf is drained")
        if not anc[u] and dx[u] > slack:
            raise InvariantError(f"vertex {u} off the request path gains mass")
    up = sum(tree.weights[u] * dx[u] for u in tree.nonroot if anc[u])
    if abs(up - (alpha - lam[tree.root])) > 1e-10 * max(1.0, alpha):
        raise InvariantError("increasing movement differs from alpha - lambda_root")


class _Directions:
    """Unit-charge solutions cached per requested leaf."""

    def __init__(self, tree: TreeMetric, check: bool = True):
        self.tree = tree
        self.check = check
        self.cache = {}

    def __call__(self, leaf):
        if leaf not in self.cache:
            lam, dx = lagrange_solve(self.tree, leaf, 1.0)
            if self.check:
                check_solution(self.tree, leaf, 1.0, lam, dx)
            v = dx[self.tree.leaves]
            w = self.tree.weights[self.tree.nonroot]
            dxu = dx[self.tree.nonroot]
            self.cache[leaf] = (lam, v, float(np.abs(w * dxu).sum()),
                                float((w * np.maximum(dxu, 0)).sum()))
        return self.cache[leaf]


class TreeRunner:
    """Phase-by-phase driver of the tree algorithm with cumulative accounting.

    A phase ends after ``T`` or once the charge is at most ``eps_hold``.  With
    zero charge the allocation is frozen.
    """

    def __init__(self, tree: TreeMetric, x, cfg: IntegratorConfig | None = None,
                 hinge_samples: int = 16, check: bool = True):
        self.tree = tree
        self.cfg = cfg or IntegratorConfig()
        self.hinge_samples = hinge_samples
        self.x = np.asarray(x, dtype=float).copy()
        self.dirs = _Directions(tree, check)
        self.ledger = CostLedger()
        self.zero_lam = np.zeros(tree.n_vertices)
        self.trace = [TraceRecord(0.0, -1, self.x.copy(), self.zero_lam, 0.0, 0.0, 0.0)]
        self.t = self.serv = self.move = self.pos = self.lam_int = 0.0
        self.steps = 0

    def _record(self, k, alpha, lam_unit, force=False):
        if self.cfg.record or force:
            self.trace.append(TraceRecord(self.t, k, self.x.copy(), lam_unit * alpha, alpha,
                                          self.serv, self.move, self.pos, self.lam_int))

    def run_phase(self, k: int, ph) -> float:
        """Integrate phase ``ph`` (index ``k``); returns its realized duration."""
        cfg, root = self.cfg, self.tree.root
        lam_u, v, mv, pv = self.dirs(ph.r)
        vr = v[ph.r]
        elapsed = 0.0
        s0, m0 = self.serv, self.move
        if isinstance(ph, StepPhase):
            while elapsed < ph.T:
                a = ph.charge(self.x[ph.r])
                if a <= cfg.eps_hold:
                    break
                theta = ph.next_threshold(self.x[ph.r])
                dt = ph.T - elapsed
                hit = False
                if theta is not None:
                    need = (theta - self.x[ph.r]) / (a * vr)
                    if need <= dt:
                        dt, hit = need, True
                self.x = self.x + (a * dt) * v
                if hit:
                    self.x[ph.r] = max(self.x[ph.r], theta)
                elapsed += dt
                self.t += dt
                self.serv += a * dt
                self.move += a * mv * dt
                self.pos += a * pv * dt
                self.lam_int += a * lam_u[root] * dt
                self.steps += 1
                done = elapsed >= ph.T or ph.charge(self.x[ph.r]) <= cfg.eps_hold
                self._record(k, ph.charge(self.x[ph.r]), lam_u, force=done)
        elif isinstance(ph, RequestPhase):
            a0 = ph.charge(self.x[ph.r])
            if a0 > cfg.eps_hold:
                t_end = min(ph.T, math.log(a0 / cfg.eps_hold) / vr)
                x_start = self.x.copy()
                t_start = self.t
                base = (self.serv, self.move, self.pos, self.lam_int)
                for j in range(1, self.hinge_samples + 1):
                    tau = t_end * j / self.hinge_samples
                    cum = a0 * (-math.expm1(-vr * tau)) / vr
                    self.x = x_start + cum * v
                    self.t = t_start + tau
                    self.serv = base[0] + cum
                    self.move = base[1] + mv * cum
                    self.pos = base[2] + pv * cum
                    self.lam_int = base[3] + lam_u[root] * cum
                    self.steps += 1
                    self._record(k, ph.charge(self.x[ph.r]), lam_u,
                                 force=j == self.hinge_samples)
                elapsed = t_end
        else:
            raise InputError(f"unsupported phase type {type(ph).__name__}")
        self.ledger.add(k, elapsed, self.serv - s0, self.move - m0)
        return elapsed

    def result(self) -> RunResult:
        return RunResult(self.trace, self.ledger, self.x.copy(), self.zero_lam,
                         self.pos, self.steps)


def run_tree(inst: Instance, init: TreeState | None = None,
             cfg: IntegratorConfig | None = None, hinge_samples: int = 16) -> RunResult:
    """Run the tree algorithm over step-cost and hinge phases."""
    x = init.x if init is not None else inst.start()
    runner = TreeRunner(as_tree(inst.metric), x, cfg, hinge_samples)
    for k, ph in enumerate(inst.phases):
        runner.run_phase(k, ph)
    return runner.result()


def run_tree_euler(inst: Instance, h: float, eps_hold: float = 1e-8) -> CostLedger:
    """Fixed-step explicit Euler reference run (slow; for cross-checks only)."""
    tree = as_tree(inst.metric)
    x = inst.start()
    ledger = CostLedger()
    for k, ph in enumerate(inst.phases):
        elapsed = serv = move = 0.0
        while elapsed < ph.T - 1e-15:
            a = ph.charge(x[ph.r])
            if a <= eps_hold:
                break
            lam, dx = lagrange_solve(tree, ph.r, a)
            dt = min(h, ph.T - elapsed)
            x = x + dt * dx[tree.leaves]
            serv += a * dt
            move += dt * float(np.abs(tree.weights * dx)[tree.nonroot].sum())
            elapsed += dt
        ledger.add(k, elapsed, serv, move)
    return ledger
