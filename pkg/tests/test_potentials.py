import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from maplab.core import Instance, RequestPhase, StarMetric, StepPhase
from maplab.integrator import IntegratorConfig
from maplab.offline import dp_oracle, random_offline_path, random_tree
from maplab.potentials import (check_inequalities, dD_dy_closed, lipschitz_probe,
                               potential_tree, potential_uniform, potential_wstar,
                               realized_view,
                               uniform_constant, wstar_lipschitz)
from maplab.tree import run_tree
from maplab.uniform import run_uniform
from maplab.wstar import WStarParams, run_wstar
from oracles import potential_uniform_loops, potential_wstar_loops

REC = IntegratorConfig(record=True)


def test_uniform_at_offline_equal_online():
    x = np.array([0.2, 0.3, 0.5])
    b = x + 1.0 / 3
    p = potential_uniform(x, b, x)
    assert p["P"] == pytest.approx(0.0, abs=1e-15)
    assert p["Q"] == pytest.approx(1.0)
    assert p["Theta"] == pytest.approx(6.0)


def test_wstar_at_offline_equal_online():
    x = np.array([0.25, 0.75])
    b = np.array([1.5, 1.5])
    w = np.array([1.0, 1.0])
    pr = WStarParams(0.5, 2)
    p = potential_wstar(x, b, x, w, pr)
    n, d = 2, pr.delta
    assert p["D"] == pytest.approx(pr.beta / pr.eta * float(np.sum(n * d * x + b)), rel=1e-12)
    assert p["Psi"] == pytest.approx(6 * pr.eta, rel=1e-12)


def test_tree_potential_example():
    tree = StarMetric(np.array([1.0, 2.0]))
    p = potential_tree(tree, np.array([0.7, 0.3]), np.array([0.5, 0.5]))
    assert p["P"] == pytest.approx(0.2)
    assert p["Q"] == pytest.approx(-(0.7 + 2 * 0.3))


def test_uniform_constant_value():
    assert uniform_constant(2) == pytest.approx(12 * (math.log(3) + 3) + 24)


pts = st.integers(2, 6).flatmap(lambda n: st.tuples(
    st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n),
    st.lists(st.floats(1e-2, 1.0), min_size=n, max_size=n),
    st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n),
    st.lists(st.floats(0.2, 3.0), min_size=n, max_size=n),
    st.sampled_from([0.1, 0.3, 1.0])))


def _triple(xs, gaps, ys):
    x = np.array(xs) + 1e-3
    x /= x.sum()
    y = np.array(ys) + 1e-3
    y /= y.sum()
    return x, np.minimum(x + np.array(gaps), 2.0), y


@given(pts)
def test_vectorized_matches_loops(args):
    xs, gaps, ys, ws, eps = args
    x, b, y = _triple(xs, gaps, ys)
    w = np.array(ws)
    p = potential_uniform(x, b, y)
    P, Q, Th = potential_uniform_loops(x, b, y)
    assert p["P"] == pytest.approx(P, rel=1e-9, abs=1e-12)
    assert p["Q"] == pytest.approx(Q, rel=1e-9, abs=1e-12)
    pw = potential_wstar(x, b, y, w, WStarParams(eps, len(x)))
    D, Psi = potential_wstar_loops(x, b, y, w, eps)
    assert pw["D"] == pytest.approx(D, rel=1e-9, abs=1e-12)
    assert pw["Psi"] == pytest.approx(Psi, rel=1e-12)


def test_lipschitz_probes():
    rng = np.random.default_rng(11)
    done = 0
    while done < 500:
        n = int(rng.integers(2, 6))
        x = rng.dirichlet(np.ones(n))
        b = np.minimum(x + rng.uniform(0.01, 1, n), 2.0)
        y = rng.uniform(0, 1.2, n)
        w = rng.uniform(0.2, 3, n)
        pr = WStarParams(float(rng.choice([0.1, 0.3, 1.0])), n)
        i = int(rng.integers(n))
        out = lipschitz_probe(x, b, y, i, w, pr)
        if out["skipped"]:
            continue
        done += 1
        assert out["ok_exact"], out
        assert out["derivative"] == pytest.approx(out["closed_form"], abs=1e-5 * (1 + w[i]))
        if y[i] < b[i]:
            # below the baseline the stated (1 + eps) bound holds
            assert out["ok"], out


def test_closed_form_regimes():
    pr = WStarParams(0.25, 3)
    top = dD_dy_closed(0.3, 1.0, 1.2, 1.0, pr)
    assert top == pytest.approx(pr.beta / pr.eta * (pr.log_ratio + 1))
    assert top == pytest.approx(wstar_lipschitz(pr))
    assert dD_dy_closed(0.3, 1.0, 0.6, 1.0, pr) >= 0
    assert dD_dy_closed(0.3, 1.0, 0.1, 1.0, pr) < 0
    with pytest.raises(ValueError):
        dD_dy_closed(0.3, 1.0, 0.3, 1.0, pr)


@pytest.mark.parametrize("eps, sup", [(0.1, 1.1022222222), (0.25, 1.2638798718), (1.0, 2.0555963212)])
def test_lipschitz_supremum_above_one_plus_eps(eps, sup):
    # beta (L + 1) / eta frozen from a 30-digit evaluation
    pr = WStarParams(eps, 3)
    assert wstar_lipschitz(pr) == pytest.approx(sup, rel=1e-9)
    assert wstar_lipschitz(pr) > 1 + eps


def _hinge_inst(n, m, seed, w=None):
    rng = np.random.default_rng(seed)
    w = np.full(n, 0.5) if w is None else w
    ph = [RequestPhase(int(rng.integers(n)), float(rng.uniform(0.2, 1)), float(rng.uniform(0.5, 3)))
          for _ in range(m)]
    return Instance(StarMetric(w), ph)


def test_stationary_offline_zero_charge():
    # one phase already satisfied: no motion, every margin is zero
    inst = Instance(StarMetric(np.full(3, 0.5)), [RequestPhase(0, 0.1, 2.0)])
    run = run_uniform(inst, cfg=REC)
    rep = check_inequalities(inst, run, [inst.start()], "uniform")
    assert rep.ok and rep.violations == []
    assert abs(rep.min_margin) <= 1e-12


@pytest.mark.parametrize("algo", ["uniform", "wstar", "tree"])
def test_random_paths_clean(algo):
    for seed in range(3):
        w = None if algo == "uniform" else np.random.default_rng(seed).uniform(0.3, 2, 4)
        inst = _hinge_inst(4, 12, seed, w)
        if algo == "uniform":
            run = run_uniform(inst, cfg=REC)
        elif algo == "wstar":
            run = run_wstar(inst, cfg=REC, params=WStarParams(0.25, 4))
        else:
            run = run_tree(inst, cfg=REC)
        inst, run, _ = realized_view(inst, run)
        path = random_offline_path(inst, np.random.default_rng(seed + 100))
        rep = check_inequalities(inst, run, path, algo,
                                 params=WStarParams(0.25, 4) if algo == "wstar" else None)
        assert rep.violations == [], rep.violations[:2]
        assert rep.ok and not rep.constant_doubled


def test_wstar_against_dp_path():
    w = np.array([0.5, 1.0, 2.0])
    inst = _hinge_inst(3, 10, 4, w)
    pr = WStarParams(0.25, 3)
    run = run_wstar(inst, cfg=REC, params=pr)
    inst, run, _ = realized_view(inst, run)
    orc = dp_oracle(inst, g=30)
    rep = check_inequalities(inst, run, orc.path, "wstar", params=pr)
    assert rep.violations == []


def test_tree_step_phases_clean():
    tree = random_tree(4, np.random.default_rng(3))
    rng = np.random.default_rng(9)
    ph = [StepPhase(int(rng.integers(4)), ((0.3, 1.0), (0.6, 0.4)), 1.0) for _ in range(10)]
    inst = Instance(tree, ph)
    run = run_tree(inst, cfg=REC)
    inst, run, _ = realized_view(inst, run)
    rep = check_inequalities(inst, run, random_offline_path(inst, rng), "tree")
    assert rep.violations == []


@pytest.mark.parametrize("algo", ["uniform", "wstar", "tree"])
def test_fault_injection_detected(algo):
    inst = _hinge_inst(3, 6, 1)
    run = {"uniform": run_uniform, "wstar": run_wstar, "tree": run_tree}[algo](inst, cfg=REC)
    inst, run, _ = realized_view(inst, run)
    rep = check_inequalities(inst, run, [inst.start()] * len(inst.phases), algo, fault=1e4)
    assert rep.violations
    assert rep.violations[0]["margin"] < 0
    assert "x" in rep.violations[0] and "y" in rep.violations[0]
