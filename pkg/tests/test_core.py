import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from maplab.core import (CostLedger, Instance, InputError, InvariantError, RequestPhase,
                         StarMetric, StepPhase, TreeMetric, dump_instance, instance_from_json,
                         load_instance, norm, offline_cost_rate, path_cost, service_rate,
                         star_as_tree, write_trace_csv)
from maplab.uniform import run_uniform
from oracles import tree_norm_by_edges

# root(0) -> v(1) -> a(3);  root -> u(2) -> {b(4), c(5)}
TREE3 = TreeMetric([-1, 0, 0, 1, 2, 2], [0, 1, 1, 1, 1, 1], [3, 4, 5])


def test_star_norm_examples():
    assert norm(StarMetric(np.ones(2)), [0.3, -0.3]) == pytest.approx(0.6, abs=1e-15)
    assert norm(StarMetric(np.array([1.0, 2.0, 3.0])), np.zeros(3)) == 0.0
    assert norm(TREE3, np.zeros(3)) == 0.0


def test_tree_norm_by_subtree_sums():
    z = [0.2, -0.1, -0.1]
    # edges: v carries 0.2, a 0.2, u -0.2, b -0.1, c -0.1
    assert norm(TREE3, z) == pytest.approx(0.2 + 0.2 + 0.2 + 0.1 + 0.1, abs=1e-15)
    assert norm(TREE3, z) == pytest.approx(
        tree_norm_by_edges([-1, 0, 0, 1, 2, 2], [0, 1, 1, 1, 1, 1], [3, 4, 5], z), abs=1e-15)


def test_dimension_mismatch():
    with pytest.raises(InputError):
        StarMetric(np.ones(3)).norm([1.0, 2.0])
    with pytest.raises(InputError):
        TREE3.norm([1.0])


vec3 = arrays(np.float64, 3, elements=st.floats(-5, 5))


@given(vec3, vec3, st.floats(-10, 10), arrays(np.float64, 3, elements=st.floats(0.1, 4)))
def test_norm_is_a_norm(u, v, c, w):
    for metric in (StarMetric(w), TREE3):
        nu, nv, nuv = metric.norm(u), metric.norm(v), metric.norm(u + v)
        assert nuv <= nu + nv + 1e-12 * (1 + nu + nv)
        assert metric.norm(c * u) == pytest.approx(abs(c) * nu, rel=1e-12, abs=1e-300)


def test_tree_transfer_equals_path_distance():
    rng = np.random.default_rng(3)
    parents = [-1, 0, 0, 1, 1, 2, 2, 3]
    weights = [0] + list(rng.uniform(0.2, 2, 7))
    tree = TreeMetric(parents, weights)
    for i in range(tree.n):
        for j in range(tree.n):
            z = np.zeros(tree.n)
            z[i] -= 1
            z[j] += 1
            assert tree.norm(z) == pytest.approx(tree.path_distance(tree.leaves[i], tree.leaves[j]),
                                                 rel=1e-12)


def test_star_as_tree_same_norm():
    star = StarMetric(np.array([0.5, 1.0, 2.0]))
    tree = star_as_tree(star)
    z = np.array([0.3, -0.5, 0.2])
    assert tree.norm(z) == pytest.approx(star.norm(z), rel=1e-15)
    assert np.allclose(tree.distance_matrix(), star.distance_matrix())


def test_tree_validation():
    with pytest.raises(InputError):
        TreeMetric([-1, -1], [0, 1])                # two roots
    with pytest.raises(InputError):
        TreeMetric([-1, 2, 1], [0, 1, 1])           # cycle
    with pytest.raises(InputError):
        TreeMetric([-1, 0], [0, -1.0])              # non-positive weight
    with pytest.raises(InputError):
        TreeMetric([-1, 0, 1], [0, 1, 1], [1])      # leaves must be the childless vertices
    with pytest.raises(InputError):
        StarMetric(np.array([1.0, 0.0]))


def test_tree_polytope():
    x = np.array([0.5, 0.3, 0.2])
    xu = TREE3.expand(x)
    assert xu[0] == pytest.approx(1.0)
    assert xu[1] == pytest.approx(0.5) and xu[2] == pytest.approx(0.5)


@pytest.mark.parametrize("s,xr,want", [(0.8, 0.5, 0.3), (0.2, 0.5, 0.0), (0.5, -0.1, 0.6)])
def test_service_rate(s, xr, want):
    assert service_rate(RequestPhase(0, s, 1.0), [xr, 1 - xr]) == pytest.approx(want, abs=1e-15)


@pytest.mark.parametrize("yr,want", [(0.8, 0.0), (0.5, 0.3), (1.0, 0.0)])
def test_offline_cost_rate(yr, want):
    assert offline_cost_rate(RequestPhase(0, 0.8, 1.0), [yr, 1 - yr]) == pytest.approx(want, abs=1e-15)


def test_phase_validation():
    with pytest.raises(InputError):
        RequestPhase(0, 1.5, 1.0)
    with pytest.raises(InputError):
        RequestPhase(0, 0.5, 0.0)
    with pytest.raises(InputError):
        StepPhase(0, ((0.5, 0.1), (0.4, 0.05)), 1.0)
    with pytest.raises(InputError):
        StepPhase(0, ((0.2, 0.1), (0.4, 0.3)), 1.0)
    with pytest.raises(InputError):
        Instance(StarMetric(np.ones(2)), [RequestPhase(2, 0.5, 1.0)])
    with pytest.raises(InputError):
        Instance(StarMetric(np.ones(2)), [], x0=[0.5, 0.6])


def test_step_phase_charge():
    ph = StepPhase(1, ((0.2, 0.5), (0.6, 0.1)), 1.0)
    assert ph.charge(0.1) == 0.5
    assert ph.charge(0.2) == 0.1
    assert ph.charge(0.7) == 0.0
    assert ph.next_threshold(0.3) == 0.6
    assert ph.next_threshold(0.9) is None


def test_ledger_totals():
    led = CostLedger()
    led.add(0, 1.0, 0.25, 0.5)
    led.add(1, 2.0, 0.125, 0.0625)
    assert led.service == 0.25 + 0.125
    assert led.movement == 0.5 + 0.0625
    assert led.total == led.service + led.movement
    with pytest.raises(InvariantError):
        led.add(2, 1.0, -1.0, 0.0)


def test_ledger_matches_trace_increments():
    inst = Instance(StarMetric(np.ones(3)), [RequestPhase(0, 0.9, 2.0), RequestPhase(2, 0.7, 1.0)])
    run = run_uniform(inst)
    assert run.ledger.service == pytest.approx(run.trace[-1].service, rel=1e-12)
    assert run.ledger.movement == pytest.approx(run.trace[-1].movement, rel=1e-12)
    ts = [r.t for r in run.trace]
    assert all(b > a for a, b in zip(ts, ts[1:]))


def test_json_round_trip(tmp_path):
    inst = Instance(TREE3, [RequestPhase(0, 0.5, 1.0), StepPhase(2, ((0.3, 0.2),), 2.0)],
                    x0=[0.2, 0.3, 0.5])
    p = tmp_path / "i.json"
    dump_instance(inst, p)
    back = load_instance(p)
    assert back.to_json() == inst.to_json()
    dump_instance(back, tmp_path / "j.json")
    assert p.read_bytes() == (tmp_path / "j.json").read_bytes()
    with pytest.raises(InputError):
        instance_from_json({"metric": {"type": "ring"}})
    with pytest.raises(InputError):
        instance_from_json({"phases": []})


def test_trace_csv(tmp_path):
    inst = Instance(StarMetric(np.ones(2)), [RequestPhase(0, 0.9, 1.0)])
    run = run_uniform(inst)
    run.trace[-1].potentials["Theta"] = 1.5
    write_trace_csv(run.trace, tmp_path / "t.csv", potentials=["Theta"])
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,alpha,service_cum,movement_cum,Theta"
    assert len(lines) == len(run.trace) + 1
    assert lines[-1].endswith("1.5")


def test_path_cost():
    inst = Instance(StarMetric(np.array([1.0, 2.0])), [RequestPhase(1, 0.8, 2.0)], x0=[1, 0])
    serv, move = path_cost(inst, [np.array([0.5, 0.5])])
    assert move == pytest.approx(0.5 * 1 + 0.5 * 2)
    assert serv == pytest.approx(2.0 * 0.3)
    json.dumps(inst.to_json())
