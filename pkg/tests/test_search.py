import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from infoplan import search
from infoplan.errors import BudgetExceeded, NodeCapExceeded, SingularCovarianceError
from infoplan.kalman import LinearObservation, LinearTargetModel, logdet
from infoplan.redundancy import RedundancyQuery, is_eps_redundant
from infoplan.scenarios.random_instances import distinct_state_instance, random_instance
from infoplan.search import (
    LinearScenario,
    NeighborIndex,
    SensorState,
    delta_neighbors,
    fvi,
    greedy,
    metric,
    replay,
    rvi,
    tie_argmin,
    wrap_angle,
)
from search_oracle import enumerate_costs, greedy_costs, reference_rvi

seeds = st.integers(0, 10_000)


def small_instance(seed):
    rng = np.random.default_rng(seed)
    n_y, U, T = int(rng.integers(2, 4)), int(rng.integers(2, 4)), int(rng.integers(3, 6))
    return random_instance(seed, n_y, U).scenario, T


def test_metric_wraps_angles():
    a = SensorState((0.0, 0.0, math.pi - 0.1), (False, False, True))
    b = SensorState((3.0, 4.0, -math.pi + 0.1), (False, False, True))
    assert metric(a, b) == pytest.approx(math.sqrt(25 + 0.04))
    assert wrap_angle(math.pi) == pytest.approx(-math.pi)
    with pytest.raises(ValueError):
        metric(a, SensorState((0.0, 0.0)))


def test_neighbor_index():
    idx = NeighborIndex(1.0, (False, True), (1.0, 1.0))
    idx.add(np.array([0.0, 3.1]), "a")
    idx.add(np.array([5.0, 0.0]), "b")
    assert delta_neighbors(idx, SensorState((0.5, -3.1), (False, True))) == ["a"]
    assert delta_neighbors(idx, np.array([2.5, 0.0])) == []
    exact = NeighborIndex(0.0, (False,), (1.0,))
    exact.add(np.array([1.0]), "x")
    assert exact.query(np.array([1.0])) == ["x"]
    assert exact.query(np.array([1.0 + 1e-6])) == []


def test_tie_argmin():
    assert tie_argmin(np.array([1.0, 0.5, 0.5 + 1e-12, 0.2 + 1.0])) == 1
    assert tie_argmin(np.array([0.5 + 5e-11, 0.5])) == 0
    assert tie_argmin(np.array([0.5 + 1e-9, 0.5])) == 1


def test_scalar_two_sensor_example():
    # sensor 1 sees the target with V=1, sensor 0 sees nothing
    target = LinearTargetModel(np.eye(1), np.eye(1) * 0.5)
    obs = {0: LinearObservation.absent(1), 1: LinearObservation(np.eye(1), np.eye(1))}
    sc = LinearScenario(
        lambda x, u: SensorState((float(u),)), [0, 1], target, lambda x: obs[int(x.coords[0])],
        SensorState((0.0,)), np.eye(1),
    )
    for plan in (fvi(sc, 3), greedy(sc, 3), rvi(sc, 3)):
        assert plan.controls == [1, 1, 1]
    # sigma -> sigma / (1 + sigma) + 0.5, three times from 1
    s = 1.0
    for _ in range(3):
        s = s / (1 + s) + 0.5
    assert fvi(sc, 3).final_cost == pytest.approx(math.log(s), rel=1e-14)


@settings(max_examples=60)
@given(seeds)
def test_fvi_matches_enumeration(seed):
    sc, T = small_instance(seed)
    costs = enumerate_costs(sc, T)
    plan = fvi(sc, T)
    assert plan.final_cost == pytest.approx(min(costs.values()), abs=1e-10)
    assert costs[tuple(plan.controls)] == pytest.approx(plan.final_cost, abs=1e-10)
    assert plan.tree_sizes == [len(sc.controls) ** t for t in range(T + 1)]


@settings(max_examples=60)
@given(seeds)
def test_greedy_matches_oracle(seed):
    sc, T = small_instance(seed)
    seq, cost = greedy_costs(sc, T)
    plan = greedy(sc, T)
    assert plan.controls == seq
    assert plan.final_cost == pytest.approx(cost, abs=1e-10)


@settings(max_examples=60)
@given(seeds)
def test_rvi_exact_equals_fvi(seed):
    sc, T = small_instance(seed)
    assert rvi(sc, T, 0.0, 0.0).final_cost == pytest.approx(fvi(sc, T).final_cost, abs=1e-9)


@settings(max_examples=60)
@given(seeds, st.sampled_from([0.0, 0.01, 0.1, 1.0, math.inf]), st.sampled_from([0.0, 0.5, 1.0, 3.0]))
def test_ordering_fvi_rvi_greedy(seed, eps, delta):
    sc, T = small_instance(seed)
    f, r, g = fvi(sc, T), rvi(sc, T, eps, delta), greedy(sc, T)
    assert f.final_cost <= r.final_cost + 1e-9
    assert r.final_cost <= g.final_cost + 1e-9


@settings(max_examples=40)
@given(seeds, st.sampled_from([0.0, 0.05, math.inf]), st.sampled_from([0.0, 0.5, 1.0]))
def test_rvi_matches_reference_tree(seed, eps, delta):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(3, 6))
    sc = random_instance(seed, int(rng.integers(2, 4)), int(rng.integers(2, 4)), step=0.5).scenario
    best, sizes = reference_rvi(sc, T, eps, delta)
    plan = rvi(sc, T, eps, delta)
    assert plan.tree_sizes == sizes
    assert plan.final_cost == pytest.approx(min(best, greedy(sc, T).final_cost), abs=1e-9)


def _reference_prune(lvl, sc, eps, delta, tol):
    """Sequential retention over the same level data with the bucket index."""
    order = np.argsort(lvl.costs, kind="stable")
    index = NeighborIndex(delta, sc.angular_mask, sc.weights)
    keep = []
    for i in order.tolist():
        near = index.query(lvl.X[i])
        if near and (math.isinf(eps) or is_eps_redundant(RedundancyQuery(lvl.covs[i], [lvl.covs[j] for j in near], eps, tol))):
            continue
        keep.append(i)
        index.add(lvl.X[i], i)
    return np.array(keep, dtype=np.int64)


@pytest.mark.parametrize("eps,delta", [(0.1, 0.5), (0.1, 1.0), (math.inf, 1.0), (0.05, 0.0)])
def test_batched_prune_matches_sequential_on_tracking_levels(eps, delta):
    from infoplan.scenarios.tracking import TrackingWorld, planning_scenario, poisson_disc_trees

    w = TrackingWorld(trees=poisson_disc_trees(7, (-60, 60, -60, 60)))
    m = w.A @ np.array(w.target_start)
    P = w.A @ np.diag(w.prior_cov) @ w.A.T + w.W
    sc = planning_scenario(w, np.zeros(3), m, P)
    lv = search._root(sc)
    for t in range(1, 4):
        lvl = search._expand(sc, t, lv, 1)
        a = search._prune(lvl, sc, eps, delta, 1e-7)
        assert np.array_equal(a, _reference_prune(lvl, sc, eps, delta, 1e-7))
        lv = search._Level(lvl.X[a], lvl.covs[a], lvl.costs[a], lvl.parent[a], lvl.control[a])


def test_eps_infinity_keeps_one_node_per_state():
    sc, T = random_instance(3, 2, 3).scenario, 5
    plan = rvi(sc, T, math.inf, 0.0)
    # the 1-D lattice with 3 moves reaches 2t + 1 positions at level t
    assert plan.tree_sizes == [min(2 * t + 1, 3**t) for t in range(T + 1)]


def test_distinct_states_make_rvi_exhaustive():
    sc = distinct_state_instance(5, 2, 3)
    assert rvi(sc, 4, math.inf, 0.0).tree_sizes == [3**t for t in range(5)]


@pytest.mark.parametrize("planner", ["fvi", "greedy", "rvi"])
def test_replay_reproduces_plan(planner):
    sc, T = small_instance(7)
    plan = {"fvi": fvi, "greedy": greedy, "rvi": rvi}[planner](sc, T)
    states, covs = replay(sc, plan.controls)
    assert len(plan.states) == len(plan.covs) == T + 1
    assert all(np.array_equal(a, b) for a, b in zip(covs, plan.covs))
    assert plan.final_cost == logdet(plan.covs[T])
    assert [n.level for n in plan.path_nodes()] == list(range(T + 1))


@pytest.mark.parametrize("workers", [2, 4])
def test_worker_count_does_not_change_results(workers):
    sc, T = small_instance(11)
    for fn in (lambda w: fvi(sc, T, workers=w), lambda w: rvi(sc, T, 0.05, 0.5, workers=w)):
        a, b = fn(1), fn(workers)
        assert a.controls == b.controls and a.final_cost == b.final_cost and a.tree_sizes == b.tree_sizes


def test_budget_and_node_cap():
    sc, _ = small_instance(1)
    with pytest.raises(BudgetExceeded):
        fvi(sc, 30, max_leaves=1000)
    with pytest.raises(NodeCapExceeded) as err:
        rvi(sc, 5, 0.0, 0.0, node_cap=5)
    assert err.value.cap == 5
    with pytest.raises(ValueError):
        rvi(sc, 0)
    with pytest.raises(ValueError):
        rvi(sc, 3, -1.0)


def test_singular_covariance_reported():
    target = LinearTargetModel(np.zeros((2, 2)), np.zeros((2, 2)))
    sc = LinearScenario(
        lambda x, u: x, [0], target, lambda x: LinearObservation.absent(2), SensorState((0.0,)), np.eye(2)
    )
    with pytest.raises(SingularCovarianceError) as err:
        fvi(sc, 2)
    assert err.value.level == 1
