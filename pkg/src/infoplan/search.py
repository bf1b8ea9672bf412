"""Tree search over (sensor state, covariance) pairs.

Three planners share one level-expansion routine:

* :func:`fvi` keeps every node (exhaustive forward value iteration);
* :func:`greedy` keeps only the cheapest node of each level;
* :func:`rvi` keeps the cheapest node plus every node that is not
  eps-redundant w.r.t. the already-retained nodes within metric distance
  ``delta`` of it.

Expansion order is parent-major, control-minor; the stable sort on cost uses
that order to break ties, so plans are reproducible for any worker count.
"""

from __future__ import annotations

import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import BudgetExceeded, NodeCapExceeded, SingularCovarianceError
from .kalman import LinearObservation, LinearTargetModel, NotPositiveDefiniteError, info_matrix, logdet, step_info
from .redundancy import DEFAULT_TOL, RedundancyQuery, is_eps_redundant

TWO_PI = 2.0 * math.pi
KEY_QUANTUM = 1e-9
DEFAULT_NODE_CAP = 2_000_000
DEFAULT_FVI_BUDGET = 2_000_000  # max number of leaves
_CHUNK = 8192
TIE_ATOL = 1e-10  # log det values this close count as tied
_CHUNK_FLOATS = 1 << 22  # cap on covariance entries held per chunk


def wrap_angle(a):
    """Map angles to [-pi, pi)."""
    return (np.asarray(a, dtype=float) + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class SensorState:
    coords: tuple
    angular_mask: tuple = None
    weights: tuple = None

    def __post_init__(self):
        coords = tuple(float(c) for c in np.ravel(self.coords))
        n = len(coords)
        mask = tuple(bool(m) for m in (self.angular_mask or (False,) * n))
        weights = tuple(float(w) for w in (self.weights or (1.0,) * n))
        if len(mask) != n or len(weights) != n:
            raise ValueError("angular_mask and weights must match the number of coordinates")
        if any(w <= 0 for w in weights):
            raise ValueError("metric weights must be positive")
        coords = tuple(float(wrap_angle(c)) if m else c for c, m in zip(coords, mask))
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "angular_mask", mask)
        object.__setattr__(self, "weights", weights)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.coords)


def _diff(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> np.ndarray:
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if np.any(mask):
        d = np.where(mask, wrap_angle(d), d)
    return d


def metric_arrays(a: np.ndarray, b: np.ndarray, mask, weights) -> np.ndarray:
    d = _diff(a, b, np.asarray(mask, dtype=bool))
    return np.sqrt(np.sum(np.asarray(weights) * d * d, axis=-1))


def metric(x1: SensorState, x2: SensorState) -> float:
    """Weighted Euclidean distance with shortest wrapped angle differences."""
    if len(x1.coords) != len(x2.coords) or x1.angular_mask != x2.angular_mask:
        raise ValueError("sensor states have different dimensions or angular masks")
    return float(metric_arrays(x1.array, x2.array, x1.angular_mask, x1.weights))


class LinearScenario:
    """Sensor motion, finite controls, linear target and observation models.

    ``motion(x, u)`` maps a :class:`SensorState` and control index to the next
    state. ``observe(x)`` (or ``observe(t, x)`` with ``time_varying=True``)
    returns the :class:`LinearObservation` taken at ``x``; level ``t`` of the
    tree observes with ``t = 1..T``.

    Scenarios with many nodes may supply vectorised hooks:
    ``motion_batch(X, u) -> X'`` on ``(N, n_x)`` coordinate arrays and
    ``info_batch(t, X_child, X_parent) -> (N, n_y, n_y)`` information matrices.
    The batch hook receives the parent so that motion-dependent sensing noise
    can be expressed.
    """

    def __init__(
        self,
        motion: Callable | None,
        controls: Sequence,
        target: LinearTargetModel,
        observe: Callable | None,
        x0: SensorState,
        sigma0: np.ndarray,
        *,
        time_varying: bool = False,
        motion_batch: Callable | None = None,
        info_batch: Callable | None = None,
        name: str = "linear",
    ):
        if len(controls) == 0:
            raise ValueError("control set must be non-empty")
        if motion is None and motion_batch is None:
            raise ValueError("a motion model is required")
        if observe is None and info_batch is None:
            raise ValueError("an observation model is required")
        sigma0 = np.array(sigma0, dtype=float)
        if sigma0.shape != (target.dim, target.dim):
            raise ValueError(f"sigma0 must be {target.dim}x{target.dim}")
        self.motion = motion
        self.controls = list(controls)
        self.target = target
        self.observe = observe
        self.x0 = x0
        self.sigma0 = sigma0
        self.time_varying = time_varying
        self.motion_batch = motion_batch
        self.info_batch = info_batch
        self.name = name
        self.angular_mask = np.array(x0.angular_mask, dtype=bool)
        self.weights = np.array(x0.weights)
        self._info_cache: dict = {}

    @property
    def n_y(self) -> int:
        return self.target.dim

    def state(self, coords) -> SensorState:
        return SensorState(tuple(coords), self.x0.angular_mask, self.x0.weights)

    def step_states(self, X: np.ndarray, u: int) -> np.ndarray:
        if self.motion_batch is not None:
            return np.asarray(self.motion_batch(X, u), dtype=float)
        return np.array([self.motion(self.state(x), u).coords for x in X], dtype=float).reshape(X.shape)

    def observation(self, t: int, x: SensorState) -> LinearObservation:
        return self.observe(t, x) if self.time_varying else self.observe(x)

    def infos(self, t: int, X: np.ndarray, X_parent: np.ndarray) -> np.ndarray:
        if self.info_batch is not None:
            return np.asarray(self.info_batch(t, X, X_parent), dtype=float)
        out = np.empty((len(X), self.n_y, self.n_y))
        for i, x in enumerate(X):
            key = (t if self.time_varying else None, state_key(x))
            m = self._info_cache.get(key)
            if m is None:
                m = info_matrix(self.observation(t, self.state(x)))
                self._info_cache[key] = m
            out[i] = m
        return out


def state_key(x: np.ndarray) -> tuple:
    return tuple(np.round(np.asarray(x, dtype=float) / KEY_QUANTUM).astype(np.int64).tolist())


@dataclass
class SearchNode:
    state: SensorState
    cov: np.ndarray
    cost: float
    parent: "SearchNode | None" = None
    control: int | None = None
    level: int = 0


@dataclass
class PlanResult:
    """A planned control sequence with its trajectory and covariances.

    ``states`` and ``covs`` include the initial pair at index 0, so both have
    length ``T + 1`` and ``final_cost == logdet(covs[T])``.
    """

    controls: list
    states: list
    covs: list
    final_cost: float
    tree_sizes: list
    wall_time: float = 0.0
    planner: str = ""
    expanded_sizes: list = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return len(self.controls)

    def path_nodes(self) -> list[SearchNode]:
        nodes, parent = [], None
        for t, (x, c) in enumerate(zip(self.states, self.covs)):
            parent = SearchNode(x, c, logdet(c), parent, self.controls[t - 1] if t else None, t)
            nodes.append(parent)
        return nodes


class NeighborIndex:
    """Retained-node index answering ``d(x, x') <= delta`` queries.

    ``delta == 0`` uses exact quantised keys; ``delta > 0`` buckets the
    metric-scaled coordinates on a grid of edge ``delta`` and scans the
    ``3**n_x`` adjacent buckets.
    """

    def __init__(self, delta: float, angular_mask, weights):
        if delta < 0:
            raise ValueError("delta must be >= 0")
        self.delta = float(delta)
        self.mask = np.asarray(angular_mask, dtype=bool)
        self.weights = np.asarray(weights, dtype=float)
        self._scale = np.sqrt(self.weights)
        self._buckets: dict[tuple, list[int]] = {}
        self._coords: list[np.ndarray] = []
        self._payload: list = []
        if self.delta > 0:
            period = TWO_PI * self._scale
            self._nb = np.where(self.mask, np.maximum(1, np.floor(period / self.delta)), 0).astype(np.int64)
            offsets = []
            for d in range(len(self.mask)):
                if self.mask[d]:
                    offsets.append(sorted({o % self._nb[d] for o in (-1, 0, 1)}))
                else:
                    offsets.append([-1, 0, 1])
            self._offsets = offsets

    def __len__(self):
        return len(self._coords)

    def _bucket(self, x: np.ndarray) -> tuple:
        if self.delta == 0:
            return state_key(x)
        z = np.empty(len(x), dtype=np.int64)
        for d, v in enumerate(x):
            if self.mask[d]:
                b = int(math.floor((float(wrap_angle(v)) + math.pi) * self._scale[d] / self.delta))
                z[d] = min(b, self._nb[d] - 1)
            else:
                z[d] = int(math.floor(v * self._scale[d] / self.delta))
        return tuple(z.tolist())

    def add(self, x: np.ndarray, payload) -> None:
        self._buckets.setdefault(self._bucket(x), []).append(len(self._coords))
        self._coords.append(np.asarray(x, dtype=float))
        self._payload.append(payload)

    def query_ids(self, x: np.ndarray) -> list[int]:
        b = self._bucket(x)
        if self.delta == 0:
            return list(self._buckets.get(b, ()))
        ids = []
        for off in itertools.product(*self._offsets):
            key = tuple(
                (b[d] + o) % self._nb[d] if self.mask[d] else b[d] + o for d, o in enumerate(off)
            )
            ids.extend(self._buckets.get(key, ()))
        if not ids:
            return []
        ids = sorted(set(ids))
        pts = np.array([self._coords[i] for i in ids])
        dist = metric_arrays(pts, x, self.mask, self.weights)
        return [i for i, d in zip(ids, dist) if d <= self.delta]

    def query(self, x: np.ndarray) -> list:
        return [self._payload[i] for i in self.query_ids(x)]


def delta_neighbors(index: NeighborIndex, x, delta: float | None = None) -> list:
    """Covariances of retained nodes within ``delta`` of ``x``."""
    if delta is not None and delta != index.delta:
        raise ValueError("index was built for a different delta")
    coords = x.array if isinstance(x, SensorState) else np.asarray(x, dtype=float)
    return index.query(coords)


# ---------------------------------------------------------------------------
# level expansion


@dataclass
class _Level:
    X: np.ndarray
    covs: np.ndarray | None
    costs: np.ndarray
    parent: np.ndarray
    control: np.ndarray


def _map_chunks(fn, n: int, workers: int, n_y: int = 1):
    # chunk size depends only on the problem, never on ``workers``
    size = max(1, min(_CHUNK, _CHUNK_FLOATS // (n_y * n_y)))
    bounds = [(i, min(i + size, n)) for i in range(0, n, size)]
    if workers <= 1 or len(bounds) <= 1:
        return [fn(a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ab: fn(*ab), bounds))


def _expand(scenario: LinearScenario, t: int, prev: _Level, workers: int, keep_covs: bool = True) -> _Level:
    N = len(prev.X)
    U = len(scenario.controls)
    X = np.stack([scenario.step_states(prev.X, u) for u in range(U)], axis=1).reshape(N * U, -1)
    parent = np.repeat(np.arange(N), U)
    control = np.tile(np.arange(U), N)
    A, W = scenario.target.A, scenario.target.W

    def work(a, b):
        m = scenario.infos(t, X[a:b], prev.X[parent[a:b]])
        covs = step_info(prev.covs[parent[a:b]], m, A, W)
        try:
            costs = logdet(covs)
        except NotPositiveDefiniteError:
            bad = next(i for i in range(b - a) if not _is_pd(covs[i]))
            raise SingularCovarianceError(t, a + bad) from None
        return covs if keep_covs else None, np.atleast_1d(costs)

    parts = _map_chunks(work, N * U, workers, scenario.n_y)
    covs = np.concatenate([p[0] for p in parts]) if keep_covs else None
    costs = np.concatenate([p[1] for p in parts])
    return _Level(X, covs, costs, parent, control)


def _is_pd(x: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(x)
        return True
    except np.linalg.LinAlgError:
        return False


def _root(scenario: LinearScenario) -> _Level:
    try:
        cost = logdet(scenario.sigma0)
    except NotPositiveDefiniteError:
        raise SingularCovarianceError(0, 0) from None
    return _Level(
        scenario.x0.array[None, :],
        scenario.sigma0[None],
        np.array([cost]),
        np.array([-1]),
        np.array([-1]),
    )


def _backtrack(levels: list[_Level], leaf: int) -> list[int]:
    controls = []
    idx = leaf
    for lvl in reversed(levels[1:]):
        controls.append(int(lvl.control[idx]))
        idx = int(lvl.parent[idx])
    return controls[::-1]


def replay(scenario: LinearScenario, controls: Sequence[int]):
    """Recompute states and covariances along a control sequence."""
    X = scenario.x0.array[None, :]
    cov = scenario.sigma0[None]
    states, covs = [scenario.x0], [scenario.sigma0.copy()]
    for t, u in enumerate(controls, start=1):
        Xn = scenario.step_states(X, int(u))
        m = scenario.infos(t, Xn, X)
        cov = step_info(cov, m, scenario.target.A, scenario.target.W)
        X = Xn
        states.append(scenario.state(X[0]))
        covs.append(cov[0].copy())
    return states, covs


def _result(scenario, controls, tree_sizes, expanded, started, label) -> PlanResult:
    states, covs = replay(scenario, controls)
    return PlanResult(
        controls=list(controls),
        states=states,
        covs=covs,
        final_cost=logdet(covs[-1]),
        tree_sizes=list(tree_sizes),
        wall_time=time.perf_counter() - started,
        planner=label,
        expanded_sizes=list(expanded),
    )


def tie_argmin(costs: np.ndarray) -> int:
    """Index of the minimum; near-ties (within ``TIE_ATOL``) go to the lowest index."""
    costs = np.asarray(costs)
    return int(np.flatnonzero(costs <= costs.min() + TIE_ATOL)[0])


def _check_horizon(T: int):
    if T < 1:
        raise ValueError(f"horizon T must be >= 1, got {T}")


def fvi(scenario: LinearScenario, T: int, *, max_leaves: int = DEFAULT_FVI_BUDGET, workers: int = 1) -> PlanResult:
    """Exhaustive forward value iteration over all ``|U|**T`` control sequences."""
    _check_horizon(T)
    U = len(scenario.controls)
    if T * math.log(U) > math.log(max_leaves) + 1e-12:
        raise BudgetExceeded(
            f"fvi would expand {U}^{T} leaves, above the budget of {max_leaves}; lower T or use rvi"
        )
    started = time.perf_counter()
    levels = [_root(scenario)]
    for t in range(1, T + 1):
        levels.append(_expand(scenario, t, levels[-1], workers, keep_covs=t < T))
    sizes = [len(lvl.X) for lvl in levels]
    best = tie_argmin(levels[-1].costs)
    return _result(scenario, _backtrack(levels, best), sizes, sizes, started, "fvi")


def greedy(scenario: LinearScenario, T: int, *, workers: int = 1) -> PlanResult:
    """Pick the control minimising the one-step posterior log det at every step.

    Ties (within ``TIE_ATOL``) go to the lowest control index.
    """
    _check_horizon(T)
    started = time.perf_counter()
    cur = _root(scenario)
    controls = []
    for t in range(1, T + 1):
        lvl = _expand(scenario, t, cur, workers)
        k = tie_argmin(lvl.costs)
        controls.append(int(lvl.control[k]))
        cur = _Level(lvl.X[k : k + 1], lvl.covs[k : k + 1], lvl.costs[k : k + 1], np.array([0]), lvl.control[k : k + 1])
    U = len(scenario.controls)
    return _result(scenario, controls, [1] * (T + 1), [1] + [U] * T, started, "greedy")


class _BallIndex:
    """Static index over one level's states answering ``d(x_i, x) <= delta``."""

    def __init__(self, X: np.ndarray, angular_mask, weights, delta: float):
        self.X = np.asarray(X, dtype=float)
        self.mask = np.asarray(angular_mask, dtype=bool)
        self.weights = np.asarray(weights, dtype=float)
        self.delta = float(delta)
        if self.delta == 0:
            keys = np.round(self.X / KEY_QUANTUM).astype(np.int64)
            _, group = np.unique(keys, axis=0, return_inverse=True)
            self.group = group.ravel()
            order = np.argsort(self.group, kind="stable")
            bounds = np.flatnonzero(np.diff(self.group[order])) + 1
            self.members = np.split(order, bounds)  # indexed by group id
            return
        scale = np.sqrt(self.weights)
        Z = np.where(self.mask, wrap_angle(self.X) + math.pi, self.X) * scale
        lo = Z.min(axis=0)
        box = np.where(self.mask, TWO_PI * scale, Z.max(axis=0) - lo + 2.0 * self.delta + 1.0)
        Z = np.where(self.mask, Z, Z - lo)
        # periodic box along angles; non-angular sides are wide enough never to wrap
        Z = np.clip(np.where(Z >= box, Z - box, Z), 0.0, None)
        self.Z = Z
        self.tree = cKDTree(Z, boxsize=box)

    def around(self, i: int) -> np.ndarray:
        """Indices ``j != i`` within ``delta`` of row ``i``, ascending."""
        if self.delta == 0:
            g = self.members[self.group[i]]
            return g[g != i]
        cand = np.array(self.tree.query_ball_point(self.Z[i], self.delta * (1 + 1e-9) + 1e-12), dtype=np.int64)
        cand = cand[cand != i]
        if len(cand) == 0:
            return cand
        # the exact metric decides boundary cases
        d = metric_arrays(self.X[cand], self.X[i], self.mask, self.weights)
        return np.sort(cand[d <= self.delta])


def _prune(lvl: _Level, scenario: LinearScenario, epsilon: float, delta: float, tol: float) -> np.ndarray:
    """Alg. 2 retention on one level, returned in ascending-cost order.

    Whenever a node is retained it pushes its single-reference margin
    ``lambda_min(Sigma_i + eps I - Sigma_j)`` to every later delta-neighbour
    ``i``, so most discards need no work of their own. The simplex solve runs
    only for nodes with two or more retained neighbours none of which settles
    the query alone.
    """
    n = len(lvl.costs)
    order = np.argsort(lvl.costs, kind="stable")
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    index = _BallIndex(lvl.X, scenario.angular_mask, scenario.weights, delta)

    finite = not math.isinf(epsilon)
    covs = lvl.covs
    shift = epsilon * np.eye(covs.shape[-1]) if finite else None
    settled = np.zeros(n, dtype=bool)  # some retained neighbour alone makes it redundant
    seen = [[] for _ in range(n)] if finite else None  # retained earlier neighbours, in rank order
    keep = []
    for i in order.tolist():
        if settled[i]:
            continue
        if finite and len(seen[i]) > 1:
            if is_eps_redundant(RedundancyQuery(covs[i], list(covs[seen[i]]), epsilon, tol)):
                continue
        keep.append(i)
        nxt = index.around(i)
        nxt = nxt[rank[nxt] > rank[i]]
        if len(nxt) == 0:
            continue
        if not finite:
            settled[nxt] = True
            continue
        D = (covs[nxt] + shift) - covs[i]
        margin = np.linalg.eigvalsh(0.5 * (D + np.swapaxes(D, -1, -2)))[:, 0]
        settled[nxt[margin >= -tol]] = True
        for j in nxt.tolist():
            seen[j].append(i)
    return np.array(keep, dtype=np.int64)


def rvi(
    scenario: LinearScenario,
    T: int,
    epsilon: float = 0.0,
    delta: float = 0.0,
    *,
    tol: float = DEFAULT_TOL,
    node_cap: int = DEFAULT_NODE_CAP,
    workers: int = 1,
) -> PlanResult:
    """(eps, delta)-reduced value iteration.

    At each level the children are sorted by log det; the cheapest is always
    kept and every other child is dropped when its retained delta-neighbours
    make it eps-redundant. ``epsilon = math.inf`` keeps only the cheapest
    node among mutually delta-crossing ones.

    The pruning rule may drop the node greedy passes through, after which
    every retained leaf can be worse than the greedy plan. The greedy plan is
    therefore computed alongside and returned when it is cheaper, so the
    result is never worse than :func:`greedy`; ``tree_sizes`` always describe
    the pruned tree.
    """
    _check_horizon(T)
    if epsilon < 0 or delta < 0:
        raise ValueError("epsilon and delta must be non-negative")
    started = time.perf_counter()
    levels = [_root(scenario)]
    sizes, expanded = [1], [1]
    U = len(scenario.controls)
    for t in range(1, T + 1):
        n_children = len(levels[-1].X) * U
        if n_children > node_cap:
            raise NodeCapExceeded(t, n_children, node_cap)
        lvl = _expand(scenario, t, levels[-1], workers)
        keep = _prune(lvl, scenario, epsilon, delta, tol)
        # retained nodes stay in sorted-cost order
        levels.append(_Level(lvl.X[keep], lvl.covs[keep], lvl.costs[keep], lvl.parent[keep], lvl.control[keep]))
        sizes.append(len(keep))
        expanded.append(n_children)
    best = tie_argmin(levels[-1].costs)
    label = f"rvi(eps={epsilon:g},delta={delta:g})"
    result = _result(scenario, _backtrack(levels, best), sizes, expanded, started, label)
    g = greedy(scenario, T, workers=workers)
    return prefer_greedy(result, g, started)


def prefer_greedy(result: PlanResult, g: PlanResult, started: float) -> PlanResult:
    """``result`` unless the greedy plan beats it by more than ``TIE_ATOL``."""
    if g.final_cost < result.final_cost - TIE_ATOL:
        result = replace(result, controls=g.controls, states=g.states, covs=g.covs, final_cost=g.final_cost)
    return replace(result, wall_time=time.perf_counter() - started)
