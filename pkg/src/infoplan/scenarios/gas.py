"""Gas concentration mapping with a beam-integrating laser sensor.

The map is a ``width x height`` grid of cells; the target ``y`` holds one
concentration per cell, static (``A = I``, ``W = 0``). A pose ``(i, j, theta)``
sits at the centre of cell ``(i, j)`` and fires a beam along ``theta``. The
scalar measurement is ``sum_i l_i y_i + v`` where ``l_i`` is the beam length
inside cell ``i``.

Cells are flattened x-major: ``index = i * height + j``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, NodeCapExceeded, SingularCovarianceError
from ..kalman import LinearObservation, LinearTargetModel, logdet
from ..search import (
    LinearScenario,
    PlanResult,
    SensorState,
    fvi,
    greedy,
    replay,
    prefer_greedy,
    rvi,
    tie_argmin,
    wrap_angle,
)

N_ORIENT = 12
ORIENTATIONS = tuple(-math.pi + k * math.pi / 6.0 for k in range(N_ORIENT))
MOVES = ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1))
N_CONTROLS = len(MOVES) * N_ORIENT
GAS_PLANNERS = ("greedy", "rvi", "fvi")


@dataclass
class GasGrid:
    width: int = 20
    height: int = 20
    cell_size: float = 1.0
    prior_mean: np.ndarray | float = 0.0
    prior_var: float = 400.0
    prior_length_scale: float = 0.0
    sensor_noise_var: float = 1.0
    beam_max_range: float = 10.0
    start: tuple = (10, 10, 0.0)
    orientations: tuple = field(default=ORIENTATIONS, init=False)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ConfigError("gas grid needs positive width and height")
        if self.cell_size <= 0 or self.beam_max_range <= 0:
            raise ConfigError("cell_size and beam_max_range must be positive")
        if self.sensor_noise_var <= 0 or self.prior_var <= 0:
            raise ConfigError("sensor_noise_var and prior_var must be positive")
        i, j, _ = self.start
        if not (0 <= i < self.width and 0 <= j < self.height):
            raise ConfigError(f"start cell {(i, j)} outside the {self.width}x{self.height} grid")
        mean = np.broadcast_to(np.asarray(self.prior_mean, dtype=float), (self.n_cells,))
        self.prior_mean = np.array(mean)

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def cell_index(self, i: int, j: int) -> int:
        return int(i) * self.height + int(j)

    def centers(self) -> np.ndarray:
        i, j = np.meshgrid(np.arange(self.width), np.arange(self.height), indexing="ij")
        return (np.stack([i.ravel(), j.ravel()], axis=1) + 0.5) * self.cell_size

    @property
    def prior_cov(self) -> np.ndarray:
        n = self.n_cells
        if self.prior_length_scale <= 0:
            return self.prior_var * np.eye(n)
        c = self.centers()
        d2 = np.sum((c[:, None, :] - c[None, :, :]) ** 2, axis=-1)
        K = self.prior_var * np.exp(-0.5 * d2 / self.prior_length_scale**2)
        return K + 1e-6 * self.prior_var * np.eye(n)

    def start_state(self) -> SensorState:
        i, j, th = self.start
        return pose(float(i), float(j), float(th))


def pose(i: float, j: float, theta: float) -> SensorState:
    return SensorState((i, j, theta), (False, False, True), (1.0, 1.0, 1.0))


def orientation_index(theta: float) -> int:
    return int(round((float(wrap_angle(theta)) + math.pi) / (math.pi / 6.0))) % N_ORIENT


def _clip_to_box(ox, oy, dx, dy, length, xmax, ymax):
    """Parameter interval of ``o + s d`` (``0 <= s <= length``) inside the box."""
    lo, hi = 0.0, length
    for p, q in ((-dx, ox), (dx, xmax - ox), (-dy, oy), (dy, ymax - oy)):
        if p == 0.0:
            if q < 0.0:
                return None
            continue
        r = q / p
        if p < 0.0:
            lo = max(lo, r)
        else:
            hi = min(hi, r)
    return (lo, hi) if hi > lo else None


def beam_cell_lengths(grid: GasGrid, state: SensorState) -> dict[int, float]:
    """Length of the beam inside each traversed cell (grid traversal, axis stepping)."""
    i, j, theta = state.coords
    c = grid.cell_size
    ox, oy = (i + 0.5) * c, (j + 0.5) * c
    dx, dy = math.cos(theta), math.sin(theta)
    # snap axis-aligned directions so cos(pi/2) does not drift the ray
    dx = 0.0 if abs(dx) < 1e-15 else dx
    dy = 0.0 if abs(dy) < 1e-15 else dy
    span = _clip_to_box(ox, oy, dx, dy, grid.beam_max_range, grid.width * c, grid.height * c)
    if span is None:
        return {}
    s, s_end = span
    px, py = ox + s * dx, oy + s * dy
    # cell containing the point just after entry
    nudge = 1e-9 * c
    cx = min(max(int(math.floor((px + nudge * dx) / c)), 0), grid.width - 1)
    cy = min(max(int(math.floor((py + nudge * dy) / c)), 0), grid.height - 1)
    step_x = 1 if dx > 0 else (-1 if dx < 0 else 0)
    step_y = 1 if dy > 0 else (-1 if dy < 0 else 0)
    next_x = ((cx + (step_x > 0)) * c - ox) / dx if step_x else math.inf
    next_y = ((cy + (step_y > 0)) * c - oy) / dy if step_y else math.inf
    dt_x = c / abs(dx) if step_x else math.inf
    dt_y = c / abs(dy) if step_y else math.inf

    out: dict[int, float] = {}
    while s < s_end and 0 <= cx < grid.width and 0 <= cy < grid.height:
        s_next = min(next_x, next_y, s_end)
        # corner crossings leave rounding slivers; they are not traversals
        if s_next - s > 1e-12 * c:
            k = grid.cell_index(cx, cy)
            out[k] = out.get(k, 0.0) + (s_next - s)
        s = s_next
        if next_x <= next_y:
            cx += step_x
            next_x += dt_x
        else:
            cy += step_y
            next_y += dt_y
    return out


def beam_row(grid: GasGrid, state: SensorState) -> np.ndarray:
    h = np.zeros(grid.n_cells)
    for k, v in beam_cell_lengths(grid, state).items():
        h[k] = v
    return h


def gasbot_step(grid: GasGrid, state: SensorState, u: int) -> SensorState:
    """Move one cell (or hold) and set the orientation; off-grid moves hold position."""
    if not (0 <= int(u) < N_CONTROLS) or int(u) != u:
        raise ValueError(f"gas control index must be in [0, {N_CONTROLS}), got {u}")
    move, k = divmod(int(u), N_ORIENT)
    i, j, _ = state.coords
    ni, nj = i + MOVES[move][0], j + MOVES[move][1]
    if not (0 <= ni < grid.width and 0 <= nj < grid.height):
        ni, nj = i, j
    return pose(ni, nj, ORIENTATIONS[k])


def gas_observation(grid: GasGrid, state: SensorState) -> LinearObservation:
    return LinearObservation(beam_row(grid, state)[None, :], np.array([[grid.sensor_noise_var]]))


class _PoseTable:
    """All ``width * height * 12`` poses, their beam rows and successor poses."""

    def __init__(self, grid: GasGrid):
        self.grid = grid
        n_pos = grid.n_cells
        self.rows = np.zeros((n_pos * N_ORIENT, grid.n_cells))
        for i in range(grid.width):
            for j in range(grid.height):
                base = grid.cell_index(i, j) * N_ORIENT
                for k, th in enumerate(ORIENTATIONS):
                    self.rows[base + k] = beam_row(grid, pose(i, j, th))
        # successor pose of each position under each control, in control order
        self.children = np.empty((n_pos, N_CONTROLS), dtype=np.int64)
        for i in range(grid.width):
            for j in range(grid.height):
                for u in range(N_CONTROLS):
                    nxt = gasbot_step(grid, pose(i, j, 0.0), u)
                    self.children[grid.cell_index(i, j), u] = self.pose_id(nxt)

    def pose_id(self, state: SensorState) -> int:
        i, j, th = state.coords
        return self.grid.cell_index(i, j) * N_ORIENT + orientation_index(th)

    def coords(self, pid: np.ndarray) -> np.ndarray:
        pos, k = np.divmod(np.asarray(pid), N_ORIENT)
        i, j = np.divmod(pos, self.grid.height)
        return np.stack([i, j, np.asarray(ORIENTATIONS)[k]], axis=-1).astype(float)


def gas_scenario(grid: GasGrid, table: _PoseTable | None = None) -> LinearScenario:
    """Dense scenario usable by every generic planner (practical for small grids)."""
    n = grid.n_cells
    target = LinearTargetModel(np.eye(n), np.zeros((n, n)))
    table = table or _PoseTable(grid)
    inv_v = 1.0 / grid.sensor_noise_var

    def motion_batch(X, u):
        pos = (X[:, 0] * grid.height + X[:, 1]).astype(np.int64)
        return table.coords(table.children[pos, u])

    def info_batch(t, X, X_parent):
        pos = (X[:, 0] * grid.height + X[:, 1]).astype(np.int64)
        k = np.array([orientation_index(th) for th in X[:, 2]])
        H = table.rows[pos * N_ORIENT + k]
        return inv_v * H[:, :, None] * H[:, None, :]

    sc = LinearScenario(
        lambda x, u: gasbot_step(grid, x, u),
        list(range(N_CONTROLS)),
        target,
        lambda x: gas_observation(grid, x),
        grid.start_state(),
        grid.prior_cov,
        motion_batch=motion_batch,
        info_batch=info_batch,
        name="gas",
    )
    sc.pose_table = table
    return sc


def _lowrank_search(grid, scenario, table, T, mode, node_cap):
    """Tree search on ``log det`` via the matrix determinant lemma.

    With ``A = I`` and ``W = 0`` the covariance after observing poses
    ``p_1..p_t`` satisfies
    ``log det Sigma_t = log det Sigma_0 - log det(I + G_pp)`` where
    ``G = H Sigma_0 H^T / V`` over all poses. Each node keeps the inverse
    Cholesky factor of ``I + G_pp``, so a child costs one triangular product.
    Node ordering and pruning mirror the generic planners.
    """
    G = table.rows @ scenario.sigma0 @ table.rows.T / grid.sensor_noise_var
    g_diag = np.diag(G).copy()
    cost0 = logdet(scenario.sigma0)

    start = table.pose_id(scenario.x0)
    pid = np.array([start])
    path = np.zeros((1, 0), dtype=np.int64)
    linv = np.zeros((1, 0, 0))
    costs = np.array([cost0])
    parents, controls = [], []
    sizes, expanded = [1], [1]
    U = N_CONTROLS
    for t in range(1, T + 1):
        N = len(pid)
        if N * U > node_cap:
            raise NodeCapExceeded(t, N * U, node_cap)
        child = table.children[pid // N_ORIENT]  # (N, U)
        g = G[path[:, :, None], child[:, None, :]]  # (N, t-1, U)
        y = np.matmul(linv, g)
        d = 1.0 + g_diag[child] - np.einsum("nkc,nkc->nc", y, y)
        if np.any(d <= 0):
            raise SingularCovarianceError(t, int(np.argmin(d.ravel())))
        child_cost = (costs[:, None] - np.log(d)).ravel()
        child_pid = child.ravel()

        if mode == "fvi":
            keep = np.arange(N * U)
        elif mode == "greedy":
            keep = np.array([tie_argmin(child_cost)])
        else:
            # eps = inf, delta = 0: cheapest node per pose, kept in cost order
            order = np.argsort(child_cost, kind="stable")
            _, first = np.unique(child_pid[order], return_index=True)
            keep = order[np.sort(first)]

        par, ctl = np.divmod(keep, U)
        yk = y[par, :, ctl]  # (K, t-1)
        dk = d[par, ctl]
        sq = np.sqrt(dk)
        row = -np.einsum("kij,ki->kj", linv[par], yk) / sq[:, None]
        new = np.zeros((len(keep), t, t))
        new[:, : t - 1, : t - 1] = linv[par]
        new[:, t - 1, : t - 1] = row
        new[:, t - 1, t - 1] = 1.0 / sq
        linv = new
        path = np.concatenate([path[par], child_pid[keep][:, None]], axis=1)
        pid = child_pid[keep]
        costs = child_cost[keep]
        parents.append(par)
        controls.append(ctl)
        sizes.append(len(keep))
        expanded.append(N * U)

    idx = tie_argmin(costs)
    seq = []
    for par, ctl in zip(reversed(parents), reversed(controls)):
        seq.append(int(ctl[idx]))
        idx = int(par[idx])
    return seq[::-1], sizes, expanded


def _lowrank_plan(grid, sc, T, planner, node_cap, started) -> PlanResult:
    seq, sizes, expanded = _lowrank_search(grid, sc, sc.pose_table, T, planner, node_cap)
    states, covs = replay(sc, seq)
    label = {"greedy": "greedy", "fvi": "fvi", "rvi": "rvi(eps=inf,delta=0)"}[planner]
    return PlanResult(
        controls=seq,
        states=states,
        covs=covs,
        final_cost=logdet(covs[-1]),
        tree_sizes=[1] * (T + 1) if planner == "greedy" else sizes,
        wall_time=time.perf_counter() - started,
        planner=label,
        expanded_sizes=expanded,
    )


@dataclass
class GasRun:
    plan: PlanResult
    field: np.ndarray


def sample_field(grid: GasGrid, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(grid.prior_cov)
    return grid.prior_mean + L @ rng.standard_normal(grid.n_cells)


def run_gas_experiment(
    grid: GasGrid,
    T: int,
    planner: str = "rvi",
    *,
    field_seed: int = 0,
    node_cap: int = 2_000_000,
    engine: str = "lowrank",
    scenario: LinearScenario | None = None,
) -> GasRun:
    """Plan a gas-mapping trajectory.

    ``planner`` is ``greedy``, ``rvi`` (``eps = inf``, ``delta = 0``) or
    ``fvi``. ``engine="dense"`` runs the generic planners instead of the
    low-rank tree search. The sampled field is returned for plotting only and
    never enters planning.
    """
    if planner not in GAS_PLANNERS:
        raise ConfigError(f"gas planner must be one of {GAS_PLANNERS}, got {planner!r}")
    if T < 1:
        raise ValueError(f"horizon T must be >= 1, got {T}")
    sc = scenario or gas_scenario(grid)
    started = time.perf_counter()
    if engine == "dense":
        if planner == "greedy":
            plan = greedy(sc, T)
        elif planner == "fvi":
            plan = fvi(sc, T)
        else:
            plan = rvi(sc, T, math.inf, 0.0, node_cap=node_cap)
    elif engine == "lowrank":
        plan = _lowrank_plan(grid, sc, T, planner, node_cap, started)
        if planner == "rvi":
            plan = prefer_greedy(plan, _lowrank_plan(grid, sc, T, "greedy", node_cap, started), started)
    else:
        raise ConfigError(f"unknown gas engine {engine!r}")
    return GasRun(plan, sample_field(grid, field_seed))


def reachable_positions(grid: GasGrid, t: int) -> int:
    """Cells reachable in exactly ``t`` moves (holding allowed, so within ``t``)."""
    i0, j0, _ = grid.start
    i, j = np.meshgrid(np.arange(grid.width), np.arange(grid.height), indexing="ij")
    return int(np.sum(np.abs(i - i0) + np.abs(j - j0) <= t))
