"""Differential-drive sensor tracking a double-integrator target.

The sensor measures range and bearing to the target position. Range noise grows
with distance, faster when tree discs block the line of sight; bearing noise
grows with sensor speed; beyond ``max_range`` nothing is measured.

Planning runs inside a receding-horizon loop. The filter keeps the predicted
mean ``m`` and covariance ``P`` of the target at the next measurement time.
Each step predicts the open-loop target path ``m, A m, A^2 m, ...``,
linearizes the observation about it, plans ``T`` steps ahead, applies the first
control, measures, and runs one extended Kalman filter step.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, PlannerAbort
from ..kalman import LinearTargetModel, logdet, predict_cov, riccati_update, symmetrize
from ..search import LinearScenario, PlanResult, SensorState, fvi, greedy, rvi, wrap_angle

SMALL_TURN = 1e-3
SPEEDS = (0.0, 1.0, 2.0, 3.0)
TURN_RATES = (0.0, math.pi / 2, -math.pi / 2, math.pi, -math.pi)
PRIMITIVES = tuple((v, w) for v in SPEEDS for w in TURN_RATES)
METRIC_WEIGHTS = (1.0, 1.0, 0.5)
LOST_WINDOW = 10


@dataclass
class TrackingWorld:
    tau: float = 0.5
    q: float = 0.2
    max_range: float = 15.0
    a0: float = 0.1
    a1: float = 0.05
    a2: float = 1.0
    b0: float = 0.02
    b1: float = 0.05
    trees: list = field(default_factory=list)
    arena: tuple = (-60.0, 60.0, -60.0, 60.0)
    sensor_start: tuple = (0.0, 0.0, 0.0)
    target_start: tuple = (5.0, 2.0, 1.0, 0.5)
    prior_cov: tuple = (1.0, 1.0, 0.25, 0.25)

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError("tracking.tau must be positive")
        if not self.q > 0:
            raise ConfigError("tracking.q must be positive")
        if not self.max_range > 0:
            raise ConfigError("tracking.max_range must be positive")
        if min(self.a0, self.a1, self.a2, self.b0, self.b1) < 0:
            raise ConfigError("noise coefficients must be non-negative")
        if self.a0 <= 0 or self.b0 <= 0:
            raise ConfigError("a0 and b0 must be positive so the noise covariance is non-singular")
        self.trees = [(float(x), float(y), float(r)) for x, y, r in self.trees]

    @property
    def tree_array(self) -> np.ndarray:
        return np.array(self.trees, dtype=float).reshape(-1, 3)

    @property
    def A(self) -> np.ndarray:
        I2 = np.eye(2)
        return np.block([[I2, self.tau * I2], [np.zeros((2, 2)), I2]])

    @property
    def W(self) -> np.ndarray:
        t, I2 = self.tau, np.eye(2)
        return self.q * np.block([[t**3 / 3 * I2, t**2 / 2 * I2], [t**2 / 2 * I2, t * I2]])

    def target_model(self) -> LinearTargetModel:
        return LinearTargetModel(self.A, self.W)


def poisson_disc_trees(
    seed: int,
    arena: tuple,
    min_dist: float = 8.0,
    radius: float = 1.0,
    attempts: int = 3000,
    keep_clear: tuple = (0.0, 0.0, 4.0),
) -> list[tuple[float, float, float]]:
    """Dart-throwing Poisson-disc sample of tree discs (deterministic per seed)."""
    rng = np.random.default_rng(seed)
    x0, x1, y0, y1 = arena
    cx, cy, clear = keep_clear
    pts: list[tuple[float, float]] = []
    for _ in range(attempts):
        p = (rng.uniform(x0, x1), rng.uniform(y0, y1))
        if math.hypot(p[0] - cx, p[1] - cy) < clear + radius:
            continue
        if all(math.hypot(p[0] - a, p[1] - b) >= min_dist for a, b in pts):
            pts.append(p)
    return [(a, b, radius) for a, b in pts]


def _arc(X: np.ndarray, v: float, w: float, tau: float) -> np.ndarray:
    x, y, th = X[:, 0], X[:, 1], X[:, 2]
    if abs(tau * w) < SMALL_TURN:
        mid = th + tau * w / 2.0
        dx, dy = tau * v * np.cos(mid), tau * v * np.sin(mid)
    else:
        dx = v / w * (np.sin(th + tau * w) - np.sin(th))
        dy = v / w * (np.cos(th) - np.cos(th + tau * w))
    return np.stack([x + dx, y + dy, wrap_angle(th + tau * w)], axis=1)


def diffdrive_batch(X: np.ndarray, u: tuple[float, float], tau: float) -> np.ndarray:
    return _arc(np.asarray(X, dtype=float).reshape(-1, 3), float(u[0]), float(u[1]), tau)


def diffdrive_state(x, y, theta) -> SensorState:
    return SensorState((float(x), float(y), float(theta)), (False, False, True), METRIC_WEIGHTS)


def diffdrive_step(x: SensorState, u: tuple[float, float], tau: float) -> SensorState:
    """Unicycle arc over one period; straight-line midpoint form for tiny turns."""
    return diffdrive_state(*diffdrive_batch(x.array[None], u, tau)[0])


def target_step(y: np.ndarray, world: TrackingWorld, rng: np.random.Generator) -> np.ndarray:
    L = np.linalg.cholesky(world.W)
    return world.A @ np.asarray(y, dtype=float) + L @ rng.standard_normal(4)


def range_bearing(x, y) -> tuple[float, float]:
    """Range and world-frame bearing from sensor position to target position."""
    xa = x.array if isinstance(x, SensorState) else np.asarray(x, dtype=float)
    dx, dy = float(y[0] - xa[0]), float(y[1] - xa[1])
    r = math.hypot(dx, dy)
    if r == 0.0:
        raise ValueError("target coincides with the sensor; range-bearing undefined")
    return r, math.atan2(dy, dx)


def _geometry(P: np.ndarray, Y: np.ndarray):
    d = Y - P
    r = np.hypot(d[:, 0], d[:, 1])
    return d, r


def _jacobians(d: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Stack of 2x4 range-bearing Jacobians for offsets ``d = y - x``."""
    H = np.zeros((len(r), 2, 4))
    H[:, 0, 0] = d[:, 0] / r
    H[:, 0, 1] = d[:, 1] / r
    H[:, 1, 0] = -d[:, 1] / r**2
    H[:, 1, 1] = d[:, 0] / r**2
    return H


def linearize_obs(x, y_hat) -> np.ndarray:
    """Jacobian of (range, bearing) w.r.t. the target state, at ``y_hat``."""
    xa = x.array if isinstance(x, SensorState) else np.asarray(x, dtype=float)
    d, r = _geometry(xa[None, :2], np.asarray(y_hat, dtype=float)[None, :2])
    if r[0] == 0.0:
        raise ValueError("cannot linearize at the sensor position (r = 0)")
    return _jacobians(d, r)[0]


def _trees_crossed(P: np.ndarray, Y: np.ndarray, trees: np.ndarray) -> np.ndarray:
    if len(trees) and len(P):
        # a disc can only touch a segment inside the segments' bounding box
        lo = np.minimum(P.min(axis=0), Y.min(axis=0))
        hi = np.maximum(P.max(axis=0), Y.max(axis=0))
        r = trees[:, 2:3]
        trees = trees[np.all((trees[:, :2] >= lo - r) & (trees[:, :2] <= hi + r), axis=1)]
    if len(trees) == 0:
        return np.zeros(len(P), dtype=np.int64)
    seg = Y - P
    c = trees[None, :, :2]
    L2 = np.maximum(np.sum(seg**2, axis=1), 1e-300)[:, None]
    u = np.clip(np.sum((c - P[:, None, :]) * seg[:, None, :], axis=2) / L2, 0.0, 1.0)
    near = P[:, None, :] + u[..., None] * seg[:, None, :]
    dist = np.hypot(near[..., 0] - c[..., 0], near[..., 1] - c[..., 1])
    return np.sum(dist <= trees[None, :, 2], axis=1)


def _noise_std(world: TrackingWorld, P: np.ndarray, P_prev: np.ndarray, Y: np.ndarray):
    """Per-row range and bearing standard deviations plus the in-range mask."""
    _, r = _geometry(P, Y)
    k = _trees_crossed(P, Y, world.tree_array)
    speed = np.hypot(*(P - P_prev).T) / world.tau
    sr = world.a0 + world.a1 * r * (1.0 + world.a2 * k)
    sa = world.b0 + world.b1 * speed
    return sr, sa, r <= world.max_range


def noise_cov(x, x_prev, y, world: TrackingWorld) -> np.ndarray | None:
    """Diagonal measurement covariance, or ``None`` when the target is out of range."""
    xa = x.array if isinstance(x, SensorState) else np.asarray(x, dtype=float)
    xp = x_prev.array if isinstance(x_prev, SensorState) else np.asarray(x_prev, dtype=float)
    sr, sa, ok = _noise_std(world, xa[None, :2], xp[None, :2], np.asarray(y, dtype=float)[None, :2])
    if not ok[0]:
        return None
    return np.diag([sr[0] ** 2, sa[0] ** 2])


def _info_stack(world, P, P_prev, Y):
    d, r = _geometry(P, Y)
    sr, sa, ok = _noise_std(world, P, P_prev, Y)
    ok &= r > 0
    H = _jacobians(d, np.where(r > 0, r, 1.0))
    w = np.stack([1.0 / sr**2, 1.0 / sa**2], axis=1) * ok[:, None]
    return np.einsum("nki,nk,nkj->nij", H, w, H)


@dataclass(frozen=True)
class PlannerConfig:
    kind: str = "rvi"
    T: int = 7
    epsilon: float = 0.1
    delta: float = 1.0
    node_cap: int = 2_000_000

    def __post_init__(self):
        if self.kind not in ("rvi", "greedy", "fvi"):
            raise ConfigError(f"planner kind must be rvi, greedy or fvi, got {self.kind!r}")
        if self.T < 1:
            raise ConfigError("planner horizon T must be >= 1")
        if self.epsilon < 0 or self.delta < 0:
            raise ConfigError("epsilon and delta must be non-negative")

    @property
    def label(self) -> str:
        if self.kind == "rvi":
            return f"rvi(eps={self.epsilon:g},delta={self.delta:g})"
        return self.kind


def planning_scenario(world: TrackingWorld, x: np.ndarray, m: np.ndarray, P: np.ndarray) -> LinearScenario:
    """Linearized scenario rooted at sensor pose ``x`` with predicted target ``(m, P)``."""
    A = world.A
    preds = [m]

    def predicted(level: int) -> np.ndarray:
        while len(preds) < level:
            preds.append(A @ preds[-1])
        return preds[level - 1]

    def motion_batch(X, u):
        return diffdrive_batch(X, PRIMITIVES[u], world.tau)

    def info_batch(level, X, X_parent):
        Y = np.broadcast_to(predicted(level)[:2], (len(X), 2))
        return _info_stack(world, X[:, :2], X_parent[:, :2], Y)

    return LinearScenario(
        None,
        list(PRIMITIVES),
        world.target_model(),
        None,
        diffdrive_state(*x),
        P,
        time_varying=True,
        motion_batch=motion_batch,
        info_batch=info_batch,
        name="tracking",
    )


def plan_once(cfg: PlannerConfig, sc: LinearScenario, workers: int = 1) -> PlanResult:
    if cfg.kind == "greedy":
        return greedy(sc, cfg.T, workers=workers)
    if cfg.kind == "fvi":
        return fvi(sc, cfg.T, workers=workers)
    return rvi(sc, cfg.T, cfg.epsilon, cfg.delta, node_cap=cfg.node_cap, workers=workers)


@dataclass
class TrackResult:
    targets: np.ndarray  # (T_max, 4) true target after each step
    means: np.ndarray  # (T_max, 4) filtered estimate
    covs: np.ndarray  # (T_max, 4, 4) filtered covariance
    sensors: np.ndarray  # (T_max, 3)
    measurements: list  # (r, bearing) or None when absent
    planned_costs: np.ndarray
    predicted_logdet: np.ndarray  # log det of the predicted covariance after each step
    controls: list
    first_tree_sizes: list
    max_range: float = 15.0

    @property
    def position_error(self) -> np.ndarray:
        return np.linalg.norm(self.means[:, :2] - self.targets[:, :2], axis=1)

    @property
    def velocity_error(self) -> np.ndarray:
        return np.linalg.norm(self.means[:, 2:] - self.targets[:, 2:], axis=1)

    @property
    def nees(self) -> np.ndarray:
        e = self.means - self.targets
        return np.einsum("ti,ti->t", e, np.linalg.solve(self.covs, e[..., None])[..., 0])

    @property
    def lost(self) -> bool:
        r = np.hypot(*(self.targets[-LOST_WINDOW:, :2] - self.sensors[-LOST_WINDOW:, :2]).T)
        return bool(np.all(r > self.max_range))


def _streams(seed: int, measurement_seed: int | None):
    ss = np.random.SeedSequence(seed).spawn(3)
    target_rng = np.random.default_rng(ss[0])
    init_rng = np.random.default_rng(ss[1])
    meas_rng = np.random.default_rng(ss[2] if measurement_seed is None else measurement_seed)
    return target_rng, init_rng, meas_rng


def mpc_run(
    world: TrackingWorld,
    cfg: PlannerConfig,
    T_max: int,
    seed: int,
    *,
    oracle: bool = False,
    measurement_seed: int | None = None,
    controls: list[int] | None = None,
    workers: int = 1,
) -> TrackResult:
    """Receding-horizon tracking run.

    ``oracle=True`` linearizes the filter at the true target (a consistency
    check, not a deployable filter). ``controls`` replays a fixed control
    sequence instead of planning.
    """
    if T_max < 1:
        raise ConfigError("T_max must be >= 1")
    if controls is None and cfg.T > T_max:
        raise ConfigError(f"planning horizon T={cfg.T} exceeds T_max={T_max}")
    target_rng, init_rng, meas_rng = _streams(seed, measurement_seed)
    A, W = world.A, world.W
    Lw = np.linalg.cholesky(W)
    P0 = np.diag(world.prior_cov).astype(float)

    # realizations are drawn up front so every planner sees the same ones
    y = np.array(world.target_start, dtype=float)
    y0_est = y + np.linalg.cholesky(P0) @ init_rng.standard_normal(4)
    truth = []
    for _ in range(T_max):
        y = A @ y + Lw @ target_rng.standard_normal(4)
        truth.append(y)
    truth = np.array(truth)
    meas_noise = meas_rng.standard_normal((T_max, 2))

    m = A @ y0_est
    P = symmetrize(A @ P0 @ A.T + W)
    x = np.array(world.sensor_start, dtype=float)
    means, covs, sensors, zs, planned, pred_ld, used = [], [], [], [], [], [], []
    first_sizes: list = []
    for t in range(T_max):
        if controls is None:
            sc = planning_scenario(world, x, m, P)
            try:
                plan = plan_once(cfg, sc, workers)
            except PlannerAbort as exc:
                raise PlannerAbort(f"MPC step {t}: {exc}") from exc
            u = plan.controls[0]
            planned.append(plan.final_cost)
            if t == 0:
                first_sizes = list(plan.tree_sizes)
        else:
            u = int(controls[t])
            planned.append(float("nan"))
        used.append(int(u))
        x_prev = x
        x = diffdrive_batch(x[None], PRIMITIVES[u], world.tau)[0]
        y_true = truth[t]

        sr, sa, ok = _noise_std(world, x[None, :2], x_prev[None, :2], y_true[None, :2])
        if ok[0]:
            r, a = range_bearing(x, y_true)
            z = np.array([r + sr[0] * meas_noise[t, 0], a + sa[0] * meas_noise[t, 1]])
        else:
            z = None
        zs.append(None if z is None else (float(z[0]), float(z[1])))

        if z is not None:
            lin = y_true if oracle else m
            d, rr = _geometry(x[None, :2], lin[None, :2])
            H = _jacobians(d, rr)[0]
            vr, va, _ = _noise_std(world, x[None, :2], x_prev[None, :2], lin[None, :2])
            Vinv = np.diag([1.0 / vr[0] ** 2, 1.0 / va[0] ** 2])
            r_hat, a_hat = math.hypot(*d[0]), math.atan2(d[0, 1], d[0, 0])
            if oracle:
                # innovation of the model linearized at the truth
                r_true, a_true = range_bearing(x, y_true)
                nu = np.array([z[0] - r_true, float(wrap_angle(z[1] - a_true))]) + H @ (y_true - m)
            else:
                nu = np.array([z[0] - r_hat, float(wrap_angle(z[1] - a_hat))])
            P_post = riccati_update(P, H.T @ Vinv @ H)
            m_post = m + P_post @ H.T @ Vinv @ nu
        else:
            P_post, m_post = P, m
        means.append(m_post)
        covs.append(P_post)
        sensors.append(x.copy())
        m = A @ m_post
        P = predict_cov(P_post, A, W)
        pred_ld.append(logdet(P))

    return TrackResult(
        targets=truth,
        means=np.array(means),
        covs=np.array(covs),
        sensors=np.array(sensors),
        measurements=zs,
        planned_costs=np.array(planned),
        predicted_logdet=np.array(pred_ld),
        controls=used,
        first_tree_sizes=first_sizes,
        max_range=world.max_range,
    )


@dataclass
class ConfigSummary:
    label: str
    position_rmse: np.ndarray  # per step
    velocity_rmse: np.ndarray
    mean_logdet: np.ndarray
    lost_fraction: float
    first_tree_sizes: list

    @property
    def mean_position_rmse(self) -> float:
        return float(np.mean(self.position_rmse))

    @property
    def mean_velocity_rmse(self) -> float:
        return float(np.mean(self.velocity_rmse))

    @property
    def mean_final_logdet(self) -> float:
        return float(self.mean_logdet[-1])


def run_seeds(base_seed: int, runs: int) -> list[int]:
    """Per-run seeds shared by every configuration (paired comparison)."""
    return [int(s) for s in np.random.SeedSequence(base_seed).generate_state(runs)]


def _one(args):
    world, cfg, T_max, seed = args
    return mpc_run(world, cfg, T_max, seed)


def summarize(label: str, results: list[TrackResult]) -> ConfigSummary:
    pos = np.array([r.position_error for r in results])
    vel = np.array([r.velocity_error for r in results])
    ld = np.array([r.predicted_logdet for r in results])
    return ConfigSummary(
        label=label,
        position_rmse=np.sqrt(np.mean(pos**2, axis=0)),
        velocity_rmse=np.sqrt(np.mean(vel**2, axis=0)),
        mean_logdet=np.mean(ld, axis=0),
        lost_fraction=float(np.mean([r.lost for r in results])),
        first_tree_sizes=results[0].first_tree_sizes if results else [],
    )


def monte_carlo(
    world: TrackingWorld,
    configs: list[PlannerConfig],
    runs: int,
    base_seed: int,
    T_max: int = 100,
    *,
    workers: int = 1,
) -> tuple[list[ConfigSummary], dict[str, list[TrackResult]]]:
    """Paired Monte-Carlo comparison; run ``i`` uses the same seed for every config."""
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    if not configs:
        raise ConfigError("at least one planner config is required")
    seeds = run_seeds(base_seed, runs)
    jobs = [(world, cfg, T_max, s) for cfg in configs for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, os.cpu_count() or 1)) as pool:
            flat = list(pool.map(_one, jobs))
    else:
        flat = [_one(j) for j in jobs]
    per: dict[str, list[TrackResult]] = {}
    summaries = []
    for i, cfg in enumerate(configs):
        chunk = flat[i * runs : (i + 1) * runs]
        per[cfg.label] = chunk
        summaries.append(summarize(cfg.label, chunk))
    return summaries, per
