"""Random linear-Gaussian instances for oracle and bound checks.

The sensor walks on a lattice ``x' = x + u`` with step ``step``; the
translation is 1-Lipschitz, so ``L_f = 1`` exactly. The information matrix is

    M(x) = sum_k s_k(x) h_k h_k^T,   s_k(x) = 1 + c_k sin(w_k . x + phi_k)

with ``0 <= c_k < 1``. Because ``|s_k(x1) - s_k(x2)| <= c_k |w_k| d`` and
``s_k >= 1 - c_k``, every pair satisfies
``M(x1) <= (1 + L_m d) M(x2)`` with ``L_m = max_k c_k |w_k| / (1 - c_k)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..kalman import LinearObservation, LinearTargetModel
from ..search import LinearScenario, SensorState


@dataclass
class RandomInstance:
    scenario: LinearScenario
    L_f: float
    L_m: float
    seed: int
    params: dict


def _spd(rng: np.random.Generator, n: int, scale: float = 1.0) -> np.ndarray:
    B = rng.standard_normal((n, n))
    return scale * (B @ B.T) / n


def _moves(n_controls: int, dim: int, step: float) -> list[np.ndarray]:
    if dim == 1:
        table = {2: [-1.0, 1.0], 3: [-1.0, 0.0, 1.0]}
        if n_controls not in table:
            raise ValueError("1-D lattice supports 2 or 3 controls")
        return [np.array([step * m]) for m in table[n_controls]]
    basis = [np.zeros(dim)]
    for d in range(dim):
        for s in (1.0, -1.0):
            e = np.zeros(dim)
            e[d] = s * step
            basis.append(e)
    if n_controls > len(basis):
        raise ValueError(f"at most {len(basis)} lattice moves in {dim}-D")
    return basis[:n_controls]


def random_instance(
    seed: int,
    n_y: int = 2,
    n_controls: int = 3,
    *,
    lambda_w_min: float = 0.1,
    dim: int = 1,
    step: float = 1.0,
    n_sensors: int | None = None,
    modulation: float = 0.4,
    frequency: float = 1.0,
) -> RandomInstance:
    """Draw one lattice instance; identical ``seed`` gives an identical instance."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n_y, n_y))
    A *= rng.uniform(0.8, 1.1) / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-12)
    lam = rng.uniform(lambda_w_min, 3.0 * lambda_w_min)
    W = _spd(rng, n_y, 0.2) + lam * np.eye(n_y)
    target = LinearTargetModel(A, W)
    sigma0 = _spd(rng, n_y, 1.0) + 0.2 * np.eye(n_y)

    K = n_sensors or int(rng.integers(1, n_y + 1))
    h = rng.standard_normal((K, n_y)) * rng.uniform(0.5, 2.0)
    c = rng.uniform(0.0, modulation, size=K)
    w = rng.standard_normal((K, dim)) * frequency
    phi = rng.uniform(0.0, 2.0 * np.pi, size=K)
    L_m = float(np.max(c * np.linalg.norm(w, axis=1) / (1.0 - c)))

    moves = _moves(n_controls, dim, step)
    x0 = SensorState(tuple(np.zeros(dim)))

    def motion(x: SensorState, u: int) -> SensorState:
        return SensorState(tuple(x.array + moves[u]))

    def observe(x: SensorState) -> LinearObservation:
        s = 1.0 + c * np.sin(w @ x.array + phi)
        return LinearObservation(np.sqrt(s)[:, None] * h, np.eye(K))

    scenario = LinearScenario(motion, list(range(n_controls)), target, observe, x0, sigma0, name="random-lattice")
    params = dict(n_y=n_y, n_controls=n_controls, dim=dim, step=step, lambda_w=target.lambda_w_min)
    return RandomInstance(scenario, 1.0, L_m, seed, params)


def distinct_state_instance(seed: int, n_y: int = 2, n_controls: int = 3) -> LinearScenario:
    """Instance whose reachable states never coincide (``x' = (|U|+1) x + u + 1``)."""
    inst = random_instance(seed, n_y, n_controls)
    base = n_controls + 1
    sc = inst.scenario

    def motion(x: SensorState, u: int) -> SensorState:
        return SensorState((base * x.coords[0] + u + 1.0,))

    def observe(x: SensorState):
        return sc.observe(SensorState((np.log1p(x.coords[0]),)))

    return LinearScenario(motion, sc.controls, sc.target, observe, sc.x0, sc.sigma0, name="random-distinct")
