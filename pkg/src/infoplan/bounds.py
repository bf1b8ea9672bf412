"""Suboptimality bounds for reduced value iteration.

With ``beta`` the peak eigenvalue of the optimal covariance sequence and
``lam`` the smallest eigenvalue of W:

    eta     = beta / (beta + lam)
    zeta_t  = prod_{tau=1}^{t-1} (1 + sum_{s=1}^{tau} L_f^s L_m delta)
    Delta_T = (n_y / lam) (1 + (beta / lam) sum_{tau=1}^{T-1} (zeta_T / zeta_tau) eta^(T - tau))
    gap    <= (zeta_T - 1) (V* - log det W) + eps Delta_T

For ``delta = 0`` every ``zeta`` is 1 and ``Delta_T`` has the closed form
``(n_y / lam) (1 + (beta / lam)^2 (1 - eta^(T-1)))``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import BoundInapplicable
from .search import LinearScenario, metric_arrays

EMPIRICAL_WARNING = "empirical lower bound on the Lipschitz constants; the (eps, delta) bound may be optimistic"


@dataclass(frozen=True)
class BoundInputs:
    beta_star: float
    lambda_w_min: float
    n_y: int
    T: int
    epsilon: float = 0.0
    delta: float = 0.0
    L_f: float = 0.0
    L_m: float = 0.0
    logdet_W: float = float("nan")

    def validate(self) -> None:
        if not self.lambda_w_min > 0:
            raise BoundInapplicable("bound inapplicable: W is singular (lambda_min(W) = 0)")
        if not (0 < self.beta_star < math.inf):
            raise BoundInapplicable(f"beta_star must be positive and finite, got {self.beta_star}")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.epsilon < 0 or self.delta < 0 or self.L_f < 0 or self.L_m < 0:
            raise ValueError("epsilon, delta, L_f and L_m must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def eta_star(beta_star: float, lambda_w_min: float) -> float:
    if beta_star <= 0 or lambda_w_min <= 0:
        raise ValueError("beta_star and lambda_w_min must be positive")
    return beta_star / (beta_star + lambda_w_min)


def delta_T_eps(inputs: BoundInputs) -> float:
    """Closed-form ``Delta_T`` for ``delta = 0``."""
    inputs.validate()
    lam, beta = inputs.lambda_w_min, inputs.beta_star
    eta = eta_star(beta, lam)
    return (inputs.n_y / lam) * (1.0 + (beta / lam) ** 2 * (1.0 - eta ** (inputs.T - 1)))


def log_zeta(L_f: float, L_m: float, delta: float, t: int) -> float:
    if t < 1:
        raise ValueError("t must be >= 1")
    total, inner, power = 0.0, 0.0, 1.0
    for _ in range(1, t):
        power *= L_f
        inner += power * L_m * delta
        total += math.log1p(inner)
    return total


def zeta(L_f: float, L_m: float, delta: float, t: int) -> float:
    """Product ``prod_{tau<t} (1 + sum_{s<=tau} L_f^s L_m delta)``; 1 for ``delta = 0``."""
    lz = log_zeta(L_f, L_m, delta, t)
    return math.exp(lz) if lz < 709.0 else math.inf


def delta_T(inputs: BoundInputs) -> float:
    """``Delta_T`` including the ``zeta_T / zeta_tau`` weights."""
    inputs.validate()
    if inputs.delta == 0 or inputs.L_m == 0:
        return delta_T_eps(inputs)
    lam, beta, T = inputs.lambda_w_min, inputs.beta_star, inputs.T
    eta = eta_star(beta, lam)
    lz_T = log_zeta(inputs.L_f, inputs.L_m, inputs.delta, T)
    acc = 0.0
    for tau in range(1, T):
        lz = lz_T - log_zeta(inputs.L_f, inputs.L_m, inputs.delta, tau) + (T - tau) * math.log(eta)
        acc += math.exp(lz) if lz < 709.0 else math.inf
    return (inputs.n_y / lam) * (1.0 + (beta / lam) * acc)


def bound_eps_delta(inputs: BoundInputs, V_star: float) -> float:
    """Upper bound on ``V_rvi - V_star``."""
    inputs.validate()
    if inputs.delta == 0 or inputs.L_m == 0:
        return inputs.epsilon * delta_T_eps(inputs) if inputs.epsilon > 0 else 0.0
    if math.isnan(inputs.logdet_W):
        raise ValueError("logdet_W is required when delta > 0")
    if V_star < inputs.logdet_W - 1e-9:
        raise ValueError(f"V_star={V_star} below log det W={inputs.logdet_W}; optimal covariance must dominate W")
    z = zeta(inputs.L_f, inputs.L_m, inputs.delta, inputs.T)
    drift = (z - 1.0) * max(V_star - inputs.logdet_W, 0.0)
    return drift + (inputs.epsilon * delta_T(inputs) if inputs.epsilon > 0 else 0.0)


def peak_error(covs: Sequence[np.ndarray]) -> float:
    """Largest eigenvalue over a covariance sequence."""
    if len(covs) == 0:
        raise ValueError("empty covariance sequence")
    return float(max(np.linalg.eigvalsh(c)[-1] for c in covs))


@dataclass(frozen=True)
class LipschitzEstimate:
    L_f: float
    L_m: float
    pairs: int
    skipped: int
    empirical: bool = True
    warning: str = EMPIRICAL_WARNING


def _dominance_ratio(m1: np.ndarray, m2: np.ndarray, rtol: float = 1e-10) -> float:
    """Smallest ``s`` with ``m1 <= s m2`` (``inf`` if the ranges disagree)."""
    w, v = np.linalg.eigh(m2)
    thresh = rtol * max(w[-1], 1e-300)
    keep = w > thresh
    v_in, v_out = v[:, keep], v[:, ~keep]
    if v_out.shape[1] and np.max(np.abs(v_out.T @ m1 @ v_out), initial=0.0) > rtol * max(np.max(np.abs(m1)), 1e-300):
        return math.inf
    if not np.any(keep):
        return 0.0 if np.allclose(m1, 0) else math.inf
    s = v_in / np.sqrt(w[keep])
    return float(np.linalg.eigvalsh(s.T @ m1 @ s)[-1])


def estimate_lipschitz(
    scenario: LinearScenario,
    sample_count: int,
    seed: int,
    *,
    sampler=None,
    scale: float = 5.0,
) -> LipschitzEstimate:
    """Empirical maxima of the motion and observation continuity ratios.

    Pairs are drawn sequentially from ``seed`` so a larger ``sample_count``
    extends the same sample. Results are lower bounds on the true constants.
    """
    rng = np.random.default_rng(seed)
    x0 = scenario.x0.array
    if sampler is None:
        def sampler(r):
            return x0 + r.normal(0.0, scale, size=x0.shape)
    L_f = L_m = 0.0
    skipped = 0
    mask, weights = scenario.angular_mask, scenario.weights
    for _ in range(sample_count):
        a = np.asarray(sampler(rng), dtype=float)
        b = np.asarray(sampler(rng), dtype=float)
        a = scenario.state(a).array
        b = scenario.state(b).array
        d = float(metric_arrays(a, b, mask, weights))
        if d == 0.0:
            continue
        for u in range(len(scenario.controls)):
            fa = scenario.step_states(a[None], u)[0]
            fb = scenario.step_states(b[None], u)[0]
            L_f = max(L_f, float(metric_arrays(fa, fb, mask, weights)) / d)
        M = scenario.infos(1, np.stack([a, b]), np.stack([a, b]))
        if not np.any(M[0]) or not np.any(M[1]):
            skipped += 1
            continue
        s = max(_dominance_ratio(M[0], M[1]), _dominance_ratio(M[1], M[0]))
        L_m = max(L_m, max(s - 1.0, 0.0) / d)
    return LipschitzEstimate(L_f, L_m, sample_count, skipped)


__all__ = [
    "BoundInputs",
    "LipschitzEstimate",
    "bound_eps_delta",
    "delta_T",
    "delta_T_eps",
    "estimate_lipschitz",
    "eta_star",
    "log_zeta",
    "peak_error",
    "zeta",
]
