"""Covariance algebra and the Kalman-filter Riccati maps.

Every function accepts either a single ``(n, n)`` matrix or a stack of shape
``(..., n, n)``; the search module relies on the stacked form to expand a whole
tree level in one call. Per-matrix results are identical between the two
forms, which is what makes plan replay bit-for-bit reproducible.

The update uses the gain form ``(I + Sigma M)^-1 Sigma`` so that singular
priors are handled without inverting ``Sigma``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PSD_TOL = 1e-9
SYM_TOL = 1e-10


class InvalidObservationError(ValueError):
    """Observation noise covariance is not positive definite."""


class NotPositiveDefiniteError(ValueError):
    """A covariance that must be positive definite is not."""


def symmetrize(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + np.swapaxes(x, -1, -2))


def is_symmetric(x: np.ndarray, rtol: float = SYM_TOL) -> bool:
    x = np.asarray(x, dtype=float)
    scale = max(1.0, float(np.max(np.abs(x), initial=0.0)))
    return bool(np.max(np.abs(x - np.swapaxes(x, -1, -2)), initial=0.0) <= rtol * scale)


def min_eig(x: np.ndarray) -> np.ndarray | float:
    return np.linalg.eigvalsh(symmetrize(np.asarray(x, dtype=float)))[..., 0]


def is_psd(x: np.ndarray, tol: float = PSD_TOL) -> bool:
    """Scale-relative PSD test: ``lambda_min >= -tol * (1 + lambda_max)``."""
    w = np.linalg.eigvalsh(symmetrize(np.asarray(x, dtype=float)))
    return bool(np.all(w[..., 0] >= -tol * (1.0 + np.abs(w[..., -1]))))


def loewner_leq(a: np.ndarray, b: np.ndarray, tol: float = PSD_TOL) -> bool:
    """``a <= b`` in the Loewner order, i.e. ``lambda_min(b - a) >= -tol``."""
    return bool(np.all(min_eig(np.asarray(b) - np.asarray(a)) >= -tol))


@dataclass(frozen=True)
class LinearTargetModel:
    """Linear target dynamics ``y' = A y + w``, ``w ~ N(0, W)``."""

    A: np.ndarray
    W: np.ndarray
    lambda_w_min: float = field(init=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        W = symmetrize(np.array(self.W, dtype=float))
        if A.ndim != 2 or A.shape[0] != A.shape[1] or W.shape != A.shape:
            raise ValueError(f"A and W must be square and equal-sized, got {A.shape} and {W.shape}")
        if not is_psd(W):
            raise ValueError("process noise W must be positive semidefinite")
        A.flags.writeable = False
        W.flags.writeable = False
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "lambda_w_min", float(np.linalg.eigvalsh(W)[0]))

    @property
    def dim(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class LinearObservation:
    """Observation ``z = H y + v``, ``v ~ N(0, V)``.

    An observation with zero rows is *absent*: it carries no information and
    leaves the covariance untouched in the update step.
    """

    H: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.array(self.H, dtype=float))
        V = np.atleast_2d(np.array(self.V, dtype=float))
        if H.shape[0] == 0:
            V = np.zeros((0, 0))
        if V.shape != (H.shape[0], H.shape[0]):
            raise ValueError(f"V must be {H.shape[0]}x{H.shape[0]}, got {V.shape}")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "V", V)

    @classmethod
    def absent(cls, n_y: int) -> "LinearObservation":
        return cls(np.zeros((0, n_y)), np.zeros((0, 0)))

    @property
    def is_absent(self) -> bool:
        return self.H.shape[0] == 0


def info_matrix(obs: LinearObservation) -> np.ndarray:
    """Sensor information matrix ``H^T V^-1 H``."""
    n_y = obs.H.shape[1]
    if obs.is_absent:
        return np.zeros((n_y, n_y))
    V = obs.V
    if not is_symmetric(V):
        raise InvalidObservationError("observation noise V is not symmetric")
    try:
        L = np.linalg.cholesky(symmetrize(V))
    except np.linalg.LinAlgError as exc:
        raise InvalidObservationError("observation noise V is not positive definite") from exc
    d = np.diag(L)
    if d.min() <= 1e-12 * d.max():
        raise InvalidObservationError("observation noise V is numerically singular")
    G = np.linalg.solve(L, obs.H)
    return symmetrize(G.T @ G)


def gain(sigma: np.ndarray, m: np.ndarray) -> np.ndarray:
    """``C(Sigma) = (I + Sigma M)^-1``."""
    n = sigma.shape[-1]
    eye = np.broadcast_to(np.eye(n), sigma.shape)
    return np.linalg.solve(eye + sigma @ m, eye)


def riccati_update(sigma: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Measurement update ``(Sigma^-1 + M)^-1`` in the gain form."""
    sigma = np.asarray(sigma, dtype=float)
    n = sigma.shape[-1]
    lhs = np.eye(n) + sigma @ m
    return symmetrize(np.linalg.solve(lhs, sigma))


def predict_cov(sigma: np.ndarray, A: np.ndarray, W: np.ndarray) -> np.ndarray:
    return symmetrize(A @ sigma @ A.T + W)


def riccati_predict(sigma: np.ndarray, model: LinearTargetModel) -> np.ndarray:
    """Time update ``A Sigma A^T + W``."""
    return predict_cov(np.asarray(sigma, dtype=float), model.A, model.W)


def step_info(sigma: np.ndarray, m: np.ndarray, A: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Update-then-predict with a precomputed information matrix (stack-aware)."""
    return predict_cov(riccati_update(sigma, m), A, W)


def riccati_step(sigma: np.ndarray, obs: LinearObservation, model: LinearTargetModel) -> np.ndarray:
    """One Riccati map: update with ``obs``, then predict with ``model``."""
    return step_info(np.asarray(sigma, dtype=float), info_matrix(obs), model.A, model.W)


def _as_info(item) -> np.ndarray:
    return info_matrix(item) if isinstance(item, LinearObservation) else np.asarray(item, dtype=float)


def t_step_map(path: Sequence, sigma: np.ndarray, model: LinearTargetModel) -> np.ndarray:
    """Compose the Riccati maps along ``path`` (observations or info matrices)."""
    out = np.asarray(sigma, dtype=float)
    for item in path:
        out = step_info(out, _as_info(item), model.A, model.W)
    return out


def directional_derivative(
    path: Sequence,
    sigma: np.ndarray,
    q: np.ndarray,
    model: LinearTargetModel,
    t: int | None = None,
) -> np.ndarray:
    """Derivative of the ``t``-step map at ``sigma`` in direction ``q``.

    Equals ``P Q P^T`` with ``P = A C_t ... A C_1`` where ``C_k`` is the gain
    evaluated at the covariance *entering* step ``k``.
    """
    t = len(path) if t is None else t
    if t < 1 or t > len(path):
        raise ValueError(f"t must lie in [1, {len(path)}], got {t}")
    cur = np.asarray(sigma, dtype=float)
    P = np.eye(cur.shape[-1])
    for item in path[:t]:
        m = _as_info(item)
        P = model.A @ gain(cur, m) @ P
        cur = step_info(cur, m, model.A, model.W)
    return symmetrize(P @ np.asarray(q, dtype=float) @ P.T)


def logdet(sigma: np.ndarray) -> np.ndarray | float:
    """Log-determinant via Cholesky; raises for non positive definite input."""
    try:
        L = np.linalg.cholesky(np.asarray(sigma, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("covariance is not positive definite") from exc
    d = np.diagonal(L, axis1=-2, axis2=-1)
    if np.any(d <= 0.0):
        raise NotPositiveDefiniteError("covariance is not positive definite")
    out = 2.0 * np.sum(np.log(d), axis=-1)
    return float(out) if np.ndim(out) == 0 else out
