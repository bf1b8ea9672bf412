"""epsilon-algebraic redundancy of a covariance against a finite set.

``Sigma`` is eps-redundant w.r.t. ``{Sigma_i}`` when some convex weights
``alpha`` give ``Sigma + eps I - sum_i alpha_i Sigma_i >= 0``. We decide it by
maximising the concave function

    f(alpha) = lambda_min(Sigma + eps I - sum_i alpha_i Sigma_i)

over the probability simplex. The solver keeps a certified bracket
``lower <= max f <= upper``:

* ``lower`` is ``f`` evaluated at the best weights seen so far;
* ``upper`` comes from weak duality: for any density matrix ``Z``
  (``Z >= 0``, ``tr Z = 1``), ``max f <= <S, Z> - min_i <Sigma_i, Z>``.

Cheap vertex checks settle most queries. The rest run a log-barrier
interior-point method on ``max t  s.t.  S - sum alpha_i Sigma_i - t I > 0``,
whose barrier Hessian gives ``Z`` for free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

INFINITY = math.inf
DEFAULT_TOL = 1e-7
MAX_ITER = 500


@dataclass(frozen=True)
class RedundancyQuery:
    candidate: np.ndarray
    reference_set: Sequence[np.ndarray]
    epsilon: float = 0.0
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        if not (self.epsilon >= 0):
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        n = np.shape(self.candidate)
        for ref in self.reference_set:
            if np.shape(ref) != n:
                raise ValueError("reference matrices must match the candidate's shape")


def _dedupe(refs: Sequence[np.ndarray]) -> tuple[list[np.ndarray], list[int]]:
    seen: set[bytes] = set()
    unique, where = [], []
    for i, r in enumerate(refs):
        r = np.ascontiguousarray(r, dtype=float)
        key = r.tobytes()
        if key not in seen:
            seen.add(key)
            unique.append(r)
            where.append(i)
    return unique, where


def _sym(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + np.swapaxes(x, -1, -2))


def _dual_bound(S: np.ndarray, R: np.ndarray, Z: np.ndarray) -> float:
    Z = _sym(Z)
    Z = Z / np.trace(Z)
    return float(np.vdot(S, Z) - np.min(np.einsum("kij,ij->k", R, Z)))


def _barrier(S, R, alpha, lower, best_alpha, target, stop, max_iter):
    """Log-barrier ascent; returns the updated ``(lower, best_alpha, upper, iters)``."""
    n, K = S.shape[0], R.shape[0]
    eye = np.eye(n)
    Rall = np.concatenate([eye[None], R])  # d X / d z_k = -Rall[k], z = (t, alpha)
    lam = float(np.linalg.eigvalsh(_sym(S - np.tensordot(alpha, R, axes=1)))[0])
    scale = max(1.0, float(np.max(np.abs(Rall))), abs(lam))
    t = lam - scale
    mu = scale
    upper = math.inf
    a_eq = np.r_[0.0, np.ones(K)]
    iters = 0

    def phi(t_, al_):
        X = _sym(S - np.tensordot(al_, R, axes=1) - t_ * eye)
        try:
            L = np.linalg.cholesky(X)
        except np.linalg.LinAlgError:
            return -math.inf, None
        if np.any(al_ <= 0):
            return -math.inf, None
        return t_ / mu + 2.0 * np.sum(np.log(np.diag(L))) + np.sum(np.log(al_)), X

    while iters < max_iter:
        # centering for the current mu
        for _ in range(50):
            iters += 1
            val, X = phi(t, alpha)
            if X is None:
                break
            Xi = np.linalg.inv(X)
            P = np.einsum("ij,kjl->kil", Xi, Rall)  # X^-1 R_k
            g = -np.einsum("kii->k", P)
            g[0] += 1.0 / mu
            g[1:] += 1.0 / alpha
            H = -np.einsum("kij,lji->kl", P, P)
            H[1:, 1:] -= np.diag(1.0 / alpha**2)
            kkt = np.zeros((K + 2, K + 2))
            kkt[: K + 1, : K + 1] = H
            kkt[: K + 1, K + 1] = a_eq
            kkt[K + 1, : K + 1] = a_eq
            try:
                sol = np.linalg.solve(kkt, np.r_[-g, 0.0])
            except np.linalg.LinAlgError:
                break
            dz = sol[: K + 1]
            decrement = float(-dz @ H @ dz)
            if decrement < 1e-10 or iters >= max_iter:
                break
            step = 1.0
            while step > 1e-12:
                new_val, _ = phi(t + step * dz[0], alpha + step * dz[1:])
                if new_val >= val + 0.25 * step * float(g @ dz):
                    break
                step *= 0.5
            else:
                break
            t += step * dz[0]
            alpha = alpha + step * dz[1:]
            # the equality constraint drifts in floating point; a sum below 1 would inflate lambda
            alpha = alpha / alpha.sum()
        X = _sym(S - np.tensordot(alpha, R, axes=1))
        lam = float(np.linalg.eigvalsh(X)[0])
        if lam > lower:
            lower, best_alpha = lam, alpha.copy()
        upper = min(upper, _dual_bound(S, R, np.linalg.inv(X - t * eye)))
        if upper - lower < stop:
            break
        if target is not None and (lower >= target or upper < target):
            break
        mu *= 0.1
        if mu < 1e-16 * scale:
            break
    return lower, best_alpha, upper, iters


def max_min_eig_on_simplex(
    query: RedundancyQuery,
    *,
    target: float | None = None,
    max_iter: int = MAX_ITER,
) -> tuple[float, np.ndarray]:
    """Maximise ``lambda_min(Sigma + eps I - sum alpha_i Sigma_i)`` over the simplex.

    Returns ``(lambda_star, alpha_star)`` with ``alpha_star`` aligned to
    ``query.reference_set``. The optimum is bracketed to within ``tol / 10``.
    If ``target`` is given the search stops as soon as ``lambda_star >= target``
    is reached or proven impossible.
    """
    refs, where = _dedupe(query.reference_set)
    n_refs = len(query.reference_set)
    if not refs:
        return -math.inf, np.zeros(0)
    if math.isinf(query.epsilon):
        alpha = np.zeros(n_refs)
        alpha[0] = 1.0
        return math.inf, alpha
    C = np.asarray(query.candidate, dtype=float)
    n = C.shape[0]
    S = C + query.epsilon * np.eye(n)
    R = np.stack(refs)
    K = len(refs)

    def expand(a: np.ndarray) -> np.ndarray:
        full = np.zeros(n_refs)
        full[where] = a
        return full

    D = _sym(S - R)
    w = np.linalg.eigvalsh(D)
    k = int(np.argmax(w[:, 0]))
    lower = float(w[k, 0])
    best_alpha = np.zeros(K)
    best_alpha[k] = 1.0
    if K == 1 or (target is not None and lower >= target):
        return lower, expand(best_alpha)

    # rank-one duals from each vertex's bottom eigenvector
    u = np.linalg.eigh(D)[1][:, :, 0]
    quad_S = np.einsum("ki,ij,kj->k", u, S, u)
    quad_R = np.einsum("ki,lij,kj->kl", u, R, u)
    upper = float(np.min(quad_S - quad_R.min(axis=1)))
    stop = query.tol / 10.0
    if upper - lower < stop or (target is not None and upper < target):
        return lower, expand(best_alpha)

    lower, best_alpha, _, _ = _barrier(
        S, R, np.full(K, 1.0 / K), lower, best_alpha, target, stop, max_iter
    )
    return lower, expand(best_alpha)


def is_eps_redundant(query: RedundancyQuery) -> bool:
    """True iff ``candidate + eps I`` dominates a convex combination of the set.

    ``eps = INFINITY`` makes any non-empty set dominate; an empty set never
    does.
    """
    if len(query.reference_set) == 0:
        return False
    if math.isinf(query.epsilon):
        return True
    lam, _ = max_min_eig_on_simplex(query, target=-query.tol)
    return lam >= -query.tol
