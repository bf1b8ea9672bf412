"""Simplex grid-search oracle for the max-min-eigenvalue problem."""

from __future__ import annotations

import numpy as np

from helpers import rand_psd, rand_spd
from infoplan.redundancy import RedundancyQuery

GRID_RES = 200


def simplex_grid(K: int, res: int = GRID_RES) -> np.ndarray:
    if K == 1:
        return np.ones((1, 1))
    if K == 2:
        a = np.arange(res + 1) / res
        return np.c_[a, 1 - a]
    pts = [(i, j, res - i - j) for i in range(res + 1) for j in range(res + 1 - i)]
    return np.array(pts, dtype=float) / res


def grid_max_min_eig(query: RedundancyQuery) -> float:
    C = np.asarray(query.candidate, dtype=float)
    R = np.stack([np.asarray(r, dtype=float) for r in query.reference_set])
    G = simplex_grid(len(R))
    X = C + query.epsilon * np.eye(C.shape[0]) - np.einsum("gk,kij->gij", G, R)
    return float(np.linalg.eigvalsh(X)[:, 0].max())


def random_query(rng: np.random.Generator, near_boundary: float = 0.5) -> RedundancyQuery:
    """Random query; a ``near_boundary`` share sits close to the redundancy boundary.

    Near-boundary candidates can be redundant only through a narrow range of
    weights that the 1/200 grid may step over.
    """
    n, K = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    refs = [rand_spd(rng, n, 0.05) for _ in range(K)]
    eps = float(rng.choice([0.0, 0.05, 0.2, 0.5]))
    if rng.random() >= near_boundary:
        cand = rand_spd(rng, n, 0.05)
    else:
        alpha = rng.dirichlet(np.ones(K))
        mix = sum(a * r for a, r in zip(alpha, refs))
        shift = rng.uniform(-0.05, 0.05) - eps
        cand = mix + shift * np.eye(n) + 0.02 * rand_psd(rng, n)
        cand = 0.5 * (cand + cand.T)
    return RedundancyQuery(cand, refs, eps)
