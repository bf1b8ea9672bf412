"""Random instance generators shared by the test modules."""

from __future__ import annotations

import numpy as np

from infoplan.kalman import LinearTargetModel


def rand_spd(rng: np.random.Generator, n: int, floor: float = 0.1) -> np.ndarray:
    B = rng.standard_normal((n, n))
    return B @ B.T / n + floor * np.eye(n)


def rand_psd(rng: np.random.Generator, n: int, rank: int | None = None) -> np.ndarray:
    B = rng.standard_normal((n, rank or n))
    return B @ B.T / n


def rand_model(rng: np.random.Generator, n: int, lam: float = 0.1) -> LinearTargetModel:
    A = rng.standard_normal((n, n))
    A *= rng.uniform(0.7, 1.2) / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-12)
    return LinearTargetModel(A, rand_psd(rng, n) + lam * np.eye(n))


def rand_path(rng: np.random.Generator, n: int, length: int) -> list[np.ndarray]:
    """Information matrices, some of them rank deficient or zero."""
    out = []
    for _ in range(length):
        k = int(rng.integers(0, n + 1))
        out.append(rand_psd(rng, n, k) * rng.uniform(0.1, 5.0) if k else np.zeros((n, n)))
    return out


def min_eig(x: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (x + x.T))[0])
