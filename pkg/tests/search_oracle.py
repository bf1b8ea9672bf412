"""Node-by-node reference planners built only on the Riccati step.

They share no code with the batched planners: every node carries its own
state and covariance, neighbours are found by scanning all retained nodes,
and redundancy is asked one query at a time.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from infoplan.kalman import logdet, riccati_step
from infoplan.redundancy import RedundancyQuery, is_eps_redundant


def _child(sc, t, x, cov, u):
    y = sc.motion(x, u)
    return y, riccati_step(cov, sc.observation(t, y), sc.target)


def enumerate_costs(sc, T: int) -> dict[tuple, float]:
    """Final log det of every control sequence."""
    out = {}
    for seq in itertools.product(range(len(sc.controls)), repeat=T):
        x, cov = sc.x0, sc.sigma0
        for t, u in enumerate(seq, start=1):
            x, cov = _child(sc, t, x, cov, u)
        out[seq] = logdet(cov)
    return out


def greedy_costs(sc, T: int) -> tuple[list[int], float]:
    x, cov, seq = sc.x0, sc.sigma0, []
    for t in range(1, T + 1):
        kids = [_child(sc, t, x, cov, u) for u in range(len(sc.controls))]
        costs = [logdet(c) for _, c in kids]
        u = min(range(len(costs)), key=lambda k: (costs[k] > min(costs) + 1e-10, k))
        seq.append(u)
        x, cov = kids[u]
    return seq, logdet(cov)


def _dist(a, b) -> float:
    d = np.array(a.coords) - np.array(b.coords)
    mask = np.array(a.angular_mask)
    d[mask] = (d[mask] + math.pi) % (2 * math.pi) - math.pi
    return float(np.sqrt(np.sum(np.array(a.weights) * d * d)))


def reference_rvi(sc, T: int, eps: float, delta: float, tol: float = 1e-7):
    """Pure pruned tree: returns ``(best leaf cost, nodes per level)``."""
    level = [(sc.x0, sc.sigma0, logdet(sc.sigma0))]
    sizes = [1]
    for t in range(1, T + 1):
        kids = []
        for x, cov, _ in level:
            for u in range(len(sc.controls)):
                y, c = _child(sc, t, x, cov, u)
                kids.append((y, c, logdet(c)))
        kids.sort(key=lambda n: n[2])
        kept = []
        for node in kids:
            near = [k[1] for k in kept if _dist(k[0], node[0]) <= delta]
            if near and (math.isinf(eps) or is_eps_redundant(RedundancyQuery(node[1], near, eps, tol))):
                continue
            kept.append(node)
        level = kept
        sizes.append(len(kept))
    return min(n[2] for n in level), sizes
