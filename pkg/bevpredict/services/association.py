"""
Optimal one-to-one association of extracted positions with targets
"""

import logging
import math
from typing import List, Sequence, Tuple

import numpy as np

from bevpredict.models import Assignment, Pair, PositionEstimate, VehicleState
from bevpredict.utils.errors import InvalidArgumentError

logger = logging.getLogger(__name__)


def hungarian(cost: np.ndarray) -> List[Tuple[int, int]]:
    """
    Minimum-cost matching of size min(n, m) for an n x m cost matrix

    Shortest augmenting paths with row/column potentials; a wide matrix is
    solved as is, a tall one through its transpose.

    Returns:
        (row, col) pairs sorted by row
    """

    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise InvalidArgumentError(f"cost must be a 2-D matrix, got shape {cost.shape}")
    n, m = cost.shape
    if n == 0 or m == 0:
        return []
    if not np.all(np.isfinite(cost)):
        raise InvalidArgumentError("cost matrix holds non-finite entries")
    if n > m:
        return sorted((r, c) for c, r in hungarian(cost.T))

    # 1-based potentials, p[j] = row matched to column j (0 = free)
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)

        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            reduced = cost[i0 - 1] - u[i0] - v[1:]

            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0

            candidates = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(candidates)) + 1
            delta = candidates[j1 - 1]

            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta

            j0 = j1
            if p[j0] == 0:
                break

        # Unwind the augmenting path
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    return sorted((int(p[j]) - 1, j - 1) for j in range(1, m + 1) if p[j] != 0)


def associate(
    estimates: Sequence[PositionEstimate],
    targets: Sequence[VehicleState],
    max_distance_m: float = math.inf
) -> Assignment:
    """
    Match estimates to target vehicle centers by Euclidean distance

    Pairs farther apart than `max_distance_m` are dropped after matching and
    both sides reported as unmatched.
    """

    n, m = len(estimates), len(targets)
    est_xy = np.array([(e.x, e.y) for e in estimates], dtype=np.float64).reshape(n, 2)
    tgt_xy = np.array([(t.cx, t.cy) for t in targets], dtype=np.float64).reshape(m, 2)
    diff = est_xy[:, None, :] - tgt_xy[None, :, :]
    cost = np.sqrt((diff ** 2).sum(axis=-1))

    pairs: List[Pair] = []
    for i, j in hungarian(cost):
        if cost[i, j] > max_distance_m:
            continue
        pairs.append(Pair(
            estimate=i,
            target=j,
            distance=float(cost[i, j]),
            dx=float(diff[i, j, 0]),
            dy=float(diff[i, j, 1]),
        ))

    matched_est = {pair.estimate for pair in pairs}
    matched_tgt = {pair.target for pair in pairs}
    return Assignment(
        pairs=pairs,
        unmatched_estimates=[i for i in range(n) if i not in matched_est],
        unmatched_targets=[j for j in range(m) if j not in matched_tgt],
    )
