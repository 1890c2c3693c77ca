"""Shared fixtures and independent oracle helpers."""

from __future__ import annotations

import math
from itertools import permutations

import numpy as np
import pytest

from depthgroup.geometry import CameraIntrinsics, DepthFrame


@pytest.fixture
def small_intrinsics():
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=32.0, cy=24.0, width=64, height=48)


def make_plane_frame(intrinsics, plane: str, value: float, frame_id: str = "plane") -> DepthFrame:
    """Analytic frame: 'ground' plane at y=value (<0) or fronto 'wall' at z=value."""
    h, w = intrinsics.height, intrinsics.width
    vs = np.arange(h, dtype=np.float64)[:, None]
    if plane == "wall":
        depth = np.full((h, w), float(value))
    elif plane == "ground":
        dv = vs - intrinsics.cy
        z = np.where(dv > 0.5, -value * intrinsics.fy / np.maximum(dv, 0.5), 1000.0)
        depth = np.broadcast_to(z, (h, w)).copy()
    else:
        raise ValueError(plane)
    rgb = np.full((h, w, 3), 127, dtype=np.uint8)
    return DepthFrame(rgb=rgb, depth=depth, intrinsics=intrinsics, frame_id=frame_id)


# ---------------------------------------------------------------------------
# map-equation oracles, independent of the library implementation
# ---------------------------------------------------------------------------


def plogp2(x: float) -> float:
    return x * math.log2(x) if x > 0 else 0.0


def oracle_map_equation(n: int, edges, weights, assignment) -> float:
    """Straightforward textbook evaluation of the two-level map equation."""
    two_w = 2.0 * sum(weights)
    if two_w <= 0:
        return 0.0
    strength = [0.0] * n
    for (i, j), w in zip(edges, weights):
        strength[i] += w
        strength[j] += w
    p = [s / two_w for s in strength]
    k = max(assignment) + 1
    p_mod = [0.0] * k
    for v in range(n):
        p_mod[assignment[v]] += p[v]
    q_mod = [0.0] * k
    for (i, j), w in zip(edges, weights):
        if assignment[i] != assignment[j]:
            q_mod[assignment[i]] += w / two_w
            q_mod[assignment[j]] += w / two_w
    q_tot = sum(q_mod)
    return (
        plogp2(q_tot)
        - 2.0 * sum(plogp2(q) for q in q_mod)
        + sum(plogp2(q_mod[m] + p_mod[m]) for m in range(k))
        - sum(plogp2(pv) for pv in p)
    )


def oracle_exhaustive_min(n: int, edges, weights):
    """Global minimum of the map equation by enumerating every partition
    with incremental per-block statistics (recursion over nodes)."""
    two_w = 2.0 * sum(weights)
    strength = [0.0] * n
    link = [[0.0] * n for _ in range(n)]
    for (i, j), w in zip(edges, weights):
        strength[i] += w
        strength[j] += w
        link[i][j] += w
        link[j][i] += w
    p_const = sum(plogp2(s / two_w) for s in strength)

    assign = [-1] * n
    block_mass = [0.0] * (n + 1)
    block_intra = [0.0] * (n + 1)
    best = [math.inf, None]

    def evaluate(nblocks: int) -> float:
        q_tot = 0.0
        acc = 0.0
        for b in range(nblocks):
            q = (block_mass[b] - 2.0 * block_intra[b]) / two_w
            pm = block_mass[b] / two_w
            q_tot += q
            acc += -2.0 * plogp2(q) + plogp2(q + pm)
        return plogp2(q_tot) + acc - p_const

    def rec(v: int, nblocks: int):
        if v == n:
            val = evaluate(nblocks)
            if val < best[0]:
                best[0] = val
                best[1] = assign.copy()
            return
        row = link[v]
        to_block = [0.0] * nblocks
        for u in range(v):
            to_block[assign[u]] += row[u]
        for b in range(nblocks):
            assign[v] = b
            block_mass[b] += strength[v]
            block_intra[b] += to_block[b]
            rec(v + 1, nblocks)
            block_mass[b] -= strength[v]
            block_intra[b] -= to_block[b]
        assign[v] = nblocks
        block_mass[nblocks] = strength[v]
        block_intra[nblocks] = 0.0
        rec(v + 1, nblocks + 1)
        assign[v] = -1

    rec(0, 0)
    return best[0], best[1]


def oracle_greedy_merge(n, edges, weights, assignment, desired):
    """Merge the community pair with the smallest map-equation increase
    until at most ``desired`` communities remain; ties to lowest id pair."""
    assignment = list(assignment)
    while max(assignment) + 1 > desired:
        k = max(assignment) + 1
        best = (math.inf, None)
        for a in range(k):
            for b in range(a + 1, k):
                merged = [a if x == b else x for x in assignment]
                merged = _compact(merged)
                val = oracle_map_equation(n, edges, weights, merged)
                if val < best[0] - 1e-15:
                    best = (val, merged)
        assignment = best[1]
    return _compact(assignment)


def _compact(assignment):
    remap = {}
    out = []
    for a in assignment:
        if a not in remap:
            remap[a] = len(remap)
        out.append(remap[a])
    return out


def adjusted_rand_index(a, b) -> float:
    from collections import Counter
    from math import comb

    n = len(a)
    ct = Counter(zip(a, b))
    sum_ij = sum(comb(v, 2) for v in ct.values())
    sum_a = sum(comb(v, 2) for v in Counter(a).values())
    sum_b = sum(comb(v, 2) for v in Counter(b).values())
    expected = sum_a * sum_b / comb(n, 2)
    maximum = (sum_a + sum_b) / 2.0
    return (sum_ij - expected) / (maximum - expected)


def brute_force_assignment_max(score: np.ndarray) -> float:
    """Best one-to-one assignment value by enumerating all injections."""
    n_rows, n_cols = score.shape
    if n_rows <= n_cols:
        return max(
            sum(score[i, perm[i]] for i in range(n_rows))
            for perm in permutations(range(n_cols), n_rows)
        )
    return brute_force_assignment_max(score.T)
